#include "gridsweep/server_core.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace gridsweep {

const char* to_string(ServerRole role) {
  return role == ServerRole::Primary ? "primary" : "backup";
}

Json ClientRecord::to_json() const {
  return Json{{"client_id", client_id}, {"address", address},
              {"port", port},           {"handshaken", handshaken},
              {"created_at", created_at}, {"last_health", last_health},
              {"assigned", assigned},    {"outbound_seq", outbound_seq}};
}

ClientRecord ClientRecord::from_json(const Json& j) {
  ClientRecord rec;
  rec.client_id = j.at("client_id").get<std::string>();
  rec.address = j.at("address").get<std::string>();
  rec.port = j.at("port").get<int>();
  rec.handshaken = j.at("handshaken").get<bool>();
  rec.created_at = j.at("created_at").get<double>();
  rec.last_health = j.at("last_health").get<double>();
  rec.assigned = j.at("assigned").get<std::set<int64_t>>();
  rec.outbound_seq = j.at("outbound_seq").get<int64_t>();
  return rec;
}

ServerCore::ServerCore(ExperimentConfig config, std::string server_id,
                       std::vector<TaskDescriptor> tasks)
    : config_(std::move(config)), server_id_(std::move(server_id)) {
  ordered_ = order_tasks(std::move(tasks));
  for (std::size_t i = 0; i < ordered_.size(); ++i) {
    index_[ordered_[i].task_id] = i;
    status_[ordered_[i].task_id] = TaskStatus{};
  }
}

const TaskDescriptor* ServerCore::find_task(int64_t task_id) const {
  auto it = index_.find(task_id);
  if (it == index_.end()) return nullptr;
  return &ordered_[it->second];
}

TaskPhase ServerCore::phase_of(int64_t task_id) const {
  auto it = status_.find(task_id);
  if (it == status_.end()) throw std::out_of_range("unknown task");
  return it->second.phase;
}

void ServerCore::set_phase(int64_t task_id, TaskPhase phase,
                           const std::string& client) {
  auto& st = status_.at(task_id);
  if (!phase_transition_allowed(st.phase, phase)) {
    throw std::logic_error(std::string("illegal phase transition ") +
                           to_string(st.phase) + " -> " + to_string(phase));
  }
  st.phase = phase;
  st.client_id = client;
}

Envelope ServerCore::make_mirrored(ClientRecord& rec, MessageKind kind,
                                   Json body) {
  // Mirrored messages use the logical sender "server" so the primary's copy
  // and the backup's copy of the same logical message match for dedup.
  return Envelope{kind, "server", rec.outbound_seq++, std::move(body)};
}

Envelope ServerCore::control_message(MessageKind kind, Json body) {
  return Envelope{kind, server_id_, control_seq_++, std::move(body)};
}

std::vector<std::string> ServerCore::handshaken_client_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, rec] : clients_) {
    if (rec.handshaken) ids.push_back(id);
  }
  return ids;
}

// --- Primary-role message handling ------------------------------------------

Effects ServerCore::handle_client_message(const Envelope& env, double now) {
  return act_on_client_message(env, now, /*forward=*/true, /*replayed=*/false);
}

Effects ServerCore::act_on_client_message(const Envelope& env, double now,
                                          bool forward, bool replayed) {
  Effects fx;
  if (replayed) {
    fx.push_back(TraceFx{Json{{"dir", "recv"},
                              {"kind", to_string(env.kind)},
                              {"peer", env.sender_id},
                              {"seq", env.seq},
                              {"via", "replay"}}});
  }
  // Forward before acting: if this server dies mid-handling, the backup has
  // either this forward or the client's direct copy, never neither.
  if (forward && backup_ && backup_->handshaken &&
      env.kind != MessageKind::HealthUpdate &&
      env.kind != MessageKind::Handshake) {
    fx.push_back(SendToBackupFx{env});
  }
  switch (env.kind) {
    case MessageKind::Handshake: {
      Effects more = handle_client_handshake(env, now);
      fx.insert(fx.end(), more.begin(), more.end());
      break;
    }
    case MessageKind::HealthUpdate: {
      auto it = clients_.find(env.sender_id);
      if (it != clients_.end()) it->second.last_health = now;
      break;
    }
    case MessageKind::RequestTasks: {
      auto it = clients_.find(env.sender_id);
      if (it == clients_.end() || !it->second.handshaken) {
        fx.push_back(TraceFx{Json{{"event", "request_from_unknown_client"},
                                  {"peer", env.sender_id}}});
        break;
      }
      it->second.last_health = now;
      int count = 1;
      try {
        count = env.body.at("count").get<int>();
      } catch (const Json::exception&) {
        fx.push_back(ClientEventFx{env.sender_id, "malformed REQUEST_TASKS"});
        break;
      }
      if (count < 1) break;
      Effects more = assign_tasks(env.sender_id, count);
      fx.insert(fx.end(), more.begin(), more.end());
      break;
    }
    case MessageKind::Result: {
      Effects more = handle_result(env);
      fx.insert(fx.end(), more.begin(), more.end());
      break;
    }
    case MessageKind::ReportHardTask: {
      try {
        Hardness h = env.body.at("hardness").get<Hardness>();
        int64_t id = env.body.at("task_id").get<int64_t>();
        Effects more = register_timeout(h, id);
        fx.insert(fx.end(), more.begin(), more.end());
      } catch (const Json::exception&) {
        fx.push_back(
            ClientEventFx{env.sender_id, "malformed REPORT_HARD_TASK"});
      }
      break;
    }
    case MessageKind::Log: {
      Effects more = handle_log(env);
      fx.insert(fx.end(), more.begin(), more.end());
      break;
    }
    case MessageKind::Exception: {
      Effects more = handle_exception(env);
      fx.insert(fx.end(), more.begin(), more.end());
      break;
    }
    case MessageKind::Bye: {
      Effects more = handle_bye(env, now);
      fx.insert(fx.end(), more.begin(), more.end());
      break;
    }
    default:
      fx.push_back(TraceFx{Json{{"event", "unexpected_kind_from_client"},
                                {"kind", to_string(env.kind)},
                                {"peer", env.sender_id}}});
      break;
  }
  return fx;
}

Effects ServerCore::handle_client_handshake(const Envelope& env, double now) {
  Effects fx;
  std::string address;
  int port = 0;
  try {
    address = env.body.at("listen_address").get<std::string>();
    port = env.body.at("listen_port").get<int>();
  } catch (const Json::exception&) {
    fx.push_back(TraceFx{Json{{"event", "malformed_handshake"},
                              {"peer", env.sender_id}}});
    return fx;
  }
  auto& rec = clients_[env.sender_id];
  bool already = rec.handshaken;
  rec.client_id = env.sender_id;
  rec.address = address;
  rec.port = port;
  rec.handshaken = true;
  rec.last_health = now;
  if (rec.created_at == 0) rec.created_at = now;
  if (!already) {
    if (backup_ && backup_->handshaken) {
      fx.push_back(SendToBackupFx{control_message(
          MessageKind::NewClient,
          body::new_client(env.sender_id, address, port))});
    }
    fx.push_back(ConnectToClientFx{env.sender_id, address, port});
  }
  return fx;
}

Effects ServerCore::assign_tasks(const std::string& client_id, int count) {
  Effects fx;
  auto& rec = clients_.at(client_id);
  std::vector<TaskDescriptor> granted;
  while (static_cast<int>(granted.size()) < count) {
    int64_t id;
    bool from_failed = !tasks_from_failed_.empty();
    if (from_failed) {
      id = tasks_from_failed_.front();
      tasks_from_failed_.pop_front();
    } else {
      while (cursor_ < ordered_.size() &&
             status_.at(ordered_[cursor_].task_id).phase !=
                 TaskPhase::Pending) {
        ++cursor_;
      }
      if (cursor_ >= ordered_.size()) break;
      id = ordered_[cursor_].task_id;
      ++cursor_;
    }
    const TaskDescriptor& desc = ordered_[index_.at(id)];
    if (min_hard_.prunes(desc.hardness)) {
      set_phase(id, TaskPhase::Skipped, "");
      fx.push_back(TraceFx{Json{{"event", "task_skipped"},
                                {"task_id", id},
                                {"hardness", desc.hardness}}});
      continue;
    }
    set_phase(id, TaskPhase::Assigned, client_id);
    rec.assigned.insert(id);
    granted.push_back(desc);
  }
  if (granted.empty()) {
    fx.push_back(SendToClientFx{
        client_id, make_mirrored(rec, MessageKind::NoFurtherTasks,
                                 Json::object())});
    no_further_sent_.insert(client_id);
  } else {
    fx.push_back(SendToClientFx{
        client_id,
        make_mirrored(rec, MessageKind::GrantTasks, body::grant_tasks(granted))});
  }
  return fx;
}

Effects ServerCore::handle_result(const Envelope& env) {
  Effects fx;
  int64_t id;
  ParamTuple values;
  std::vector<std::string> titles;
  try {
    id = env.body.at("task_id").get<int64_t>();
    values = env.body.at("result_values").get<ParamTuple>();
    titles = env.body.at("result_titles").get<std::vector<std::string>>();
  } catch (const Json::exception&) {
    fx.push_back(ClientEventFx{env.sender_id, "malformed RESULT"});
    return fx;
  }
  auto it = status_.find(id);
  if (it == status_.end()) {
    fx.push_back(ClientEventFx{env.sender_id,
                               "RESULT for unknown task " + std::to_string(id)});
    return fx;
  }
  TaskStatus& st = it->second;
  if (phase_is_terminal(st.phase)) {
    // First writer wins; duplicates arrive through replay after failover.
    fx.push_back(TraceFx{Json{{"event", "duplicate_result_dropped"},
                              {"task_id", id},
                              {"peer", env.sender_id}}});
    return fx;
  }
  if (st.phase != TaskPhase::Assigned) {
    // The sender was already declared failed and the task queued for
    // reassignment. Redoing it yields the same values, so drop this copy.
    fx.push_back(TraceFx{Json{{"event", "late_result_dropped"},
                              {"task_id", id},
                              {"phase", to_string(st.phase)},
                              {"peer", env.sender_id}}});
    return fx;
  }
  auto holder = clients_.find(st.client_id);
  if (holder != clients_.end()) holder->second.assigned.erase(id);
  set_phase(id, TaskPhase::Done, env.sender_id);
  results_[id] = std::move(values);
  if (result_titles_.empty()) result_titles_ = std::move(titles);
  return fx;
}

Effects ServerCore::register_timeout(const Hardness& h, int64_t task_id) {
  Effects fx;
  auto it = status_.find(task_id);
  if (it == status_.end()) {
    fx.push_back(TraceFx{Json{{"event", "report_for_unknown_task"},
                              {"task_id", task_id}}});
    return fx;
  }
  TaskStatus& st = it->second;
  if (st.phase == TaskPhase::Assigned) {
    auto holder = clients_.find(st.client_id);
    if (holder != clients_.end()) holder->second.assigned.erase(task_id);
    set_phase(task_id, TaskPhase::TimedOut, st.client_id);
  } else if (st.phase == TaskPhase::Reassignable ||
             st.phase == TaskPhase::Pending) {
    auto qit = std::find(tasks_from_failed_.begin(), tasks_from_failed_.end(),
                         task_id);
    if (qit != tasks_from_failed_.end()) tasks_from_failed_.erase(qit);
    set_phase(task_id, TaskPhase::Skipped, "");
  }
  // Terminal phases keep their outcome, but the hardness still counts: the
  // report proves this point of the grid timed out somewhere.
  min_hard_.insert(h);
  fx.push_back(TraceFx{Json{{"event", "timeout_registered"},
                            {"task_id", task_id},
                            {"hardness", h},
                            {"min_hard", min_hard_.elements()}}});
  for (auto& [cid, rec] : clients_) {
    if (!rec.handshaken) continue;
    fx.push_back(SendToClientFx{
        cid, make_mirrored(rec, MessageKind::ApplyDominoEffect,
                           body::apply_domino_effect(h))});
  }
  return fx;
}

Effects ServerCore::handle_log(const Envelope& env) {
  Effects fx;
  std::string text;
  Json event = Json::object();
  try {
    text = env.body.at("text").get<std::string>();
    if (env.body.contains("event")) event = env.body.at("event");
  } catch (const Json::exception&) {
    fx.push_back(ClientEventFx{env.sender_id, "malformed LOG"});
    return fx;
  }
  fx.push_back(ClientEventFx{env.sender_id, text});
  if (event.is_object() && event.value("type", "") == "domino_kill") {
    int64_t id = event.value("task_id", int64_t{-1});
    auto it = status_.find(id);
    if (it != status_.end() && it->second.phase == TaskPhase::Assigned &&
        it->second.client_id == env.sender_id) {
      clients_.at(env.sender_id).assigned.erase(id);
      set_phase(id, TaskPhase::Skipped, "");
      fx.push_back(TraceFx{Json{{"event", "task_skipped"},
                                {"task_id", id},
                                {"reason", "domino_kill"}}});
    }
  }
  return fx;
}

Effects ServerCore::handle_exception(const Envelope& env) {
  Effects fx;
  std::string text;
  Json event = Json::object();
  try {
    text = env.body.at("text").get<std::string>();
    if (env.body.contains("event")) event = env.body.at("event");
  } catch (const Json::exception&) {
    fx.push_back(ClientEventFx{env.sender_id, "malformed EXCEPTION"});
    return fx;
  }
  fx.push_back(ClientEventFx{env.sender_id, "EXCEPTION: " + text});
  if (event.is_object() && event.value("type", "") == "worker_crashed") {
    int64_t id = event.value("task_id", int64_t{-1});
    auto it = status_.find(id);
    if (it != status_.end() && it->second.phase == TaskPhase::Assigned &&
        it->second.client_id == env.sender_id) {
      clients_.at(env.sender_id).assigned.erase(id);
      set_phase(id, TaskPhase::Reassignable, "");
      tasks_from_failed_.push_back(id);
      fx.push_back(TraceFx{Json{{"event", "task_reassignable"},
                                {"task_id", id},
                                {"reason", "worker_crashed"}}});
    }
  }
  return fx;
}

void ServerCore::move_assigned_to_failed(ClientRecord& rec, Effects& fx) {
  // std::set iteration gives ascending task ids, so primary and backup build
  // the reassignment queue in the same order.
  for (int64_t id : rec.assigned) {
    set_phase(id, TaskPhase::Reassignable, "");
    tasks_from_failed_.push_back(id);
    fx.push_back(TraceFx{Json{{"event", "task_reassignable"},
                              {"task_id", id},
                              {"reason", "client_gone"}}});
  }
  rec.assigned.clear();
}

Effects ServerCore::handle_bye(const Envelope& env, double now) {
  (void)now;
  Effects fx;
  auto it = clients_.find(env.sender_id);
  if (it == clients_.end()) return fx;
  move_assigned_to_failed(it->second, fx);
  if (role_ == ServerRole::Primary) {
    fx.push_back(TerminateInstanceFx{env.sender_id});
    if (backup_ && backup_->handshaken) {
      fx.push_back(SendToBackupFx{control_message(
          MessageKind::ClientTerminated,
          body::client_terminated(env.sender_id))});
    }
  }
  clients_.erase(it);
  no_further_sent_.erase(env.sender_id);
  fx.push_back(TraceFx{Json{{"event", "client_removed"},
                            {"client_id", env.sender_id},
                            {"reason", "bye"}}});
  return fx;
}

// --- Liveness -----------------------------------------------------------------

std::vector<std::string> ServerCore::unhealthy_clients(double now) const {
  std::vector<std::string> out;
  for (const auto& [id, rec] : clients_) {
    if (rec.handshaken) {
      if (now - rec.last_health > config_.health.update_limit_sec)
        out.push_back(id);
    } else {
      if (now - rec.created_at > config_.health.max_non_active_sec)
        out.push_back(id);
    }
  }
  return out;
}

bool ServerCore::backup_unhealthy(double now) const {
  if (!backup_) return false;
  if (backup_->handshaken)
    return now - backup_->last_health > config_.health.update_limit_sec;
  return now - backup_->created_at > config_.health.max_non_active_sec;
}

Effects ServerCore::remove_client(const std::string& client_id, double now,
                                  const std::string& reason) {
  (void)now;
  Effects fx;
  auto it = clients_.find(client_id);
  if (it == clients_.end()) return fx;
  move_assigned_to_failed(it->second, fx);
  fx.push_back(TerminateInstanceFx{client_id});
  if (backup_ && backup_->handshaken) {
    fx.push_back(SendToBackupFx{control_message(
        MessageKind::ClientTerminated, body::client_terminated(client_id))});
  }
  clients_.erase(it);
  no_further_sent_.erase(client_id);
  fx.push_back(TraceFx{Json{{"event", "client_removed"},
                            {"client_id", client_id},
                            {"reason", reason}}});
  return fx;
}

Effects ServerCore::drop_backup(const std::string& reason) {
  Effects fx;
  if (!backup_) return fx;
  fx.push_back(TerminateInstanceFx{backup_->server_id});
  fx.push_back(TraceFx{Json{{"event", "backup_dropped"},
                            {"server_id", backup_->server_id},
                            {"reason", reason}}});
  backup_.reset();
  return fx;
}

bool ServerCore::should_create_backup() const {
  return role_ == ServerRole::Primary && config_.backup_enabled && !backup_;
}

bool ServerCore::want_client() const {
  if (role_ != ServerRole::Primary || frozen_) return false;
  for (int64_t id : tasks_from_failed_) {
    if (!min_hard_.prunes(ordered_[index_.at(id)].hardness)) return true;
  }
  for (std::size_t i = cursor_; i < ordered_.size(); ++i) {
    if (status_.at(ordered_[i].task_id).phase == TaskPhase::Pending &&
        !min_hard_.prunes(ordered_[i].hardness))
      return true;
  }
  return false;
}

// --- Backup management at the primary ----------------------------------------

void ServerCore::note_backup_created(const std::string& instance_name,
                                     double now) {
  BackupRecord rec;
  rec.server_id = instance_name;
  rec.created_at = now;
  backup_ = rec;
}

Effects ServerCore::handle_backup_handshake(const Envelope& env, double now) {
  Effects fx;
  std::string address;
  int port = 0;
  try {
    address = env.body.at("listen_address").get<std::string>();
    port = env.body.at("listen_port").get<int>();
  } catch (const Json::exception&) {
    fx.push_back(TraceFx{Json{{"event", "malformed_handshake"},
                              {"peer", env.sender_id}}});
    return fx;
  }
  if (!backup_) backup_ = BackupRecord{};
  backup_->server_id = env.sender_id;
  backup_->address = address;
  backup_->port = port;
  backup_->handshaken = true;
  backup_->last_health = now;
  if (backup_->created_at == 0) backup_->created_at = now;
  fx.push_back(ConnectToBackupFx{address, port});
  return fx;
}

void ServerCore::note_backup_health(double now) {
  if (backup_) backup_->last_health = now;
}

void ServerCore::note_client_created(const std::string& instance_name,
                                     double now) {
  ClientRecord rec;
  rec.client_id = instance_name;
  rec.created_at = now;
  clients_[instance_name] = rec;
}

// --- Backup role --------------------------------------------------------------

Effects ServerCore::handle_forwarded(const Envelope& env, double now) {
  Effects fx;
  // Anything on this link proves the primary was alive to send it.
  primary_last_health_ = now;
  switch (env.kind) {
    case MessageKind::HealthUpdate:
    case MessageKind::Handshake:
      // Handshake here is the primary's dial-back that opened this link.
      return fx;
    case MessageKind::NewClient: {
      std::string cid;
      std::string address;
      int port = 0;
      try {
        cid = env.body.at("client_id").get<std::string>();
        address = env.body.at("address").get<std::string>();
        port = env.body.at("port").get<int>();
      } catch (const Json::exception&) {
        fx.push_back(TraceFx{Json{{"event", "malformed_new_client"}}});
        return fx;
      }
      auto& rec = clients_[cid];
      rec.client_id = cid;
      rec.address = address;
      rec.port = port;
      rec.handshaken = true;
      rec.last_health = now;
      if (rec.created_at == 0) rec.created_at = now;
      fx.push_back(ConnectToClientFx{cid, address, port});
      return fx;
    }
    case MessageKind::ClientTerminated: {
      std::string cid;
      try {
        cid = env.body.at("client_id").get<std::string>();
      } catch (const Json::exception&) {
        return fx;
      }
      auto it = clients_.find(cid);
      if (it == clients_.end()) return fx;  // BYE forward already removed it
      move_assigned_to_failed(it->second, fx);
      clients_.erase(it);
      no_further_sent_.erase(cid);
      max_forwarded_.erase(cid);
      held_direct_.erase(cid);
      fx.push_back(TraceFx{Json{{"event", "client_removed"},
                                {"client_id", cid},
                                {"reason", "primary_said_terminated"}}});
      return fx;
    }
    default: {
      // Forwarded client message: act exactly as the primary did, then use
      // its seq to discard the client's direct copy of the same message.
      Effects acted =
          act_on_client_message(env, now, /*forward=*/false,
                                /*replayed=*/false);
      fx.insert(fx.end(), acted.begin(), acted.end());
      auto& mf = max_forwarded_[env.sender_id];
      mf = std::max(mf, env.seq);
      auto& held = held_direct_[env.sender_id];
      while (!held.empty() && held.front().seq <= env.seq) held.pop_front();
      return fx;
    }
  }
}

Effects ServerCore::handle_direct(const Envelope& env, double now) {
  Effects fx;
  switch (env.kind) {
    case MessageKind::HealthUpdate: {
      auto it = clients_.find(env.sender_id);
      if (it != clients_.end()) it->second.last_health = now;
      return fx;
    }
    case MessageKind::Handshake:
      // Dial-back confirmation for the channel this backup opened.
      return fx;
    default: {
      auto mf = max_forwarded_.find(env.sender_id);
      if (mf != max_forwarded_.end() && env.seq <= mf->second) {
        fx.push_back(TraceFx{Json{{"event", "direct_copy_dropped"},
                                  {"kind", to_string(env.kind)},
                                  {"peer", env.sender_id},
                                  {"seq", env.seq}}});
        return fx;
      }
      held_direct_[env.sender_id].push_back(env);
      return fx;
    }
  }
}

Effects ServerCore::promote(double now) {
  Effects fx;
  role_ = ServerRole::Primary;
  frozen_ = false;
  backup_.reset();
  fx.push_back(TraceFx{Json{{"event", "promote"}}});
  // Queue swap first: clients must start pairing against this server's sends
  // before any replay-triggered grants reach them.
  for (const auto& [cid, rec] : clients_) {
    fx.push_back(SwapClientFx{cid, rec.address, rec.port,
                              control_message(MessageKind::SwapQueues)});
  }
  std::map<std::string, std::deque<Envelope>> held;
  held.swap(held_direct_);
  max_forwarded_.clear();
  for (auto& [cid, queue] : held) {
    for (const Envelope& env : queue) {
      Effects acted = act_on_client_message(env, now, /*forward=*/false,
                                            /*replayed=*/true);
      fx.insert(fx.end(), acted.begin(), acted.end());
    }
  }
  return fx;
}

// --- Completion ---------------------------------------------------------------

bool ServerCore::all_done() const {
  if (!clients_.empty()) return false;
  for (const auto& [id, st] : status_) {
    if (!phase_is_terminal(st.phase)) return false;
  }
  return true;
}

ResultTable ServerCore::finalize_results() const {
  ResultTable table;
  if (ordered_.empty()) return table;
  table.titles = ordered_.front().parameter_titles;
  table.titles.insert(table.titles.end(), result_titles_.begin(),
                      result_titles_.end());
  std::map<GroupKey, int> group_done;
  for (const auto& desc : ordered_) {
    if (status_.at(desc.task_id).phase == TaskPhase::Done)
      ++group_done[desc.group_key];
  }
  std::vector<const TaskDescriptor*> done;
  for (const auto& desc : ordered_) {
    if (status_.at(desc.task_id).phase != TaskPhase::Done) continue;
    if (group_done[desc.group_key] < config_.min_group_size) continue;
    done.push_back(&desc);
  }
  std::sort(done.begin(), done.end(),
            [](const TaskDescriptor* a, const TaskDescriptor* b) {
              return a->original_index < b->original_index;
            });
  for (const TaskDescriptor* desc : done) {
    ParamTuple row = desc->parameters;
    const ParamTuple& vals = results_.at(desc->task_id);
    row.insert(row.end(), vals.begin(), vals.end());
    table.rows.push_back(std::move(row));
  }
  return table;
}

// --- Replication ----------------------------------------------------------------

Json ServerCore::snapshot() const {
  Json statuses = Json::object();
  for (const auto& [id, st] : status_) {
    statuses[std::to_string(id)] =
        Json{{"phase", to_string(st.phase)}, {"client_id", st.client_id}};
  }
  Json results = Json::object();
  for (const auto& [id, vals] : results_) {
    results[std::to_string(id)] = vals;
  }
  Json clients = Json::object();
  for (const auto& [id, rec] : clients_) {
    clients[id] = rec.to_json();
  }
  Json tasks = Json::array();
  for (const auto& desc : ordered_) tasks.push_back(desc.to_json());
  return Json{{"config", config_.to_json()},
              {"ordered_tasks", tasks},
              {"task_status", statuses},
              {"tasks_from_failed", tasks_from_failed_},
              {"min_hard", min_hard_.elements()},
              {"next_task_cursor", cursor_},
              {"results", results},
              {"result_titles", result_titles_},
              {"clients", clients},
              {"no_further_sent", no_further_sent_},
              {"results_written", results_written_}};
}

ServerCore ServerCore::from_snapshot(const Json& snap, std::string server_id) {
  ServerCore core;
  core.config_ = ExperimentConfig::from_json(snap.at("config"));
  core.server_id_ = std::move(server_id);
  core.role_ = ServerRole::Backup;
  for (const auto& t : snap.at("ordered_tasks")) {
    core.ordered_.push_back(TaskDescriptor::from_json(t));
  }
  for (std::size_t i = 0; i < core.ordered_.size(); ++i) {
    core.index_[core.ordered_[i].task_id] = i;
  }
  for (const auto& [key, val] : snap.at("task_status").items()) {
    TaskStatus st;
    st.phase = task_phase_from_string(val.at("phase").get<std::string>());
    st.client_id = val.at("client_id").get<std::string>();
    core.status_[std::stoll(key)] = st;
  }
  core.tasks_from_failed_ =
      snap.at("tasks_from_failed").get<std::deque<int64_t>>();
  for (const auto& h : snap.at("min_hard")) {
    core.min_hard_.insert(h.get<Hardness>());
  }
  core.cursor_ = snap.at("next_task_cursor").get<std::size_t>();
  for (const auto& [key, val] : snap.at("results").items()) {
    core.results_[std::stoll(key)] = val.get<ParamTuple>();
  }
  core.result_titles_ =
      snap.at("result_titles").get<std::vector<std::string>>();
  for (const auto& [key, val] : snap.at("clients").items()) {
    core.clients_[key] = ClientRecord::from_json(val);
  }
  core.no_further_sent_ =
      snap.at("no_further_sent").get<std::set<std::string>>();
  core.results_written_ = snap.at("results_written").get<bool>();
  if (core.status_.size() != core.ordered_.size()) {
    throw std::runtime_error("snapshot statuses do not cover task list");
  }
  return core;
}

Json ServerCore::digest() const {
  Json statuses = Json::object();
  for (const auto& [id, st] : status_) {
    statuses[std::to_string(id)] =
        Json{{"phase", to_string(st.phase)}, {"client_id", st.client_id}};
  }
  Json outbound = Json::object();
  Json assigned = Json::object();
  for (const auto& [id, rec] : clients_) {
    outbound[id] = rec.outbound_seq;
    assigned[id] = rec.assigned;
  }
  Json result_ids = Json::array();
  for (const auto& [id, vals] : results_) result_ids.push_back(id);
  return Json{{"task_status", statuses},
              {"tasks_from_failed", tasks_from_failed_},
              {"min_hard", min_hard_.elements()},
              {"next_task_cursor", cursor_},
              {"result_ids", result_ids},
              {"outbound_seq", outbound},
              {"assigned", assigned},
              {"no_further_sent", no_further_sent_}};
}

bool ServerCore::invariants_ok() const {
  if (status_.size() != ordered_.size()) return false;
  std::set<int64_t> queued(tasks_from_failed_.begin(),
                           tasks_from_failed_.end());
  if (queued.size() != tasks_from_failed_.size()) return false;
  for (int64_t id : queued) {
    auto it = status_.find(id);
    if (it == status_.end() || it->second.phase != TaskPhase::Reassignable)
      return false;
  }
  std::set<int64_t> assigned_anywhere;
  for (const auto& [cid, rec] : clients_) {
    for (int64_t id : rec.assigned) {
      if (!assigned_anywhere.insert(id).second) return false;
      auto it = status_.find(id);
      if (it == status_.end() || it->second.phase != TaskPhase::Assigned ||
          it->second.client_id != cid)
        return false;
    }
  }
  for (const auto& [id, st] : status_) {
    if (st.phase == TaskPhase::Reassignable && !queued.count(id)) return false;
    if (st.phase == TaskPhase::Done && !results_.count(id)) return false;
  }
  return true;
}

// --- Snapshot file format -------------------------------------------------------

std::string snapshot_to_text(const Json& snap) {
  std::ostringstream out;
  for (const auto& [field, value] : snap.items()) {
    out << Json{{"field", field}, {"value", value}}.dump() << "\n";
  }
  return out.str();
}

Json snapshot_from_text(const std::string& text) {
  Json snap = Json::object();
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json rec = Json::parse(line);
    snap[rec.at("field").get<std::string>()] = rec.at("value");
  }
  return snap;
}

}  // namespace gridsweep

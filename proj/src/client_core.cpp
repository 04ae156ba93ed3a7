#include "gridsweep/client_core.hpp"

#include <algorithm>

#include "gridsweep/hardness.hpp"
#include "gridsweep/util.hpp"

namespace gridsweep {

const char* to_string(WorkerPhase phase) {
  switch (phase) {
    case WorkerPhase::Starting:
      return "Starting";
    case WorkerPhase::Running:
      return "Running";
    case WorkerPhase::Done:
      return "Done";
    case WorkerPhase::Terminated:
      return "Terminated";
  }
  return "?";
}

ClientCore::ClientCore(std::string client_id, int cpus, HealthPolicy health)
    : client_id_(std::move(client_id)), cpus_(cpus), health_(health) {}

Envelope ClientCore::next_envelope(MessageKind kind, Json body) {
  return Envelope{kind, client_id_, seq_++, std::move(body)};
}

CEffects ClientCore::send_mirrored(MessageKind kind, Json body) {
  Envelope env = next_envelope(kind, std::move(body));
  if (stopped_) {
    outbox_.push_back(std::move(env));
    return {};
  }
  return {ClientSendFx{std::move(env), true, have_backup_channel_}};
}

static bool is_mirrored_server_kind(MessageKind kind) {
  return kind == MessageKind::GrantTasks ||
         kind == MessageKind::NoFurtherTasks ||
         kind == MessageKind::ApplyDominoEffect;
}

CEffects ClientCore::on_server_message(const Envelope& env, bool from_backup,
                                       double now) {
  CEffects fx;
  if (!is_mirrored_server_kind(env.kind)) {
    switch (env.kind) {
      case MessageKind::Stop:
        stopped_ = true;
        fx.push_back(ClientLogFx{"stopped"});
        return fx;
      case MessageKind::Resume: {
        stopped_ = false;
        fx.push_back(ClientLogFx{"resumed, flushing " +
                                 std::to_string(outbox_.size()) +
                                 " buffered messages"});
        while (!outbox_.empty()) {
          fx.push_back(ClientSendFx{std::move(outbox_.front()), true,
                                    have_backup_channel_});
          outbox_.pop_front();
        }
        return fx;
      }
      case MessageKind::SwapQueues:
        return on_swap(now);
      case MessageKind::Handshake:
        return fx;  // dial-back confirmation, nothing to do
      default:
        fx.push_back(ClientLogFx{std::string("unexpected server message ") +
                                 to_string(env.kind)});
        return fx;
    }
  }
  auto key = std::make_pair(env.seq, env.kind);
  if (from_backup) {
    auto it = acted_.find(key);
    if (it != acted_.end() || env.seq <= max_acted_seq_) {
      // Mirror of a copy already acted on; both channels deliver in order,
      // so everything at or below this seq is settled.
      acted_.erase(acted_.begin(), acted_.upper_bound(
                                       std::make_pair(env.seq, env.kind)));
      return fx;
    }
    mirror_unacted_.push_back(env);
    return fx;
  }
  if (acted_.count(key) || env.seq <= max_acted_seq_) {
    fx.push_back(ClientLogFx{"dropped duplicate " +
                             std::string(to_string(env.kind)) + " seq " +
                             std::to_string(env.seq)});
    return fx;
  }
  CEffects acted = act_on_mirrored(env, now);
  fx.insert(fx.end(), acted.begin(), acted.end());
  max_acted_seq_ = std::max(max_acted_seq_, env.seq);
  if (have_backup_channel_) acted_.insert(key);
  while (!mirror_unacted_.empty() && mirror_unacted_.front().seq <= env.seq) {
    mirror_unacted_.pop_front();
  }
  return fx;
}

CEffects ClientCore::act_on_mirrored(const Envelope& env, double now) {
  switch (env.kind) {
    case MessageKind::GrantTasks:
      return accept_grant(env, now);
    case MessageKind::NoFurtherTasks: {
      no_further_ = true;
      outstanding_request_ = false;
      return {ClientLogFx{"no further tasks"}};
    }
    case MessageKind::ApplyDominoEffect: {
      try {
        Hardness h = env.body.at("hardness").get<Hardness>();
        return apply_domino(h, now);
      } catch (const Json::exception&) {
        return {ClientLogFx{"malformed APPLY_DOMINO_EFFECT"}};
      }
    }
    default:
      return {};
  }
}

CEffects ClientCore::accept_grant(const Envelope& env, double now) {
  (void)now;
  CEffects fx;
  outstanding_request_ = false;
  try {
    for (const auto& t : env.body.at("tasks")) {
      TaskDescriptor desc = TaskDescriptor::from_json(t);
      if (!seen_granted_.insert(desc.task_id).second) {
        fx.push_back(ClientLogFx{"ignoring re-granted task " +
                                 std::to_string(desc.task_id)});
        continue;
      }
      pending_.push_back(std::move(desc));
    }
  } catch (const Json::exception&) {
    fx.push_back(ClientLogFx{"malformed GRANT_TASKS"});
    return fx;
  }
  CEffects spawned = spawn_ready();
  fx.insert(fx.end(), spawned.begin(), spawned.end());
  return fx;
}

CEffects ClientCore::apply_domino(const Hardness& h, double now) {
  (void)now;
  CEffects fx;
  for (auto& [id, slot] : workers_) {
    if (slot.phase != WorkerPhase::Starting &&
        slot.phase != WorkerPhase::Running)
      continue;
    if (!dominates(slot.task.hardness, h)) continue;
    slot.phase = WorkerPhase::Terminated;
    fx.push_back(KillWorkerFx{id});
    CEffects sent = send_mirrored(
        MessageKind::Log,
        body::log_event("killed worker for task " + std::to_string(id) +
                            " dominated by reported hardness",
                        wall_now(),
                        Json{{"type", "domino_kill"}, {"task_id", id}}));
    fx.insert(fx.end(), sent.begin(), sent.end());
  }
  std::deque<TaskDescriptor> kept;
  for (auto& desc : pending_) {
    if (dominates(desc.hardness, h)) {
      CEffects sent = send_mirrored(
          MessageKind::Log,
          body::log_event("dropped pending task " +
                              std::to_string(desc.task_id) +
                              " dominated by reported hardness",
                          wall_now(),
                          Json{{"type", "domino_kill"},
                               {"task_id", desc.task_id}}));
      fx.insert(fx.end(), sent.begin(), sent.end());
    } else {
      kept.push_back(std::move(desc));
    }
  }
  pending_.swap(kept);
  return fx;
}

CEffects ClientCore::on_swap(double now) {
  CEffects fx;
  fx.push_back(ClientLogFx{"queue swap: backup channel is now primary, " +
                           std::to_string(mirror_unacted_.size()) +
                           " held copies to act on"});
  have_backup_channel_ = false;
  std::deque<Envelope> held;
  held.swap(mirror_unacted_);
  for (const Envelope& env : held) {
    CEffects acted = act_on_mirrored(env, now);
    fx.insert(fx.end(), acted.begin(), acted.end());
    max_acted_seq_ = std::max(max_acted_seq_, env.seq);
  }
  return fx;
}

void ClientCore::note_backup_channel() {
  have_backup_channel_ = true;
  acted_.clear();
  mirror_unacted_.clear();
  max_acted_seq_ = -1;
}

void ClientCore::note_backup_channel_lost() { have_backup_channel_ = false; }

CEffects ClientCore::spawn_ready() {
  CEffects fx;
  int busy = 0;
  for (const auto& [id, slot] : workers_) {
    if (slot.phase == WorkerPhase::Starting ||
        slot.phase == WorkerPhase::Running)
      ++busy;
  }
  while (busy < cpus_ && !pending_.empty()) {
    TaskDescriptor desc = std::move(pending_.front());
    pending_.pop_front();
    int64_t id = desc.task_id;
    fx.push_back(SpawnWorkerFx{desc});
    workers_[id] = WorkerSlot{std::move(desc), WorkerPhase::Starting, 0};
    ++busy;
  }
  return fx;
}

CEffects ClientCore::on_worker_started(int64_t task_id, double now) {
  auto it = workers_.find(task_id);
  if (it == workers_.end() || it->second.phase != WorkerPhase::Starting)
    return {};
  it->second.phase = WorkerPhase::Running;
  it->second.started_at = now;
  return {};
}

CEffects ClientCore::on_worker_done(int64_t task_id, ParamTuple values,
                                    std::vector<std::string> titles,
                                    double now) {
  (void)now;
  auto it = workers_.find(task_id);
  if (it == workers_.end()) return {};
  if (it->second.phase == WorkerPhase::Terminated) {
    // Result crossed the kill; the task was already reported or skipped.
    return {ClientLogFx{"late result from terminated worker " +
                        std::to_string(task_id) + " dropped"}};
  }
  it->second.phase = WorkerPhase::Done;
  return send_mirrored(MessageKind::Result,
                       body::result(task_id, values, titles));
}

CEffects ClientCore::on_worker_exit(int64_t task_id, double now) {
  (void)now;
  auto it = workers_.find(task_id);
  if (it == workers_.end()) return {};
  WorkerPhase phase = it->second.phase;
  workers_.erase(it);
  CEffects fx;
  if (phase == WorkerPhase::Starting || phase == WorkerPhase::Running) {
    fx.push_back(ClientLogFx{"worker for task " + std::to_string(task_id) +
                             " died without a result"});
    CEffects sent = send_mirrored(
        MessageKind::Exception,
        body::log_event("worker crashed on task " + std::to_string(task_id),
                        wall_now(),
                        Json{{"type", "worker_crashed"},
                             {"task_id", task_id}}));
    fx.insert(fx.end(), sent.begin(), sent.end());
  }
  CEffects spawned = spawn_ready();
  fx.insert(fx.end(), spawned.begin(), spawned.end());
  return fx;
}

CEffects ClientCore::tick(double now) {
  CEffects fx;
  if (now - last_health_ >= health_.update_period_sec) {
    last_health_ = now;
    // Health is never mirrored: each server gets its own copy so either can
    // judge this client's liveness independently. Not buffered while
    // stopped; a frozen primary still needs proof of life.
    fx.push_back(
        ClientSendFx{next_envelope(MessageKind::HealthUpdate, Json::object()),
                     true, false});
    if (have_backup_channel_) {
      fx.push_back(ClientSendFx{
          next_envelope(MessageKind::HealthUpdate, Json::object()), false,
          true});
    }
  }
  for (auto& [id, slot] : workers_) {
    if (slot.phase != WorkerPhase::Running) continue;
    if (now - slot.started_at <= slot.task.timeout_sec) continue;
    slot.phase = WorkerPhase::Terminated;
    fx.push_back(KillWorkerFx{id});
    CEffects sent = send_mirrored(
        MessageKind::ReportHardTask,
        body::report_hard_task(slot.task.hardness, id));
    fx.insert(fx.end(), sent.begin(), sent.end());
  }
  CEffects spawned = spawn_ready();
  fx.insert(fx.end(), spawned.begin(), spawned.end());
  if (!stopped_ && !no_further_ && !outstanding_request_ && !bye_sent_) {
    int busy = 0;
    for (const auto& [id, slot] : workers_) {
      if (slot.phase == WorkerPhase::Starting ||
          slot.phase == WorkerPhase::Running)
        ++busy;
    }
    int idle = cpus_ - busy - static_cast<int>(pending_.size());
    if (idle > 0) {
      outstanding_request_ = true;
      CEffects sent = send_mirrored(MessageKind::RequestTasks,
                                    body::request_tasks(idle));
      fx.insert(fx.end(), sent.begin(), sent.end());
    }
  }
  return fx;
}

bool ClientCore::should_exit() const {
  return no_further_ && !stopped_ && workers_.empty() && pending_.empty() &&
         !bye_sent_;
}

CEffects ClientCore::make_bye(double now) {
  (void)now;
  bye_sent_ = true;
  return send_mirrored(MessageKind::Bye, Json::object());
}

Envelope ClientCore::make_handshake(const std::string& listen_address,
                                    int listen_port) {
  return next_envelope(MessageKind::Handshake,
                       body::handshake("client", listen_address, listen_port));
}

}  // namespace gridsweep

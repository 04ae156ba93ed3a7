#include "gridsweep/server_node.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "gridsweep/net.hpp"
#include "gridsweep/results.hpp"
#include "gridsweep/util.hpp"

namespace fs = std::filesystem;

namespace gridsweep {

namespace {

enum class ConnRole { Unknown, ClientIn, BackupIn, PrimaryIn };

const char* to_string(ConnRole role) {
  switch (role) {
    case ConnRole::Unknown:
      return "unknown";
    case ConnRole::ClientIn:
      return "client";
    case ConnRole::BackupIn:
      return "backup";
    case ConnRole::PrimaryIn:
      return "primary";
  }
  return "?";
}

struct ConnInfo {
  ConnPtr conn;
  ConnRole role = ConnRole::Unknown;
  std::string peer;
};

class ServerNode {
 public:
  ServerNode(ServerCore core, Engine& engine, const ServerNodeOptions& opts)
      : core_(std::move(core)), engine_(engine), opts_(opts) {}

  int run();

 private:
  void trace(Json rec);
  void trace_send(const Envelope& env, const std::string& peer, bool ok,
                  const char* dir);
  void handle_item(const Incoming& item, double now);
  ConnRole classify(const Envelope& env);
  void dispatch_env(ConnRole role, const Envelope& env, double now);
  void exec(const Effects& fx);
  void send_to_client(const std::string& client_id, const Envelope& env);
  void send_to_backup(const Envelope& env);
  void terminate_instance_by_name(const std::string& name);
  void periodic(double now);
  void begin_freeze(double now);
  void complete_freeze(const Envelope& env, double now);
  void abandon_freeze(double now);
  void resume_clients();
  void drain_held(double now);
  void promote(double now);
  void finalize();
  std::vector<std::string> client_launch_args() const;
  std::vector<std::string> backup_launch_args(const std::string& snap) const;

  ServerCore core_;
  Engine& engine_;
  ServerNodeOptions opts_;

  std::unique_ptr<TcpListener> listener_;
  std::thread accept_thread_;
  Mailbox<Incoming> mb_;
  std::mutex conns_mu_;  // guards conns_ and next_source_ (accept thread)
  uint64_t next_source_ = 1;
  std::map<uint64_t, ConnInfo> conns_;

  std::map<std::string, ConnPtr> client_out_;
  ConnPtr backup_out_;
  ConnPtr primary_out_;  // backup role: carries our handshake and health

  std::ofstream trace_file_;

  bool frozen_ = false;
  std::vector<std::pair<ConnRole, Envelope>> held_;
  double await_backup_deadline_ = 0;
  int backup_attempt_ = 0;
  double next_backup_time_ = 0;
  int snapshot_count_ = 0;
  double last_health_out_ = -1e18;
  bool finalized_ = false;
};

void ServerNode::trace(Json rec) {
  rec["ts"] = wall_now();
  rec["server"] = core_.server_id();
  trace_file_ << rec.dump() << "\n";
  trace_file_.flush();
}

void ServerNode::trace_send(const Envelope& env, const std::string& peer,
                            bool ok, const char* dir) {
  Json rec{{"dir", dir},
           {"kind", gridsweep::to_string(env.kind)},
           {"peer", peer},
           {"seq", env.seq},
           {"ok", ok}};
  if (env.kind == MessageKind::GrantTasks && env.body.contains("tasks")) {
    Json ids = Json::array();
    Json hard = Json::array();
    for (const auto& t : env.body.at("tasks")) {
      ids.push_back(t.value("task_id", int64_t{-1}));
      hard.push_back(t.value("hardness", Json::array()));
    }
    rec["task_ids"] = ids;
    rec["hardnesses"] = hard;
  }
  trace(std::move(rec));
}

int ServerNode::run() {
  fs::create_directories(opts_.root_dir);
  fs::create_directories(opts_.output_dir);
  trace_file_.open(opts_.root_dir + "/trace.log", std::ios::app);

  const ExperimentConfig& cfg = core_.config();
  try {
    listener_ =
        std::make_unique<TcpListener>(cfg.bind_host, opts_.listen_port);
  } catch (const std::exception& e) {
    trace(Json{{"event", "listen_failed"}, {"error", e.what()}});
    return 1;
  }
  trace(Json{{"event", "listening"},
             {"address", cfg.bind_host},
             {"port", listener_->port()},
             {"role", gridsweep::to_string(core_.role())}});

  accept_thread_ = std::thread([this] {
    while (ConnPtr conn = listener_->accept_conn()) {
      uint64_t sid;
      {
        std::lock_guard<std::mutex> lock(conns_mu_);
        sid = next_source_++;
        conns_[sid] = ConnInfo{conn, ConnRole::Unknown, ""};
      }
      start_envelope_reader(conn, sid, mb_).detach();
    }
  });

  double now = mono_now();
  if (core_.role() == ServerRole::Backup) {
    core_.note_primary_health(now);
    primary_out_ = tcp_dial(opts_.primary_address, opts_.primary_port, 5.0);
    if (!primary_out_) {
      // Unreachable primary: it likely died while we were starting. The
      // health window will run out and we will take over.
      trace(Json{{"event", "primary_dial_failed"}});
    } else {
      Envelope hs = core_.control_message(
          MessageKind::Handshake,
          body::handshake("backup", cfg.bind_host, listener_->port()));
      bool ok = primary_out_->send_line(encode(hs));
      trace_send(hs, "primary", ok, "send");
    }
    // Open channels to every snapshotted client; each dials back.
    Effects dials;
    for (const auto& [cid, rec] : core_.clients()) {
      if (rec.handshaken)
        dials.push_back(ConnectToClientFx{cid, rec.address, rec.port});
    }
    exec(dials);
  }

  while (!finalized_) {
    auto item = mb_.pop(0.05);
    while (item && !finalized_) {
      handle_item(*item, mono_now());
      item = mb_.pop(0);
    }
    if (!finalized_) periodic(mono_now());
  }
  listener_->close_listener();
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto& [sid, info] : conns_) info.conn->shutdown_both();
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  return 0;
}

ConnRole ServerNode::classify(const Envelope& env) {
  if (env.kind != MessageKind::Handshake) return ConnRole::Unknown;
  std::string hk = env.body.value("kind", "");
  if (hk == "client") return ConnRole::ClientIn;
  if (hk == "backup") return ConnRole::BackupIn;
  if (hk == "primary") return ConnRole::PrimaryIn;
  return ConnRole::Unknown;
}

void ServerNode::handle_item(const Incoming& item, double now) {
  if (item.what == Incoming::What::BadLine) {
    trace(Json{{"event", "bad_line"}, {"error", item.text}});
    return;
  }
  if (item.what == Incoming::What::Line) return;
  if (item.what == Incoming::What::Eof) {
    std::string peer;
    ConnRole role = ConnRole::Unknown;
    {
      std::lock_guard<std::mutex> lock(conns_mu_);
      auto it = conns_.find(item.source_id);
      if (it == conns_.end()) return;
      peer = it->second.peer;
      role = it->second.role;
      conns_.erase(it);
    }
    trace(Json{{"event", "conn_closed"},
               {"peer", peer},
               {"channel", to_string(role)}});
    return;
  }
  ConnRole role;
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    auto it = conns_.find(item.source_id);
    if (it == conns_.end()) return;
    if (it->second.role == ConnRole::Unknown) {
      it->second.role = classify(item.env);
      it->second.peer = item.env.sender_id;
      if (it->second.role == ConnRole::Unknown) {
        trace(Json{{"event", "unclassified_conn_dropped"},
                   {"kind", gridsweep::to_string(item.env.kind)},
                   {"peer", item.env.sender_id}});
        it->second.conn->shutdown_both();
        return;
      }
    }
    role = it->second.role;
  }
  if (frozen_) {
    if (item.env.kind == MessageKind::HealthUpdate) {
      dispatch_env(role, item.env, now);
    } else if (role == ConnRole::BackupIn &&
               item.env.kind == MessageKind::Handshake) {
      trace(Json{{"dir", "recv"},
                 {"kind", gridsweep::to_string(item.env.kind)},
                 {"peer", item.env.sender_id},
                 {"seq", item.env.seq},
                 {"channel", to_string(role)}});
      engine_.note_event(NoteEvent{NoteEvent::Type::Recv,
                                   gridsweep::to_string(item.env.kind),
                                   item.env.sender_id});
      complete_freeze(item.env, now);
    } else {
      held_.emplace_back(role, item.env);
    }
    return;
  }
  dispatch_env(role, item.env, now);
}

void ServerNode::dispatch_env(ConnRole role, const Envelope& env, double now) {
  trace(Json{{"dir", "recv"},
             {"kind", gridsweep::to_string(env.kind)},
             {"peer", env.sender_id},
             {"seq", env.seq},
             {"channel", to_string(role)}});
  engine_.note_event(NoteEvent{NoteEvent::Type::Recv,
                               gridsweep::to_string(env.kind),
                               env.sender_id});
  if (core_.role() == ServerRole::Primary) {
    switch (role) {
      case ConnRole::ClientIn:
        exec(core_.handle_client_message(env, now));
        return;
      case ConnRole::BackupIn:
        if (env.kind == MessageKind::Handshake) {
          exec(core_.handle_backup_handshake(env, now));
        } else if (env.kind == MessageKind::HealthUpdate) {
          core_.note_backup_health(now);
        } else {
          trace(Json{{"event", "unexpected_backup_message"},
                     {"kind", gridsweep::to_string(env.kind)}});
        }
        return;
      default:
        trace(Json{{"event", "unexpected_channel_message"},
                   {"kind", gridsweep::to_string(env.kind)},
                   {"peer", env.sender_id},
                   {"channel", to_string(role)}});
        return;
    }
  }
  switch (role) {
    case ConnRole::PrimaryIn:
      exec(core_.handle_forwarded(env, now));
      return;
    case ConnRole::ClientIn:
      exec(core_.handle_direct(env, now));
      return;
    default:
      trace(Json{{"event", "unexpected_channel_message"},
                 {"kind", gridsweep::to_string(env.kind)},
                 {"peer", env.sender_id},
                 {"channel", to_string(role)}});
      return;
  }
}

void ServerNode::send_to_client(const std::string& client_id,
                                const Envelope& env) {
  auto it = client_out_.find(client_id);
  if (it == client_out_.end()) {
    trace(Json{{"event", "send_skipped_no_channel"},
               {"kind", gridsweep::to_string(env.kind)},
               {"peer", client_id}});
    return;
  }
  bool ok = it->second->send_line(encode(env));
  trace_send(env, client_id, ok, "send");
  if (ok) {
    engine_.note_event(NoteEvent{NoteEvent::Type::Send,
                                 gridsweep::to_string(env.kind), client_id});
  }
}

void ServerNode::send_to_backup(const Envelope& env) {
  if (!backup_out_) {
    trace(Json{{"event", "send_skipped_no_channel"},
               {"kind", gridsweep::to_string(env.kind)},
               {"peer", "backup"}});
    return;
  }
  bool forwarded = env.sender_id != core_.server_id();
  std::string peer = forwarded ? env.sender_id
                     : core_.backup() ? core_.backup()->server_id
                                      : std::string("backup");
  bool ok = backup_out_->send_line(encode(env));
  trace_send(env, peer, ok, forwarded ? "forward" : "send");
  if (ok) {
    engine_.note_event(NoteEvent{forwarded ? NoteEvent::Type::Forward
                                           : NoteEvent::Type::Send,
                                 gridsweep::to_string(env.kind), peer});
  }
}

void ServerNode::terminate_instance_by_name(const std::string& name) {
  bool found = false;
  for (const auto& h : engine_.list_instances()) {
    if (h.name == name) {
      engine_.terminate_instance(h);
      found = true;
      break;
    }
  }
  trace(Json{{"event", "instance_terminated"},
             {"name", name},
             {"found", found}});
  client_out_.erase(name);
}

void ServerNode::exec(const Effects& fx) {
  for (const Effect& effect : fx) {
    std::visit(
        [&](const auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, SendToClientFx>) {
            send_to_client(e.client_id, e.env);
          } else if constexpr (std::is_same_v<T, SendToBackupFx>) {
            send_to_backup(e.env);
          } else if constexpr (std::is_same_v<T, ConnectToClientFx>) {
            ConnPtr conn = tcp_dial(e.address, e.port, 5.0);
            if (!conn) {
              trace(Json{{"event", "client_dial_failed"},
                         {"peer", e.client_id}});
              return;
            }
            client_out_[e.client_id] = conn;
            const char* hk =
                core_.role() == ServerRole::Primary ? "primary" : "backup";
            Envelope hs = core_.control_message(
                MessageKind::Handshake,
                body::handshake(hk, core_.config().bind_host,
                                listener_->port()));
            bool ok = conn->send_line(encode(hs));
            trace_send(hs, e.client_id, ok, "send");
          } else if constexpr (std::is_same_v<T, ConnectToBackupFx>) {
            backup_out_ = tcp_dial(e.address, e.port, 5.0);
            if (!backup_out_) {
              trace(Json{{"event", "backup_dial_failed"}});
              return;
            }
            Envelope hs = core_.control_message(
                MessageKind::Handshake,
                body::handshake("primary", core_.config().bind_host,
                                listener_->port()));
            bool ok = backup_out_->send_line(encode(hs));
            trace_send(hs, "backup", ok, "send");
          } else if constexpr (std::is_same_v<T, SwapClientFx>) {
            ConnPtr conn = tcp_dial(e.address, e.port, 5.0);
            if (!conn) {
              trace(Json{{"event", "swap_dial_failed"},
                         {"peer", e.client_id}});
              return;
            }
            bool ok = conn->send_line(encode(e.env));
            trace_send(e.env, e.client_id, ok, "send");
            conn->shutdown_both();
          } else if constexpr (std::is_same_v<T, TerminateInstanceFx>) {
            terminate_instance_by_name(e.name);
          } else if constexpr (std::is_same_v<T, ClientEventFx>) {
            std::string dir = opts_.output_dir + "/clients/" + e.client_id;
            fs::create_directories(dir);
            std::ofstream out(dir + "/events.log", std::ios::app);
            out << Json{{"ts", wall_now()}, {"text", e.text}}.dump() << "\n";
          } else if constexpr (std::is_same_v<T, TraceFx>) {
            trace(e.record);
          }
        },
        effect);
  }
}

std::vector<std::string> ServerNode::client_launch_args() const {
  const ExperimentConfig& cfg = core_.config();
  return {"--client-id",       "{name}",
          "--primary-address", cfg.bind_host,
          "--handshake-port",  std::to_string(listener_->port()),
          "--bind",            cfg.bind_host,
          "--cpus",            std::to_string(cfg.client_cpus),
          "--health-period",   std::to_string(cfg.health.update_period_sec)};
}

std::vector<std::string> ServerNode::backup_launch_args(
    const std::string& snap) const {
  const ExperimentConfig& cfg = core_.config();
  return {"--snapshot",        snap,
          "--instance-name",   "{name}",
          "--primary-address", cfg.bind_host,
          "--primary-port",    std::to_string(listener_->port())};
}

void ServerNode::begin_freeze(double now) {
  frozen_ = true;
  core_.set_frozen(true);
  trace(Json{{"event", "freeze_start"}});
  for (const std::string& cid : core_.handshaken_client_ids()) {
    send_to_client(cid, core_.control_message(MessageKind::Stop));
  }
  std::string snap_path = opts_.root_dir + "/snapshot-" +
                          std::to_string(snapshot_count_++) + ".json";
  {
    std::string tmp = snap_path + ".tmp";
    std::ofstream out(tmp, std::ios::trunc);
    out << snapshot_to_text(core_.snapshot());
    out.close();
    fs::rename(tmp, snap_path);
  }
  trace(Json{{"event", "snapshot_written"}, {"path", snap_path}});
  try {
    InstanceHandle h =
        engine_.create_instance("server", backup_launch_args(snap_path));
    core_.note_backup_created(h.name, now);
    trace(Json{{"event", "instance_created"},
               {"name", h.name},
               {"kind", "server"}});
    await_backup_deadline_ = now + core_.config().health.max_non_active_sec;
  } catch (const std::exception& e) {
    trace(Json{{"event", "backup_create_failed"}, {"error", e.what()}});
    next_backup_time_ =
        now + next_creation_delay(core_.config().backoff, backup_attempt_++);
    resume_clients();
    frozen_ = false;
    core_.set_frozen(false);
    trace(Json{{"event", "freeze_end"}, {"outcome", "create_failed"}});
    drain_held(now);
  }
}

void ServerNode::complete_freeze(const Envelope& env, double now) {
  exec(core_.handle_backup_handshake(env, now));
  resume_clients();
  frozen_ = false;
  core_.set_frozen(false);
  backup_attempt_ = 0;
  next_backup_time_ = 0;
  trace(Json{{"event", "freeze_end"}, {"outcome", "backup_live"}});
  drain_held(now);
}

void ServerNode::abandon_freeze(double now) {
  trace(Json{{"event", "backup_handshake_timeout"}});
  exec(core_.drop_backup("handshake timeout"));
  backup_out_.reset();
  next_backup_time_ =
      now + next_creation_delay(core_.config().backoff, backup_attempt_++);
  resume_clients();
  frozen_ = false;
  core_.set_frozen(false);
  trace(Json{{"event", "freeze_end"}, {"outcome", "handshake_timeout"}});
  drain_held(now);
}

void ServerNode::resume_clients() {
  for (const std::string& cid : core_.handshaken_client_ids()) {
    send_to_client(cid, core_.control_message(MessageKind::Resume));
  }
}

void ServerNode::drain_held(double now) {
  std::vector<std::pair<ConnRole, Envelope>> held;
  held.swap(held_);
  for (const auto& [role, env] : held) {
    dispatch_env(role, env, now);
  }
}

void ServerNode::promote(double now) {
  trace(Json{{"event", "primary_unhealthy"},
             {"last_health_age", now - core_.primary_last_health()}});
  primary_out_.reset();
  exec(core_.promote(now));
  std::vector<std::string> reaped;
  for (const auto& h : engine_.list_instances()) {
    if (h.kind != "client") continue;
    if (core_.clients().count(h.name)) continue;
    engine_.terminate_instance(h);
    reaped.push_back(h.name);
  }
  trace(Json{{"event", "dangling_cleanup"}, {"terminated", reaped}});
}

void ServerNode::finalize() {
  ResultTable table = core_.finalize_results();
  write_results_file(opts_.output_dir + "/results.tsv", table);
  core_.mark_results_written();
  trace(Json{{"event", "results_written"},
             {"path", opts_.output_dir + "/results.tsv"},
             {"rows", table.rows.size()}});
  if (core_.backup()) {
    exec(core_.drop_backup("experiment complete"));
  }
  trace(Json{{"event", "finalize"}});
  finalized_ = true;
}

void ServerNode::periodic(double now) {
  const ExperimentConfig& cfg = core_.config();
  if (core_.role() == ServerRole::Backup) {
    if (primary_out_ &&
        now - last_health_out_ >= cfg.health.update_period_sec) {
      last_health_out_ = now;
      Envelope env = core_.control_message(MessageKind::HealthUpdate);
      bool ok = primary_out_->send_line(encode(env));
      trace_send(env, "primary", ok, "send");
    }
    if (now - core_.primary_last_health() > cfg.health.update_limit_sec) {
      promote(now);
    }
    return;
  }
  if (frozen_) {
    if (now >= await_backup_deadline_) abandon_freeze(now);
    return;
  }
  if (backup_out_ && core_.backup() && core_.backup()->handshaken &&
      now - last_health_out_ >= cfg.health.update_period_sec) {
    last_health_out_ = now;
    send_to_backup(core_.control_message(MessageKind::HealthUpdate));
  }
  if (core_.backup() && core_.backup_unhealthy(now)) {
    trace(Json{{"event", "backup_unhealthy"}});
    exec(core_.drop_backup("health timeout"));
    backup_out_.reset();
    next_backup_time_ =
        now + next_creation_delay(cfg.backoff, backup_attempt_++);
  }
  if (core_.should_create_backup() && now >= next_backup_time_) {
    begin_freeze(now);
    return;
  }
  if (core_.want_client()) {
    try {
      InstanceHandle h =
          engine_.create_instance("client", client_launch_args());
      core_.note_client_created(h.name, now);
      trace(Json{{"event", "instance_created"},
                 {"name", h.name},
                 {"kind", "client"}});
    } catch (const EngineBusy&) {
      // At capacity; existing clients will drain the work.
    } catch (const EngineError& e) {
      trace(Json{{"event", "client_create_failed"}, {"error", e.what()}});
    }
  }
  for (const std::string& cid : core_.unhealthy_clients(now)) {
    trace(Json{{"event", "client_unhealthy"}, {"client_id", cid}});
    exec(core_.remove_client(cid, now, "health timeout"));
  }
  if (core_.all_done() && !core_.results_written()) {
    finalize();
  }
}

}  // namespace

int run_server_node(ServerCore core, Engine& engine,
                    const ServerNodeOptions& opts) {
  ServerNode node(std::move(core), engine, opts);
  return node.run();
}

}  // namespace gridsweep

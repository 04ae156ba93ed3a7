#include "gridsweep/client_node.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "gridsweep/client_core.hpp"
#include "gridsweep/net.hpp"
#include "gridsweep/util.hpp"
#include "gridsweep/workload.hpp"

namespace gridsweep {

namespace {

std::string self_exe() {
  char buf[4096];
  ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) return "/proc/self/exe";
  buf[n] = '\0';
  return buf;
}

enum class ConnRole { Unknown, PrimaryRecv, BackupRecv };

struct ConnInfo {
  ConnPtr conn;
  ConnRole role = ConnRole::Unknown;
};

struct WorkerProc {
  int64_t pid = 0;
  bool pipe_eof = false;
  bool reaped = false;
};

class ClientNode {
 public:
  explicit ClientNode(const ClientNodeOptions& opts)
      : opts_(opts),
        core_(opts.client_id,
              opts.cpus > 0
                  ? opts.cpus
                  : static_cast<int>(std::thread::hardware_concurrency()),
              HealthPolicy{opts.health_period_sec, 0, 0}) {}

  int run();

 private:
  void log(const std::string& text);
  void exec(const CEffects& fx);
  void handle_item(const Incoming& item, double now);
  void do_swap(double now);
  void spawn_worker(const TaskDescriptor& task);
  void reap(double now);
  void maybe_finish_worker(int64_t task_id, double now);

  ClientNodeOptions opts_;
  ClientCore core_;

  std::unique_ptr<TcpListener> listener_;
  std::thread accept_thread_;
  Mailbox<Incoming> mb_;
  std::mutex conns_mu_;
  uint64_t next_source_ = 1;
  std::map<uint64_t, ConnInfo> conns_;

  ConnPtr primary_out_;
  ConnPtr backup_out_;

  std::map<int64_t, WorkerProc> procs_;       // task_id -> process state
  std::map<uint64_t, int64_t> pipe_sources_;  // reader source -> task_id
  std::map<int64_t, int64_t> pid_tasks_;      // pid -> task_id
};

void ClientNode::log(const std::string& text) {
  std::fprintf(stderr, "[%.3f] %s %s\n", wall_now(), opts_.client_id.c_str(),
               text.c_str());
  std::fflush(stderr);
}

int ClientNode::run() {
  try {
    listener_ = std::make_unique<TcpListener>(opts_.bind_host, 0);
  } catch (const std::exception& e) {
    log(std::string("cannot listen: ") + e.what());
    return 1;
  }
  for (int attempt = 0; !primary_out_; ++attempt) {
    primary_out_ = tcp_dial(opts_.primary_address, opts_.primary_port, 2.0);
    if (!primary_out_) {
      if (attempt >= 20) {
        log("primary unreachable, giving up");
        return 1;
      }
      sleep_sec(0.25);
    }
  }
  Envelope hs = core_.make_handshake(opts_.bind_host, listener_->port());
  if (!primary_out_->send_line(encode(hs))) {
    log("handshake send failed");
    return 1;
  }
  log("handshake sent to " + opts_.primary_address + ":" +
      std::to_string(opts_.primary_port));

  accept_thread_ = std::thread([this] {
    while (ConnPtr conn = listener_->accept_conn()) {
      uint64_t sid;
      {
        std::lock_guard<std::mutex> lock(conns_mu_);
        sid = next_source_++;
        conns_[sid] = ConnInfo{conn, ConnRole::Unknown};
      }
      start_envelope_reader(conn, sid, mb_).detach();
    }
  });

  while (true) {
    auto item = mb_.pop(0.05);
    while (item) {
      handle_item(*item, mono_now());
      item = mb_.pop(0);
    }
    double now = mono_now();
    reap(now);
    exec(core_.tick(now));
    if (core_.should_exit()) {
      exec(core_.make_bye(now));
      log("all work finished, leaving");
      break;
    }
  }
  listener_->close_listener();
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto& [sid, info] : conns_) info.conn->shutdown_both();
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  return 0;
}

void ClientNode::handle_item(const Incoming& item, double now) {
  if (item.what == Incoming::What::Line) {
    auto src = pipe_sources_.find(item.source_id);
    if (src == pipe_sources_.end()) return;
    try {
      WorkerMessage m = WorkerMessage::decode_line(item.text);
      if (m.kind == WorkerMessage::Kind::Started) {
        exec(core_.on_worker_started(m.task_id, now));
      } else {
        exec(core_.on_worker_done(m.task_id, m.result_values, m.result_titles,
                                  now));
      }
    } catch (const DecodeError& e) {
      log(std::string("bad worker line: ") + e.what());
    }
    return;
  }
  if (item.what == Incoming::What::BadLine) {
    log("undecodable server message: " + item.text);
    return;
  }
  if (item.what == Incoming::What::Eof) {
    auto src = pipe_sources_.find(item.source_id);
    if (src != pipe_sources_.end()) {
      int64_t task_id = src->second;
      pipe_sources_.erase(src);
      auto proc = procs_.find(task_id);
      if (proc != procs_.end()) {
        proc->second.pipe_eof = true;
        maybe_finish_worker(task_id, now);
      }
      return;
    }
    ConnRole role = ConnRole::Unknown;
    {
      std::lock_guard<std::mutex> lock(conns_mu_);
      auto it = conns_.find(item.source_id);
      if (it == conns_.end()) return;
      role = it->second.role;
      conns_.erase(it);
    }
    if (role == ConnRole::BackupRecv) {
      log("backup channel lost");
      core_.note_backup_channel_lost();
      backup_out_.reset();
    } else if (role == ConnRole::PrimaryRecv) {
      // The primary is gone. Keep working; a promoted backup will send
      // SWAP_QUEUES when it takes over.
      log("primary channel lost, awaiting takeover");
    }
    return;
  }
  // Envelope.
  ConnRole role;
  ConnPtr conn;
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    auto it = conns_.find(item.source_id);
    if (it == conns_.end()) return;
    if (it->second.role == ConnRole::Unknown) {
      if (item.env.kind == MessageKind::Handshake) {
        std::string hk = item.env.body.value("kind", "");
        if (hk == "primary") {
          it->second.role = ConnRole::PrimaryRecv;
        } else if (hk == "backup") {
          it->second.role = ConnRole::BackupRecv;
        } else {
          it->second.conn->shutdown_both();
          return;
        }
      } else if (item.env.kind == MessageKind::SwapQueues) {
        // Temporary connection from a promoted backup.
        do_swap(now);
        it->second.conn->shutdown_both();
        return;
      } else {
        it->second.conn->shutdown_both();
        return;
      }
    }
    role = it->second.role;
    conn = it->second.conn;
  }
  if (item.env.kind == MessageKind::SwapQueues) {
    do_swap(now);
    return;
  }
  if (role == ConnRole::BackupRecv &&
      item.env.kind == MessageKind::Handshake) {
    // A fresh backup introduces itself with its own listen endpoint; dial it
    // to open the client->backup direction, then start mirroring.
    std::string addr = item.env.body.value("listen_address", "");
    int port = item.env.body.value("listen_port", 0);
    ConnPtr out = tcp_dial(addr, port, 5.0);
    if (!out) {
      log("backup dial-back failed");
      return;
    }
    backup_out_ = out;
    backup_out_->send_line(
        encode(core_.make_handshake(opts_.bind_host, listener_->port())));
    core_.note_backup_channel();
    log("backup channel established with " + item.env.sender_id);
    return;
  }
  exec(core_.on_server_message(item.env, role == ConnRole::BackupRecv, now));
}

void ClientNode::do_swap(double now) {
  log("swap: promoting backup channel");
  exec(core_.on_swap(now));
  if (backup_out_) {
    primary_out_ = backup_out_;
    backup_out_.reset();
  }
  std::lock_guard<std::mutex> lock(conns_mu_);
  for (auto& [sid, info] : conns_) {
    if (info.role == ConnRole::BackupRecv) info.role = ConnRole::PrimaryRecv;
  }
}

void ClientNode::exec(const CEffects& fx) {
  for (const CEffect& effect : fx) {
    std::visit(
        [&](const auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, ClientSendFx>) {
            std::string line = encode(e.env);
            if (e.to_primary) {
              if (!primary_out_ || !primary_out_->send_line(line)) {
                log("send to primary failed: " +
                    std::string(to_string(e.env.kind)));
              }
            }
            if (e.to_backup && backup_out_) {
              backup_out_->send_line(line);
            }
          } else if constexpr (std::is_same_v<T, SpawnWorkerFx>) {
            spawn_worker(e.task);
          } else if constexpr (std::is_same_v<T, KillWorkerFx>) {
            auto it = procs_.find(e.task_id);
            if (it != procs_.end() && it->second.pid > 0) {
              kill(-static_cast<pid_t>(it->second.pid), SIGKILL);
              kill(static_cast<pid_t>(it->second.pid), SIGKILL);
            }
          } else if constexpr (std::is_same_v<T, ClientLogFx>) {
            log(e.text);
          }
        },
        effect);
  }
}

void ClientNode::spawn_worker(const TaskDescriptor& task) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
    log("pipe failed, cannot start worker");
    exec(core_.on_worker_exit(task.task_id, mono_now()));
    return;
  }
  std::string exe = self_exe();
  pid_t pid = fork();
  if (pid < 0) {
    log("fork failed");
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    exec(core_.on_worker_exit(task.task_id, mono_now()));
    return;
  }
  if (pid == 0) {
    setpgid(0, 0);
    dup2(in_pipe[0], 0);
    dup2(out_pipe[1], 1);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl(exe.c_str(), exe.c_str(), "worker", static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  close(in_pipe[0]);
  close(out_pipe[1]);
  {
    std::string payload = task.to_json().dump() + "\n";
    ssize_t off = 0;
    while (off < static_cast<ssize_t>(payload.size())) {
      ssize_t n = write(in_pipe[1], payload.data() + off,
                        payload.size() - off);
      if (n <= 0) break;
      off += n;
    }
    close(in_pipe[1]);
  }
  uint64_t sid;
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    sid = next_source_++;
  }
  pipe_sources_[sid] = task.task_id;
  procs_[task.task_id] = WorkerProc{pid, false, false};
  pid_tasks_[pid] = task.task_id;
  start_fd_line_reader(out_pipe[0], sid, mb_).detach();
  log("worker started for task " + std::to_string(task.task_id) + " pid " +
      std::to_string(pid));
}

void ClientNode::reap(double now) {
  while (true) {
    int status = 0;
    pid_t pid = waitpid(-1, &status, WNOHANG);
    if (pid <= 0) break;
    auto it = pid_tasks_.find(pid);
    if (it == pid_tasks_.end()) continue;
    int64_t task_id = it->second;
    pid_tasks_.erase(it);
    auto proc = procs_.find(task_id);
    if (proc != procs_.end()) {
      proc->second.reaped = true;
      maybe_finish_worker(task_id, now);
    }
  }
}

void ClientNode::maybe_finish_worker(int64_t task_id, double now) {
  auto it = procs_.find(task_id);
  if (it == procs_.end()) return;
  if (!it->second.pipe_eof || !it->second.reaped) return;
  procs_.erase(it);
  exec(core_.on_worker_exit(task_id, now));
}

}  // namespace

int run_client_node(const ClientNodeOptions& opts) {
  ClientNode node(opts);
  return node.run();
}

int run_worker() {
  std::string input((std::istreambuf_iterator<char>(std::cin)),
                    std::istreambuf_iterator<char>());
  TaskDescriptor task;
  try {
    task = TaskDescriptor::from_json(Json::parse(input));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bad task input: %s\n", e.what());
    return 1;
  }
  WorkerMessage started;
  started.kind = WorkerMessage::Kind::Started;
  started.task_id = task.task_id;
  started.timestamp = wall_now();
  std::fputs(started.encode_line().c_str(), stdout);
  std::fflush(stdout);
  WorkloadOutcome outcome;
  try {
    outcome = run_payload(task.payload);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "payload failed: %s\n", e.what());
    return 1;
  }
  WorkerMessage done;
  done.kind = WorkerMessage::Kind::Done;
  done.task_id = task.task_id;
  done.result_values = outcome.result_values;
  done.result_titles = outcome.result_titles;
  done.timestamp = wall_now();
  std::fputs(done.encode_line().c_str(), stdout);
  std::fflush(stdout);
  return 0;
}

}  // namespace gridsweep

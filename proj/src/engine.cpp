#include "gridsweep/engine.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;

namespace gridsweep {

namespace {

double wall_now() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool pid_alive(int64_t pid) {
  if (pid <= 0) return false;
  // A dead child lingers as a zombie (kill(pid, 0) still succeeds) until
  // reaped, so collect it first. Non-children fall through to the probe.
  if (waitpid(static_cast<pid_t>(pid), nullptr, WNOHANG) ==
      static_cast<pid_t>(pid)) {
    return false;
  }
  return kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM;
}

bool name_matches(const std::string& name, const std::string& kind,
                  const std::string& target) {
  if (name == target || kind == target) return true;
  std::string suffix = "-" + target;
  return name.size() > suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string self_exe() {
  char buf[4096];
  ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) throw EngineError("cannot resolve own executable path");
  return std::string(buf, static_cast<std::size_t>(n));
}

// Serialized via flock so ordinals are unique across the primary's and a
// promoted backup's engines.
int64_t next_ordinal(const std::string& registry_dir, const std::string& kind) {
  std::string path = registry_dir + "/.counter-" + kind;
  int fd = open(path.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd < 0) throw EngineError("cannot open counter file: " + path);
  flock(fd, LOCK_EX);
  char buf[32] = {0};
  ssize_t n = pread(fd, buf, sizeof(buf) - 1, 0);
  int64_t value = n > 0 ? strtoll(buf, nullptr, 10) : 0;
  std::string next = std::to_string(value + 1);
  if (ftruncate(fd, 0) != 0 ||
      pwrite(fd, next.c_str(), next.size(), 0) < 0) {
    flock(fd, LOCK_UN);
    close(fd);
    throw EngineError("cannot update counter file: " + path);
  }
  flock(fd, LOCK_UN);
  close(fd);
  return value;
}

}  // namespace

const char* to_string(NoteEvent::Type t) {
  switch (t) {
    case NoteEvent::Type::Send: return "send";
    case NoteEvent::Type::Recv: return "recv";
    case NoteEvent::Type::Forward: return "forward";
    case NoteEvent::Type::Created: return "created";
  }
  return "?";
}

Json InstanceHandle::to_json() const {
  return Json{{"name", name},       {"kind", kind}, {"address", address},
              {"port", port},       {"created_at", created_at},
              {"pid", pid}};
}

InstanceHandle InstanceHandle::from_json(const Json& j) {
  InstanceHandle h;
  h.name = j.at("name").get<std::string>();
  h.kind = j.at("kind").get<std::string>();
  h.address = j.value("address", "");
  h.port = j.value("port", 0);
  h.created_at = j.value("created_at", 0.0);
  h.pid = j.value("pid", int64_t{0});
  return h;
}

FaultSpec FaultSpec::from_json(const Json& j) {
  static const std::set<std::string> known = {"target", "after_sec", "event",
                                              "kind",   "peer",      "count",
                                              "delay_ms"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      throw std::invalid_argument("unknown key '" + it.key() +
                                  "' in fault plan entry");
    }
  }
  FaultSpec s;
  s.target = j.at("target").get<std::string>();
  s.after_sec = j.value("after_sec", -1.0);
  s.event = j.value("event", "");
  s.kind = j.value("kind", "");
  s.peer = j.value("peer", "");
  s.count = j.value("count", 1);
  s.delay_ms = j.value("delay_ms", 0);
  if ((s.after_sec >= 0) == !s.event.empty()) {
    throw std::invalid_argument(
        "fault plan entry needs exactly one of after_sec and event");
  }
  if (!s.event.empty() && s.event != "send" && s.event != "recv" &&
      s.event != "forward" && s.event != "created") {
    throw std::invalid_argument("unknown fault event: " + s.event);
  }
  if (s.count < 1) throw std::invalid_argument("fault count must be >= 1");
  return s;
}

std::vector<FaultSpec> parse_fault_plan(const Json& plan) {
  std::vector<FaultSpec> out;
  for (const Json& entry : plan) out.push_back(FaultSpec::from_json(entry));
  return out;
}

double next_creation_delay(const BackoffPolicy& policy, int attempt) {
  double d = policy.base_sec * std::pow(policy.factor, attempt);
  return std::min(d, policy.cap_sec);
}

LocalEngine::LocalEngine(std::string prefix, std::string registry_dir,
                         int max_clients)
    : prefix_(std::move(prefix)),
      registry_dir_(std::move(registry_dir)),
      max_clients_(max_clients) {
  fs::create_directories(registry_dir_);
}

void LocalEngine::set_spawn_command(std::vector<std::string> argv_prefix) {
  spawn_override_ = std::move(argv_prefix);
}

void LocalEngine::reap_owned() {
  for (int64_t pid : owned_pids_) {
    waitpid(static_cast<pid_t>(pid), nullptr, WNOHANG);
  }
}

std::vector<InstanceHandle> LocalEngine::list_instances() {
  reap_owned();
  std::vector<InstanceHandle> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(registry_dir_, ec)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) continue;
    InstanceHandle h = InstanceHandle::from_json(j);
    if (h.name.rfind(prefix_ + "-", 0) != 0) continue;
    if (!pid_alive(h.pid)) {
      fs::remove(entry.path(), ec);
      continue;
    }
    out.push_back(std::move(h));
  }
  std::sort(out.begin(), out.end(),
            [](const InstanceHandle& a, const InstanceHandle& b) {
              return std::tie(a.created_at, a.name) <
                     std::tie(b.created_at, b.name);
            });
  return out;
}

InstanceHandle LocalEngine::create_instance(
    const std::string& kind, const std::vector<std::string>& launch_args) {
  if (kind != "client" && kind != "server") {
    throw EngineError("unknown instance kind: " + kind);
  }
  if (kind == "client") {
    int live = 0;
    for (const InstanceHandle& h : list_instances()) {
      if (h.kind == "client") ++live;
    }
    if (live >= max_clients_) {
      throw EngineBusy("client capacity reached (" +
                       std::to_string(max_clients_) + ")");
    }
  }

  InstanceHandle h;
  h.kind = kind;
  h.name = prefix_ + "-" + kind + "-" +
           std::to_string(next_ordinal(registry_dir_, kind));
  h.created_at = wall_now();

  std::vector<std::string> argv;
  if (!spawn_override_.empty()) {
    argv = spawn_override_;
  } else {
    argv = {self_exe(), kind == "client" ? "client" : "backup"};
  }
  for (std::string arg : launch_args) {
    std::size_t pos;
    while ((pos = arg.find("{name}")) != std::string::npos) {
      arg.replace(pos, 6, h.name);
    }
    argv.push_back(std::move(arg));
  }

  std::string log_path = registry_dir_ + "/" + h.name + ".out";
  pid_t pid = fork();
  if (pid < 0) throw EngineError("fork failed");
  if (pid == 0) {
    setpgid(0, 0);
    int devnull = open("/dev/null", O_RDONLY);
    if (devnull >= 0) dup2(devnull, 0);
    int logfd = open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (logfd >= 0) {
      dup2(logfd, 1);
      dup2(logfd, 2);
    }
    std::vector<char*> cargv;
    for (std::string& s : argv) cargv.push_back(s.data());
    cargv.push_back(nullptr);
    execv(cargv[0], cargv.data());
    _exit(127);
  }
  setpgid(pid, pid);  // both sides set it to close the race
  h.pid = pid;
  owned_pids_.push_back(pid);

  std::ofstream out(registry_dir_ + "/" + h.name + ".json");
  out << h.to_json().dump() << "\n";
  if (!out) throw EngineError("cannot write instance registry entry");
  return h;
}

bool LocalEngine::terminate_instance(const InstanceHandle& h) {
  reap_owned();
  std::string path = registry_dir_ + "/" + h.name + ".json";
  std::error_code ec;
  bool known = fs::exists(path, ec);
  if (h.pid > 0) {
    kill(static_cast<pid_t>(-h.pid), SIGKILL);
    kill(static_cast<pid_t>(h.pid), SIGKILL);
  }
  fs::remove(path, ec);
  return known;
}

SimEngine::SimEngine(std::string prefix, std::string registry_dir,
                     int max_clients, std::vector<FaultSpec> plan,
                     bool initial_process)
    : LocalEngine(std::move(prefix), std::move(registry_dir), max_clients),
      initial_process_(initial_process),
      start_time_(wall_now()) {
  for (FaultSpec& s : plan) plan_.push_back(PlanEntry{std::move(s), 0, false});
  bool has_timers = std::any_of(plan_.begin(), plan_.end(), [](const PlanEntry& e) {
    return e.spec.after_sec >= 0;
  });
  if (has_timers) {
    timer_ = std::thread([this] {
      std::unique_lock<std::mutex> lock(mu_);
      while (!stop_timer_) {
        double next = -1;
        for (const PlanEntry& e : plan_) {
          if (e.fired || e.spec.after_sec < 0) continue;
          double due = start_time_ + e.spec.after_sec;
          if (next < 0 || due < next) next = due;
        }
        if (next < 0) return;
        double wait = next - wall_now();
        if (wait > 0) {
          timer_cv_.wait_for(lock, std::chrono::duration<double>(wait));
          continue;
        }
        for (PlanEntry& e : plan_) {
          if (e.fired || e.spec.after_sec < 0) continue;
          if (wall_now() >= start_time_ + e.spec.after_sec) {
            e.fired = true;
            FaultSpec spec = e.spec;
            lock.unlock();
            fire(spec);
            lock.lock();
          }
        }
      }
    });
  }
}

SimEngine::~SimEngine() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_timer_ = true;
  }
  timer_cv_.notify_all();
  if (timer_.joinable()) timer_.join();
}

InstanceHandle SimEngine::create_instance(
    const std::string& kind, const std::vector<std::string>& launch_args) {
  InstanceHandle h = LocalEngine::create_instance(kind, launch_args);
  note_event(NoteEvent{NoteEvent::Type::Created, kind, h.name});
  return h;
}

void SimEngine::note_event(const NoteEvent& ev) {
  std::vector<FaultSpec> due;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (PlanEntry& e : plan_) {
      if (e.fired || e.spec.event.empty()) continue;
      if (e.spec.event != to_string(ev.type)) continue;
      if (!e.spec.kind.empty() && e.spec.kind != ev.kind) continue;
      if (!e.spec.peer.empty() && !name_matches(ev.peer, "", e.spec.peer)) {
        continue;
      }
      if (++e.matched == e.spec.count) {
        e.fired = true;
        due.push_back(e.spec);
      }
    }
  }
  for (const FaultSpec& spec : due) fire(spec);
}

void SimEngine::fire(const FaultSpec& spec) {
  if (spec.delay_ms > 0) {
    std::thread([this, spec] {
      std::this_thread::sleep_for(std::chrono::milliseconds(spec.delay_ms));
      kill_target(spec);
    }).detach();
  } else {
    kill_target(spec);
  }
}

void SimEngine::kill_target(const FaultSpec& spec) {
  if (spec.target == "primary") {
    // Models sudden death of the hosting server process itself.
    if (initial_process_) kill(getpid(), SIGKILL);
    return;
  }
  for (const InstanceHandle& h : list_instances()) {
    if (!name_matches(h.name, h.kind, spec.target)) continue;
    // Silent stop: the registry entry stays until a liveness scan drops it.
    kill(static_cast<pid_t>(-h.pid), SIGKILL);
    kill(static_cast<pid_t>(h.pid), SIGKILL);
    return;
  }
}

std::unique_ptr<Engine> make_engine(const ExperimentConfig& config,
                                    const std::string& registry_dir,
                                    bool initial_process) {
  if (config.engine == "local") {
    return std::make_unique<LocalEngine>(config.engine_config.prefix,
                                         registry_dir,
                                         config.engine_config.max_clients);
  }
  if (config.engine == "sim") {
    return std::make_unique<SimEngine>(
        config.engine_config.prefix, registry_dir,
        config.engine_config.max_clients, parse_fault_plan(config.fault_plan),
        initial_process);
  }
  throw EngineError("unknown engine: " + config.engine);
}

}  // namespace gridsweep

#pragma once

#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gridsweep/config.hpp"

namespace gridsweep {

// A live compute instance as known to the engine. address/port stay empty
// until the instance reports its listen endpoint in its handshake.
struct InstanceHandle {
  std::string name;  // prefix + "-" + kind + "-" + ordinal
  std::string kind;  // "client" | "server"
  std::string address;
  int port = 0;
  double created_at = 0;  // unix seconds
  int64_t pid = 0;

  Json to_json() const;
  static InstanceHandle from_json(const Json& j);
};

// Retriable: instance quota reached or platform rate limit hit.
struct EngineBusy : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EngineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A protocol-level event observed by the hosting server, reported to the
// engine so a simulated fault plan can key kills off the message flow.
struct NoteEvent {
  enum class Type { Send, Recv, Forward, Created };
  Type type = Type::Send;
  std::string kind;  // message kind name; instance kind for Created
  std::string peer;  // remote instance id; instance name for Created
};

const char* to_string(NoteEvent::Type t);

// One simulated-fault trigger: kill `target` either `after_sec` of wall
// clock, or when the `count`-th event matching (event, kind, peer) is
// observed. Fires at most once.
struct FaultSpec {
  std::string target;  // "primary", an instance name, a "-" suffix, or a kind
  double after_sec = -1;
  std::string event;  // "send" | "recv" | "forward" | "created"
  std::string kind;   // empty: any
  std::string peer;   // empty: any; else exact or "-" suffix match
  int count = 1;
  int delay_ms = 0;  // pause between trigger and kill

  static FaultSpec from_json(const Json& j);
};

std::vector<FaultSpec> parse_fault_plan(const Json& plan);

// delay = base * factor^attempt, capped; callers reset attempt to 0 after a
// successful creation.
double next_creation_delay(const BackoffPolicy& policy, int attempt);

class Engine {
 public:
  virtual ~Engine() = default;
  // Starts an instance of the given kind ("client" | "server") running the
  // matching entry point with launch_args; any "{name}" argument is replaced
  // with the generated instance name. Throws EngineBusy at client capacity,
  // EngineError on spawn failure.
  virtual InstanceHandle create_instance(
      const std::string& kind, const std::vector<std::string>& launch_args) = 0;
  // Idempotent; false if the handle is unknown (caller logs a warning).
  virtual bool terminate_instance(const InstanceHandle& h) = 0;
  // Exactly the live instances carrying this engine's prefix.
  virtual std::vector<InstanceHandle> list_instances() = 0;
  virtual void note_event(const NoteEvent&) {}
};

// Runs instances as local OS processes (each in its own process group) and
// keeps the live-instance registry in a shared directory, so an engine in a
// promoted backup sees instances created by the dead primary.
class LocalEngine : public Engine {
 public:
  LocalEngine(std::string prefix, std::string registry_dir, int max_clients);

  InstanceHandle create_instance(
      const std::string& kind,
      const std::vector<std::string>& launch_args) override;
  bool terminate_instance(const InstanceHandle& h) override;
  std::vector<InstanceHandle> list_instances() override;

  // Test hook: replaces the default argv prefix (this executable + the
  // matching subcommand) for spawned instances.
  void set_spawn_command(std::vector<std::string> argv_prefix);

 protected:
  std::string prefix_;
  std::string registry_dir_;
  int max_clients_;
  std::vector<std::string> spawn_override_;
  std::vector<int64_t> owned_pids_;

  void reap_owned();
};

// LocalEngine plus fault injection driven by wall-clock timers and observed
// protocol events.
class SimEngine : public LocalEngine {
 public:
  SimEngine(std::string prefix, std::string registry_dir, int max_clients,
            std::vector<FaultSpec> plan, bool initial_process);
  ~SimEngine() override;

  InstanceHandle create_instance(
      const std::string& kind,
      const std::vector<std::string>& launch_args) override;
  void note_event(const NoteEvent& ev) override;

 private:
  struct PlanEntry {
    FaultSpec spec;
    int matched = 0;
    bool fired = false;
  };

  std::mutex mu_;
  std::vector<PlanEntry> plan_;
  // Plans targeting "primary" are honored only by the initial run process; a
  // promoted backup must not re-kill itself.
  bool initial_process_;
  std::thread timer_;
  bool stop_timer_ = false;
  std::condition_variable timer_cv_;
  double start_time_ = 0;

  void fire(const FaultSpec& spec);
  void kill_target(const FaultSpec& spec);
};

// Builds the engine named by config.engine. registry_dir is shared by all
// servers of one experiment; initial_process marks the user-invoked run
// process (the one "primary"-targeted faults apply to).
std::unique_ptr<Engine> make_engine(const ExperimentConfig& config,
                                    const std::string& registry_dir,
                                    bool initial_process);

}  // namespace gridsweep

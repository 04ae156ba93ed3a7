#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gridsweep/config.hpp"
#include "gridsweep/protocol.hpp"
#include "gridsweep/task.hpp"

namespace gridsweep {

enum class WorkerPhase { Starting, Running, Done, Terminated };

const char* to_string(WorkerPhase phase);

struct WorkerSlot {
  TaskDescriptor task;
  WorkerPhase phase = WorkerPhase::Starting;
  double started_at = 0;  // set when WORKER_STARTED is received
};

// Deliver env to the named destinations. Mirrored messages set both flags
// and carry one shared seq; health updates go to one destination each under
// their own seq.
struct ClientSendFx {
  Envelope env;
  bool to_primary = false;
  bool to_backup = false;
};
struct SpawnWorkerFx {
  TaskDescriptor task;
};
struct KillWorkerFx {
  int64_t task_id = 0;
};
// Local diagnostic line (ends up on the instance's captured stderr).
struct ClientLogFx {
  std::string text;
};

using CEffect =
    std::variant<ClientSendFx, SpawnWorkerFx, KillWorkerFx, ClientLogFx>;
using CEffects = std::vector<CEffect>;

// The client state machine: pulls tasks, runs workers, reports results and
// timeouts, and keeps the primary/backup copies of mirrored traffic paired.
// The hosting node owns sockets and worker processes; `now` is monotonic.
class ClientCore {
 public:
  ClientCore(std::string client_id, int cpus, HealthPolicy health);

  // Envelope from a server channel. from_backup selects the dedup side for
  // mirrored kinds; control kinds act immediately.
  CEffects on_server_message(const Envelope& env, bool from_backup,
                             double now);

  // SWAP_QUEUES: the backup channel becomes the primary channel. Held
  // mirrored copies whose primary twin never arrived are acted on now, in
  // arrival order. Safe to call twice.
  CEffects on_swap(double now);

  // A fresh backup introduced itself (its channel pair is live). Resets
  // pairing state: the new backup's seqs start at the snapshot point, which
  // already reflects everything acted on so far.
  void note_backup_channel();
  void note_backup_channel_lost();
  bool have_backup_channel() const { return have_backup_channel_; }

  // Worker lifecycle, reported by the node.
  CEffects on_worker_started(int64_t task_id, double now);
  CEffects on_worker_done(int64_t task_id, ParamTuple values,
                          std::vector<std::string> titles, double now);
  // Process reaped. A slot still Starting/Running at exit means the worker
  // died without reporting: its task goes back via EXCEPTION.
  CEffects on_worker_exit(int64_t task_id, double now);

  // Periodic driver call: health updates, task requests, timeout scans,
  // worker spawns.
  CEffects tick(double now);

  bool should_exit() const;
  CEffects make_bye(double now);
  bool bye_sent() const { return bye_sent_; }

  // Introduction sent as the first envelope when dialing a server.
  Envelope make_handshake(const std::string& listen_address, int listen_port);

  bool stopped() const { return stopped_; }
  bool no_further() const { return no_further_; }
  const std::map<int64_t, WorkerSlot>& workers() const { return workers_; }
  const std::deque<TaskDescriptor>& pending() const { return pending_; }
  std::size_t held_mirrors() const { return mirror_unacted_.size(); }
  int64_t next_seq() const { return seq_; }
  const std::string& client_id() const { return client_id_; }

 private:
  CEffects act_on_mirrored(const Envelope& env, double now);
  CEffects accept_grant(const Envelope& env, double now);
  CEffects apply_domino(const Hardness& h, double now);
  CEffects spawn_ready();
  Envelope next_envelope(MessageKind kind, Json body);
  // Assigns a seq and either emits the send (primary + live backup) or, while
  // stopped, buffers the envelope for the RESUME flush.
  CEffects send_mirrored(MessageKind kind, Json body);

  std::string client_id_;
  int cpus_ = 1;
  HealthPolicy health_;

  int64_t seq_ = 0;  // one counter for every server-bound message
  bool stopped_ = false;
  bool no_further_ = false;
  bool outstanding_request_ = false;
  bool bye_sent_ = false;
  double last_health_ = -1e18;

  std::deque<TaskDescriptor> pending_;
  std::map<int64_t, WorkerSlot> workers_;
  std::set<int64_t> seen_granted_;
  std::deque<Envelope> outbox_;  // buffered while stopped; seqs pre-assigned

  // Pairing of mirrored server->client copies.
  bool have_backup_channel_ = false;
  std::set<std::pair<int64_t, MessageKind>> acted_;
  std::deque<Envelope> mirror_unacted_;
  int64_t max_acted_seq_ = -1;
};

}  // namespace gridsweep

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "gridsweep/config.hpp"
#include "gridsweep/hardness.hpp"
#include "gridsweep/protocol.hpp"
#include "gridsweep/results.hpp"
#include "gridsweep/task.hpp"

namespace gridsweep {

enum class ServerRole { Primary, Backup };

const char* to_string(ServerRole role);

// One known client instance. created_at/last_health are monotonic clock
// readings; the local and simulated engines run everything on one machine,
// where that clock is shared, so the values survive snapshotting.
struct ClientRecord {
  std::string client_id;  // == instance name
  std::string address;
  int port = 0;
  bool handshaken = false;
  double created_at = 0;
  double last_health = 0;
  std::set<int64_t> assigned;
  // Replicated: next seq for mirrored server->client messages. Primary and
  // backup advance it through identical processing, which is what makes the
  // two copies of a mirrored message carry equal (sender, seq, kind).
  int64_t outbound_seq = 0;

  Json to_json() const;
  static ClientRecord from_json(const Json& j);
};

struct BackupRecord {
  std::string server_id;  // == instance name
  std::string address;
  int port = 0;
  bool handshaken = false;
  double created_at = 0;
  double last_health = 0;
};

// Effects requested from the hosting node. The node performs the I/O and
// writes the message trace; the core only mutates state.
struct SendToClientFx {
  std::string client_id;
  Envelope env;
};
struct SendToBackupFx {
  Envelope env;
};
// Dial the client's listen endpoint to form the server->client direction.
struct ConnectToClientFx {
  std::string client_id;
  std::string address;
  int port = 0;
};
struct ConnectToBackupFx {
  std::string address;
  int port = 0;
};
// Dial a temporary connection, deliver env, close. Used for SWAP_QUEUES.
struct SwapClientFx {
  std::string client_id;
  std::string address;
  int port = 0;
  Envelope env;
};
struct TerminateInstanceFx {
  std::string name;
};
// Append one line to <root>/clients/<client_id>/events.log.
struct ClientEventFx {
  std::string client_id;
  std::string text;
};
struct TraceFx {
  Json record;
};

using Effect =
    std::variant<SendToClientFx, SendToBackupFx, ConnectToClientFx,
                 ConnectToBackupFx, SwapClientFx, TerminateInstanceFx,
                 ClientEventFx, TraceFx>;
using Effects = std::vector<Effect>;

// The replicable server state machine. All methods are synchronous and
// non-blocking; `now` is monotonic seconds supplied by the caller.
class ServerCore {
 public:
  // Fresh primary owning the full workload.
  ServerCore(ExperimentConfig config, std::string server_id,
             std::vector<TaskDescriptor> tasks);

  // Restores a snapshotted server; it starts in the Backup role.
  static ServerCore from_snapshot(const Json& snap, std::string server_id);

  // --- Primary role -------------------------------------------------------

  // Client-originated message (HANDSHAKE, HEALTH_UPDATE, REQUEST_TASKS,
  // RESULT, REPORT_HARD_TASK, LOG, EXCEPTION, BYE). Forwards a copy of every
  // handled message except HEALTH_UPDATE and HANDSHAKE to a live backup
  // before acting on it; HANDSHAKE is announced as NEW_CLIENT instead.
  Effects handle_client_message(const Envelope& env, double now);

  Effects handle_backup_handshake(const Envelope& env, double now);
  void note_backup_health(double now);
  void note_backup_created(const std::string& instance_name, double now);
  void note_client_created(const std::string& instance_name, double now);

  // Handshaken clients silent past update_limit_sec, plus instances that
  // never handshook within max_non_active_sec.
  std::vector<std::string> unhealthy_clients(double now) const;
  bool backup_unhealthy(double now) const;

  // Reassigns the client's tasks, terminates its instance and tells the
  // backup. Also used for BYE-less disappearance.
  Effects remove_client(const std::string& client_id, double now,
                        const std::string& reason);
  Effects drop_backup(const std::string& reason);

  bool should_create_backup() const;
  // True while unassigned work remains that a new client could pull.
  bool want_client() const;

  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  // Unmirrored control message from this server (STOP, RESUME, SWAP_QUEUES,
  // HEALTH_UPDATE to backup, NEW_CLIENT, CLIENT_TERMINATED).
  Envelope control_message(MessageKind kind, Json body = Json::object());

  std::vector<std::string> handshaken_client_ids() const;

  // --- Backup role --------------------------------------------------------

  // Message on the primary->backup link: the primary's health, NEW_CLIENT,
  // CLIENT_TERMINATED, or a forwarded client message (acted on exactly like
  // the primary acted, which keeps the replicated state in lockstep).
  Effects handle_forwarded(const Envelope& env, double now);

  // Message a client sent directly to the backup: health updates feed
  // liveness, everything else is deduplicated against forwarded copies and
  // held for failover replay.
  Effects handle_direct(const Envelope& env, double now);

  double primary_last_health() const { return primary_last_health_; }
  // Seeds the liveness clock when the backup starts, before any forward.
  void note_primary_health(double now) { primary_last_health_ = now; }

  // Failover: becomes primary, emits SWAP_QUEUES for every client, then
  // replays all held direct copies as if primary-received.
  Effects promote(double now);

  // --- Completion ---------------------------------------------------------

  // Every task terminal and no clients left.
  bool all_done() const;
  bool results_written() const { return results_written_; }
  void mark_results_written() { results_written_ = true; }
  // Rows of Done tasks whose group kept >= min_group_size Done members,
  // restored to original order.
  ResultTable finalize_results() const;

  // --- Replication --------------------------------------------------------

  Json snapshot() const;
  // Replication-relevant state only; equal digests mean primary and backup
  // agree on assignment progress.
  Json digest() const;

  // --- Introspection ------------------------------------------------------

  ServerRole role() const { return role_; }
  const ExperimentConfig& config() const { return config_; }
  const std::string& server_id() const { return server_id_; }
  const std::map<std::string, ClientRecord>& clients() const {
    return clients_;
  }
  const std::optional<BackupRecord>& backup() const { return backup_; }
  const std::vector<TaskDescriptor>& ordered_tasks() const { return ordered_; }
  TaskPhase phase_of(int64_t task_id) const;
  const MinAntichain& min_hard() const { return min_hard_; }
  const std::deque<int64_t>& tasks_from_failed() const {
    return tasks_from_failed_;
  }
  std::size_t cursor() const { return cursor_; }

  // Every task in exactly one phase, reassignment queue free of terminal
  // tasks, assigned sets consistent with statuses.
  bool invariants_ok() const;

 private:
  ServerCore() = default;

  Effects act_on_client_message(const Envelope& env, double now, bool forward,
                                bool replayed);
  Effects assign_tasks(const std::string& client_id, int count);
  Effects register_timeout(const Hardness& h, int64_t task_id);
  Effects handle_result(const Envelope& env);
  Effects handle_log(const Envelope& env);
  Effects handle_exception(const Envelope& env);
  Effects handle_bye(const Envelope& env, double now);
  Effects handle_client_handshake(const Envelope& env, double now);

  Envelope make_mirrored(ClientRecord& rec, MessageKind kind, Json body);
  void set_phase(int64_t task_id, TaskPhase phase, const std::string& client);
  void move_assigned_to_failed(ClientRecord& rec, Effects& fx);
  const TaskDescriptor* find_task(int64_t task_id) const;

  ExperimentConfig config_;
  std::string server_id_;
  ServerRole role_ = ServerRole::Primary;

  std::vector<TaskDescriptor> ordered_;  // linear-extension order
  std::map<int64_t, std::size_t> index_;  // task_id -> position in ordered_
  std::map<int64_t, TaskStatus> status_;
  std::deque<int64_t> tasks_from_failed_;
  MinAntichain min_hard_;
  std::size_t cursor_ = 0;

  std::map<std::string, ClientRecord> clients_;
  std::optional<BackupRecord> backup_;
  std::set<std::string> no_further_sent_;

  std::map<int64_t, ParamTuple> results_;
  std::vector<std::string> result_titles_;
  bool results_written_ = false;

  bool frozen_ = false;
  int64_t control_seq_ = 0;  // process-local, never replicated

  // Backup-role replication bookkeeping (never snapshotted).
  double primary_last_health_ = 0;
  std::map<std::string, int64_t> max_forwarded_;
  std::map<std::string, std::deque<Envelope>> held_direct_;
};

// Snapshot file format: one self-describing record per state field, using
// the wire encoding of JSON objects, one per line.
std::string snapshot_to_text(const Json& snap);
Json snapshot_from_text(const std::string& text);

}  // namespace gridsweep

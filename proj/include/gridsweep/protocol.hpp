#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridsweep/task.hpp"
#include "json.hpp"

namespace gridsweep {

// Every message that can travel between servers, clients and workers.
enum class MessageKind {
  Handshake,
  HealthUpdate,
  RequestTasks,
  GrantTasks,
  NoFurtherTasks,
  Result,
  ReportHardTask,
  ApplyDominoEffect,
  Log,
  Exception,
  Bye,
  Stop,
  Resume,
  SwapQueues,
  NewClient,
  ClientTerminated,
};

const char* to_string(MessageKind kind);
std::optional<MessageKind> message_kind_from_string(const std::string& s);

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One protocol message. seq values strictly increase per sender; the two
// copies of one logical message (primary copy and backup copy) carry the same
// seq, which is what makes two-copy deduplication possible.
struct Envelope {
  MessageKind kind = MessageKind::HealthUpdate;
  std::string sender_id;
  int64_t seq = 0;
  Json body = Json::object();

  bool operator==(const Envelope& other) const = default;
};

// Serializes to one newline-terminated UTF-8 JSON record. decode(encode(e))
// is the identity on valid envelopes.
std::string encode(const Envelope& env);

// Parses one record (trailing newline optional). Throws DecodeError on
// malformed input or an unknown kind.
Envelope decode(const std::string& line);

// True iff two envelopes are copies of the same logical message: equal
// sender, seq and kind.
bool dedup_match(const Envelope& a, const Envelope& b);

// Body constructors; keeps each kind's schema in one place.
namespace body {

// Handshake `kind` values: "client" and "backup" identify instances dialing a
// server's handshake port; "primary" identifies a server dialing back to form
// the reverse direction of a channel.
Json handshake(const std::string& kind, const std::string& listen_address,
               int listen_port);
Json request_tasks(int count);
Json grant_tasks(const std::vector<TaskDescriptor>& tasks);
Json result(int64_t task_id, const ParamTuple& result_values,
            const std::vector<std::string>& result_titles);
Json report_hard_task(const Hardness& hardness, int64_t task_id);
Json apply_domino_effect(const Hardness& hardness);
// `event` may carry a structured payload the server acts on, e.g.
// {"type":"domino_kill","task_id":N} or {"type":"worker_crashed","task_id":N}.
Json log_event(const std::string& text, double timestamp,
               const Json& event = Json());
Json new_client(const std::string& client_id, const std::string& address,
                int port);
Json client_terminated(const std::string& client_id);

}  // namespace body

// Messages a worker process writes to its pipe: WORKER_STARTED, then
// WORKER_DONE with the result tuple. Uses the wire encoding.
struct WorkerMessage {
  enum class Kind { Started, Done } kind = Kind::Started;
  int64_t task_id = 0;
  ParamTuple result_values;                // Done only
  std::vector<std::string> result_titles;  // Done only
  double timestamp = 0;

  std::string encode_line() const;
  static WorkerMessage decode_line(const std::string& line);
};

}  // namespace gridsweep

#include "gridsweep/protocol.hpp"

namespace gridsweep {

namespace {

struct KindName {
  MessageKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {MessageKind::Handshake, "HANDSHAKE"},
    {MessageKind::HealthUpdate, "HEALTH_UPDATE"},
    {MessageKind::RequestTasks, "REQUEST_TASKS"},
    {MessageKind::GrantTasks, "GRANT_TASKS"},
    {MessageKind::NoFurtherTasks, "NO_FURTHER_TASKS"},
    {MessageKind::Result, "RESULT"},
    {MessageKind::ReportHardTask, "REPORT_HARD_TASK"},
    {MessageKind::ApplyDominoEffect, "APPLY_DOMINO_EFFECT"},
    {MessageKind::Log, "LOG"},
    {MessageKind::Exception, "EXCEPTION"},
    {MessageKind::Bye, "BYE"},
    {MessageKind::Stop, "STOP"},
    {MessageKind::Resume, "RESUME"},
    {MessageKind::SwapQueues, "SWAP_QUEUES"},
    {MessageKind::NewClient, "NEW_CLIENT"},
    {MessageKind::ClientTerminated, "CLIENT_TERMINATED"},
};

}  // namespace

const char* to_string(MessageKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

std::optional<MessageKind> message_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames) {
    if (s == kn.name) return kn.kind;
  }
  return std::nullopt;
}

std::string encode(const Envelope& env) {
  Json j{{"kind", to_string(env.kind)},
         {"sender_id", env.sender_id},
         {"seq", env.seq},
         {"body", env.body}};
  std::string line = j.dump();
  line.push_back('\n');
  return line;
}

Envelope decode(const std::string& line) {
  Json j = Json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw DecodeError("malformed record");
  }
  Envelope env;
  try {
    std::string kind = j.at("kind").get<std::string>();
    auto k = message_kind_from_string(kind);
    if (!k) throw DecodeError("unknown kind: " + kind);
    env.kind = *k;
    env.sender_id = j.at("sender_id").get<std::string>();
    env.seq = j.at("seq").get<int64_t>();
    env.body = j.at("body");
  } catch (const Json::exception& e) {
    throw DecodeError(std::string("bad envelope: ") + e.what());
  }
  return env;
}

bool dedup_match(const Envelope& a, const Envelope& b) {
  return a.sender_id == b.sender_id && a.seq == b.seq && a.kind == b.kind;
}

namespace body {

Json handshake(const std::string& kind, const std::string& listen_address,
               int listen_port) {
  return Json{{"kind", kind},
              {"listen_address", listen_address},
              {"listen_port", listen_port}};
}

Json request_tasks(int count) { return Json{{"count", count}}; }

Json grant_tasks(const std::vector<TaskDescriptor>& tasks) {
  Json arr = Json::array();
  for (const TaskDescriptor& t : tasks) arr.push_back(t.to_json());
  return Json{{"tasks", std::move(arr)}};
}

Json result(int64_t task_id, const ParamTuple& result_values,
            const std::vector<std::string>& result_titles) {
  return Json{{"task_id", task_id},
              {"result_values", result_values},
              {"result_titles", result_titles}};
}

Json report_hard_task(const Hardness& hardness, int64_t task_id) {
  return Json{{"hardness", hardness.components()}, {"task_id", task_id}};
}

Json apply_domino_effect(const Hardness& hardness) {
  return Json{{"hardness", hardness.components()}};
}

Json log_event(const std::string& text, double timestamp, const Json& event) {
  Json j{{"text", text}, {"timestamp", timestamp}};
  if (!event.is_null()) j["event"] = event;
  return j;
}

Json new_client(const std::string& client_id, const std::string& address,
                int port) {
  return Json{{"client_id", client_id}, {"address", address}, {"port", port}};
}

Json client_terminated(const std::string& client_id) {
  return Json{{"client_id", client_id}};
}

}  // namespace body

std::string WorkerMessage::encode_line() const {
  Envelope env;
  env.kind = kind == Kind::Started ? MessageKind::Log : MessageKind::Result;
  env.sender_id = "worker";
  env.seq = kind == Kind::Started ? 0 : 1;
  env.body = Json{{"worker_kind", kind == Kind::Started ? "WORKER_STARTED"
                                                        : "WORKER_DONE"},
                  {"task_id", task_id},
                  {"result_values", result_values},
                  {"result_titles", result_titles},
                  {"timestamp", timestamp}};
  return encode(env);
}

WorkerMessage WorkerMessage::decode_line(const std::string& line) {
  Envelope env = decode(line);
  WorkerMessage m;
  try {
    std::string wk = env.body.at("worker_kind").get<std::string>();
    if (wk == "WORKER_STARTED") {
      m.kind = Kind::Started;
    } else if (wk == "WORKER_DONE") {
      m.kind = Kind::Done;
    } else {
      throw DecodeError("unknown worker message: " + wk);
    }
    m.task_id = env.body.at("task_id").get<int64_t>();
    m.result_values = env.body.at("result_values").get<ParamTuple>();
    m.result_titles =
        env.body.at("result_titles").get<std::vector<std::string>>();
    m.timestamp = env.body.at("timestamp").get<double>();
  } catch (const Json::exception& e) {
    throw DecodeError(std::string("bad worker message: ") + e.what());
  }
  return m;
}

}  // namespace gridsweep

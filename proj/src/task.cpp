#include "gridsweep/task.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace gridsweep {

Json TaskDescriptor::to_json() const {
  return Json{{"task_id", task_id},
              {"original_index", original_index},
              {"parameters", parameters},
              {"parameter_titles", parameter_titles},
              {"hardness", hardness.components()},
              {"group_key", group_key},
              {"timeout_sec", timeout_sec},
              {"payload", payload}};
}

TaskDescriptor TaskDescriptor::from_json(const Json& j) {
  TaskDescriptor t;
  t.task_id = j.at("task_id").get<int64_t>();
  t.original_index = j.at("original_index").get<int64_t>();
  t.parameters = j.at("parameters").get<ParamTuple>();
  t.parameter_titles = j.at("parameter_titles").get<std::vector<std::string>>();
  t.hardness = Hardness(j.at("hardness").get<std::vector<int64_t>>());
  t.group_key = j.at("group_key").get<GroupKey>();
  t.timeout_sec = j.at("timeout_sec").get<double>();
  t.payload = j.at("payload");
  return t;
}

const char* to_string(TaskPhase phase) {
  switch (phase) {
    case TaskPhase::Pending: return "Pending";
    case TaskPhase::Assigned: return "Assigned";
    case TaskPhase::Done: return "Done";
    case TaskPhase::TimedOut: return "TimedOut";
    case TaskPhase::Skipped: return "Skipped";
    case TaskPhase::Reassignable: return "Reassignable";
  }
  return "?";
}

TaskPhase task_phase_from_string(const std::string& s) {
  if (s == "Pending") return TaskPhase::Pending;
  if (s == "Assigned") return TaskPhase::Assigned;
  if (s == "Done") return TaskPhase::Done;
  if (s == "TimedOut") return TaskPhase::TimedOut;
  if (s == "Skipped") return TaskPhase::Skipped;
  if (s == "Reassignable") return TaskPhase::Reassignable;
  throw std::invalid_argument("unknown task phase: " + s);
}

bool phase_is_terminal(TaskPhase phase) {
  return phase == TaskPhase::Done || phase == TaskPhase::TimedOut ||
         phase == TaskPhase::Skipped;
}

bool phase_transition_allowed(TaskPhase from, TaskPhase to) {
  switch (from) {
    case TaskPhase::Pending:
      return to == TaskPhase::Assigned || to == TaskPhase::Skipped;
    case TaskPhase::Assigned:
      return to == TaskPhase::Done || to == TaskPhase::TimedOut ||
             to == TaskPhase::Reassignable || to == TaskPhase::Skipped;
    case TaskPhase::Reassignable:
      return to == TaskPhase::Assigned || to == TaskPhase::Skipped;
    default:
      return false;
  }
}

std::vector<TaskDescriptor> order_tasks(std::vector<TaskDescriptor> tasks) {
  std::stable_sort(tasks.begin(), tasks.end(),
                   [](const TaskDescriptor& a, const TaskDescriptor& b) {
                     if (a.hardness.components() != b.hardness.components()) {
                       return a.hardness < b.hardness;
                     }
                     return a.original_index < b.original_index;
                   });
  return tasks;
}

std::vector<TaskDescriptor> restore_original_order(
    std::vector<TaskDescriptor> tasks) {
  std::unordered_set<int64_t> seen;
  for (const TaskDescriptor& t : tasks) {
    if (!seen.insert(t.original_index).second) {
      throw std::invalid_argument("duplicate original_index " +
                                  std::to_string(t.original_index));
    }
  }
  std::sort(tasks.begin(), tasks.end(),
            [](const TaskDescriptor& a, const TaskDescriptor& b) {
              return a.original_index < b.original_index;
            });
  return tasks;
}

}  // namespace gridsweep

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridsweep/hardness.hpp"
#include "json.hpp"

namespace gridsweep {

using Json = nlohmann::json;

// A printable parameter value (JSON scalar) and the tuple types built from it.
using ParamValue = Json;
using ParamTuple = std::vector<ParamValue>;
using GroupKey = ParamTuple;

// One parameter setting to execute, carrying everything a worker needs: the
// printable parameters for the results table, the hardness used for ordering
// and pruning, the group key for result filtering, and the opaque payload
// with the full problem instance.
struct TaskDescriptor {
  int64_t task_id = 0;
  int64_t original_index = 0;
  ParamTuple parameters;
  std::vector<std::string> parameter_titles;
  Hardness hardness;
  GroupKey group_key;
  double timeout_sec = 60.0;
  Json payload;

  bool operator==(const TaskDescriptor& other) const = default;

  Json to_json() const;
  static TaskDescriptor from_json(const Json& j);
};

enum class TaskPhase { Pending, Assigned, Done, TimedOut, Skipped, Reassignable };

const char* to_string(TaskPhase phase);
TaskPhase task_phase_from_string(const std::string& s);

// Legal lifecycle transitions:
//   Pending -> {Assigned, Skipped}
//   Assigned -> {Done, TimedOut, Reassignable, Skipped}
//   Reassignable -> {Assigned, Skipped}
//   Done, TimedOut, Skipped terminal.
bool phase_transition_allowed(TaskPhase from, TaskPhase to);
bool phase_is_terminal(TaskPhase phase);

struct TaskStatus {
  TaskPhase phase = TaskPhase::Pending;
  std::string client_id;  // valid while Assigned

  bool operator==(const TaskStatus& other) const = default;
};

// Sorts tasks into a deterministic linear extension of the dominance order:
// lexicographic hardness, then original_index. Any task strictly dominating
// another appears after it.
std::vector<TaskDescriptor> order_tasks(std::vector<TaskDescriptor> tasks);

// Sorts ascending by original_index; throws std::invalid_argument if two
// tasks share an original_index.
std::vector<TaskDescriptor> restore_original_order(
    std::vector<TaskDescriptor> tasks);

}  // namespace gridsweep

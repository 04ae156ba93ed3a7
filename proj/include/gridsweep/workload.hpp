#pragma once

#include <string>
#include <vector>

#include "gridsweep/task.hpp"
#include "json.hpp"

namespace gridsweep {

// What a worker produces for one task.
struct WorkloadOutcome {
  ParamTuple result_values;
  std::vector<std::string> result_titles;
};

// Executes a task payload inside a worker process. Supported payload kinds:
//   {"workload":"bnb", "instance":..., "options":...}  assignment search
//   {"workload":"sleep", "sleep_ms":N}                  timed sleep
//   {"workload":"shell", "command":"..."}               external command; the
//     last stdout line is used as the result tuple if it parses as a JSON
//     array, otherwise the result is the exit status.
// Throws std::runtime_error on an unknown or malformed payload.
WorkloadOutcome run_payload(const Json& payload);

// Parameters for the sleep-grid workload: a grid of timed sleeps shaped like
// the assignment sweep (m in 2..max_m, n in m..2m-1, per_setting instances,
// hardness (m, n)). Used to exercise timeout, pruning and failure handling
// with precisely controlled task durations.
struct SleepGridParams {
  int max_m = 3;
  int per_setting = 1;
  double timeout_sec = 30.0;
  int base_sleep_ms = 30;
  // Optional designated slow task: sleeps past its own timeout, triggering a
  // hardness report at (slow_m, slow_n).
  bool has_slow = false;
  int slow_m = 0;
  int slow_n = 0;
  int64_t slow_id = 0;
  int slow_sleep_ms = 2000;
  double slow_timeout_sec = 1.0;
  // When > 0, tasks dominating the slow task's hardness (outside its own
  // group) sleep this long instead of base_sleep_ms, so they are still
  // running when the domino lands.
  int dominated_sleep_ms = 0;
  double dominated_timeout_sec = 30.0;
};

std::vector<TaskDescriptor> build_sleep_grid(const SleepGridParams& params);

// Builds the task list for a named workload from its JSON parameter block.
// Known names: "bnb", "sleepgrid". Unknown keys in `params` are rejected.
std::vector<TaskDescriptor> build_workload_tasks(const std::string& name,
                                                 const Json& params);

}  // namespace gridsweep

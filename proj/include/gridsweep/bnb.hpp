#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridsweep/task.hpp"
#include "json.hpp"

namespace gridsweep {

// Solver behavior switches. NO_CUTOFFS degrades the search to exhaustive
// enumeration; HEURISTIC adds an admissible lower bound to the cutoff test.
// At most one may be set.
enum class SolverOption { NoCutoffs, Heuristic };

struct SolverOptions {
  bool no_cutoffs = false;
  bool heuristic = false;

  bool operator==(const SolverOptions& other) const = default;

  // Printable form used in the parameters column: "", "NO_CUTOFFS" or
  // "HEURISTIC".
  std::string to_string() const;
  static SolverOptions from_string(const std::string& s);
};

// An agent-assignment problem: m sequential tasks, n >= m agents,
// costs[i][j] = seconds agent i needs for task j. Each task gets a distinct
// agent; minimize the total time.
struct AssignmentInstance {
  int n_tasks = 0;   // m
  int n_agents = 0;  // n
  std::vector<std::vector<int>> costs;  // n_agents x n_tasks, entries >= 1
  int64_t instance_id = 0;
  uint64_t seed = 0;

  bool operator==(const AssignmentInstance& other) const = default;

  Json to_json() const;
  static AssignmentInstance from_json(const Json& j);
};

struct SearchResult {
  int64_t optimal_cost = 0;
  std::vector<int> assignment;  // assignment[task] = agent
  int64_t nodes_expanded = 0;
  double elapsed_sec = 0;
};

// last_id - first_id + 1 instances with costs drawn uniformly from [1, 100].
// A pure function of (seed, m, n, id): the same arguments always produce
// bit-identical instances. Throws std::invalid_argument if n < m or
// last_id < first_id.
std::vector<AssignmentInstance> generate_instances(int n_tasks, int n_agents,
                                                   int64_t first_id,
                                                   int64_t last_id,
                                                   uint64_t seed);

// Admissible lower bound on the cost of completing tasks not covered by the
// partial assignment: each remaining task takes the cheapest unused agent,
// agent reuse allowed. `used` has one flag per agent; `next_task` is the
// first unassigned task index.
int64_t lower_bound(const AssignmentInstance& instance,
                    const std::vector<char>& used, int next_task);

// Depth-first search over tasks in index order, assigning unused agents.
// All three option variants return the same optimal cost; they differ in
// nodes_expanded (each node counted when entered).
SearchResult solve(const AssignmentInstance& instance,
                   const SolverOptions& options);

// Maps the options to a hardness component: HEURISTIC -> 0, default -> 1,
// NO_CUTOFFS -> 2 (slower variants are harder).
int options_hardness(const SolverOptions& options);

// The experiment's task list: for each variant in [NO_CUTOFFS, default,
// HEURISTIC], for m in 2..max_m, for n in m..2m-1, `per_setting` instances.
// Hardness is (options_hardness, m, n); the group key drops the instance id.
std::vector<TaskDescriptor> build_task_list(int max_m, int per_setting,
                                            double timeout_sec, uint64_t seed);

}  // namespace gridsweep

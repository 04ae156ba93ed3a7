#include "gridsweep/bnb.hpp"

#include <chrono>
#include <limits>
#include <random>
#include <stdexcept>

namespace gridsweep {

std::string SolverOptions::to_string() const {
  if (no_cutoffs) return "NO_CUTOFFS";
  if (heuristic) return "HEURISTIC";
  return "";
}

SolverOptions SolverOptions::from_string(const std::string& s) {
  SolverOptions o;
  if (s == "NO_CUTOFFS") {
    o.no_cutoffs = true;
  } else if (s == "HEURISTIC") {
    o.heuristic = true;
  } else if (!s.empty()) {
    throw std::invalid_argument("unknown solver options: " + s);
  }
  return o;
}

Json AssignmentInstance::to_json() const {
  return Json{{"n_tasks", n_tasks},
              {"n_agents", n_agents},
              {"costs", costs},
              {"instance_id", instance_id},
              {"seed", seed}};
}

AssignmentInstance AssignmentInstance::from_json(const Json& j) {
  AssignmentInstance inst;
  inst.n_tasks = j.at("n_tasks").get<int>();
  inst.n_agents = j.at("n_agents").get<int>();
  inst.costs = j.at("costs").get<std::vector<std::vector<int>>>();
  inst.instance_id = j.at("instance_id").get<int64_t>();
  inst.seed = j.at("seed").get<uint64_t>();
  return inst;
}

std::vector<AssignmentInstance> generate_instances(int n_tasks, int n_agents,
                                                   int64_t first_id,
                                                   int64_t last_id,
                                                   uint64_t seed) {
  if (n_tasks < 1 || n_agents < n_tasks) {
    throw std::invalid_argument("need n_agents >= n_tasks >= 1");
  }
  if (last_id < first_id) {
    throw std::invalid_argument("need last_id >= first_id");
  }
  std::vector<AssignmentInstance> out;
  out.reserve(static_cast<std::size_t>(last_id - first_id + 1));
  for (int64_t id = first_id; id <= last_id; ++id) {
    AssignmentInstance inst;
    inst.n_tasks = n_tasks;
    inst.n_agents = n_agents;
    inst.instance_id = id;
    inst.seed = seed;
    // mt19937_64 is standard-pinned, so the stream is identical everywhere;
    // the draw avoids std::uniform_int_distribution, whose output is
    // implementation-defined.
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL +
                        static_cast<uint64_t>(n_tasks) * 1000003ULL +
                        static_cast<uint64_t>(n_agents) * 10007ULL +
                        static_cast<uint64_t>(id));
    inst.costs.assign(n_agents, std::vector<int>(n_tasks));
    for (int i = 0; i < n_agents; ++i) {
      for (int j = 0; j < n_tasks; ++j) {
        inst.costs[i][j] = static_cast<int>(rng() % 100) + 1;
      }
    }
    out.push_back(std::move(inst));
  }
  return out;
}

int64_t lower_bound(const AssignmentInstance& instance,
                    const std::vector<char>& used, int next_task) {
  int64_t bound = 0;
  for (int j = next_task; j < instance.n_tasks; ++j) {
    int64_t best = std::numeric_limits<int64_t>::max();
    for (int i = 0; i < instance.n_agents; ++i) {
      if (!used[i] && instance.costs[i][j] < best) best = instance.costs[i][j];
    }
    bound += best;
  }
  return bound;
}

namespace {

struct SearchContext {
  const AssignmentInstance& inst;
  const SolverOptions& options;
  std::vector<char> used;
  std::vector<int> current;
  std::vector<int> best_assignment;
  int64_t incumbent = std::numeric_limits<int64_t>::max();
  int64_t nodes = 0;

  void dfs(int task, int64_t partial_cost) {
    ++nodes;
    if (task == inst.n_tasks) {
      if (partial_cost < incumbent) {
        incumbent = partial_cost;
        best_assignment = current;
      }
      return;
    }
    if (!options.no_cutoffs) {
      int64_t floor = partial_cost;
      if (options.heuristic) floor += lower_bound(inst, used, task);
      // >= discards ties: one optimal solution is enough.
      if (floor >= incumbent) return;
    }
    for (int agent = 0; agent < inst.n_agents; ++agent) {
      if (used[agent]) continue;
      used[agent] = 1;
      current[task] = agent;
      dfs(task + 1, partial_cost + inst.costs[agent][task]);
      used[agent] = 0;
    }
  }
};

}  // namespace

SearchResult solve(const AssignmentInstance& instance,
                   const SolverOptions& options) {
  auto start = std::chrono::steady_clock::now();
  SearchContext ctx{instance, options,
                    std::vector<char>(instance.n_agents, 0),
                    std::vector<int>(instance.n_tasks, -1),
                    {}};
  ctx.dfs(0, 0);
  SearchResult r;
  r.optimal_cost = ctx.incumbent;
  r.assignment = ctx.best_assignment;
  r.nodes_expanded = ctx.nodes;
  r.elapsed_sec = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
  return r;
}

int options_hardness(const SolverOptions& options) {
  if (options.heuristic) return 0;
  if (options.no_cutoffs) return 2;
  return 1;
}

std::vector<TaskDescriptor> build_task_list(int max_m, int per_setting,
                                            double timeout_sec,
                                            uint64_t seed) {
  if (max_m < 2) throw std::invalid_argument("need max_m >= 2");
  if (per_setting < 1) throw std::invalid_argument("need per_setting >= 1");

  const SolverOptions variants[] = {SolverOptions{.no_cutoffs = true},
                                    SolverOptions{},
                                    SolverOptions{.heuristic = true}};
  std::vector<TaskDescriptor> tasks;
  int64_t next_id = 0;
  for (const SolverOptions& options : variants) {
    for (int m = 2; m <= max_m; ++m) {
      for (int n = m; n <= 2 * m - 1; ++n) {
        auto instances = generate_instances(m, n, 0, per_setting - 1, seed);
        for (const AssignmentInstance& inst : instances) {
          TaskDescriptor t;
          t.task_id = next_id;
          t.original_index = next_id;
          ++next_id;
          t.parameter_titles = {"n_tasks", "n_agents", "id", "Options"};
          t.parameters = {m, n, inst.instance_id, options.to_string()};
          t.hardness = Hardness({options_hardness(options), m, n});
          t.group_key = {m, n, options.to_string()};  // all params but id
          t.timeout_sec = timeout_sec;
          t.payload = Json{{"workload", "bnb"},
                           {"instance", inst.to_json()},
                           {"options", options.to_string()}};
          tasks.push_back(std::move(t));
        }
      }
    }
  }
  return tasks;
}

}  // namespace gridsweep

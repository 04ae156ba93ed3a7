#include "gridsweep/workload.hpp"

#include <chrono>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <thread>

#include "gridsweep/bnb.hpp"

namespace gridsweep {

namespace {

WorkloadOutcome run_bnb(const Json& payload) {
  AssignmentInstance inst =
      AssignmentInstance::from_json(payload.at("instance"));
  SolverOptions options =
      SolverOptions::from_string(payload.at("options").get<std::string>());
  SearchResult r = solve(inst, options);
  WorkloadOutcome out;
  out.result_values = {r.optimal_cost, r.nodes_expanded, r.elapsed_sec};
  out.result_titles = {"optimal_cost", "nodes_expanded", "elapsed_sec"};
  return out;
}

WorkloadOutcome run_sleep(const Json& payload) {
  int64_t ms = payload.at("sleep_ms").get<int64_t>();
  std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  WorkloadOutcome out;
  out.result_values = {ms};
  out.result_titles = {"slept_ms"};
  return out;
}

WorkloadOutcome run_shell(const Json& payload) {
  std::string command = payload.at("command").get<std::string>();
  FILE* pipe = popen(command.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed: " + command);
  std::string output;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, n);
  int status = pclose(pipe);

  std::string last_line;
  std::size_t end = output.find_last_not_of('\n');
  if (end != std::string::npos) {
    std::size_t start = output.rfind('\n', end);
    last_line = output.substr(start == std::string::npos ? 0 : start + 1,
                              end - (start == std::string::npos ? 0 : start));
  }
  WorkloadOutcome out;
  Json parsed = Json::parse(last_line, nullptr, false);
  if (parsed.is_array()) {
    out.result_values = parsed.get<ParamTuple>();
    for (std::size_t i = 0; i < out.result_values.size(); ++i) {
      out.result_titles.push_back("out" + std::to_string(i));
    }
  } else {
    out.result_values = {status};
    out.result_titles = {"exit_status"};
  }
  return out;
}

void reject_unknown_keys(const Json& params, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = params.begin(); it != params.end(); ++it) {
    if (!known.contains(it.key())) {
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
    }
  }
}

}  // namespace

WorkloadOutcome run_payload(const Json& payload) {
  try {
    std::string kind = payload.at("workload").get<std::string>();
    if (kind == "bnb") return run_bnb(payload);
    if (kind == "sleep") return run_sleep(payload);
    if (kind == "shell") return run_shell(payload);
    throw std::runtime_error("unknown workload kind: " + kind);
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("malformed payload: ") + e.what());
  }
}

std::vector<TaskDescriptor> build_sleep_grid(const SleepGridParams& p) {
  if (p.max_m < 2) throw std::invalid_argument("need max_m >= 2");
  if (p.per_setting < 1) throw std::invalid_argument("need per_setting >= 1");

  Hardness slow_hardness({p.slow_m, p.slow_n});
  std::vector<TaskDescriptor> tasks;
  int64_t next_id = 0;
  for (int m = 2; m <= p.max_m; ++m) {
    for (int n = m; n <= 2 * m - 1; ++n) {
      for (int64_t id = 0; id < p.per_setting; ++id) {
        TaskDescriptor t;
        t.task_id = next_id;
        t.original_index = next_id;
        ++next_id;
        t.parameter_titles = {"m", "n", "id"};
        t.parameters = {m, n, id};
        t.hardness = Hardness({m, n});
        t.group_key = {m, n};
        int sleep_ms = p.base_sleep_ms;
        t.timeout_sec = p.timeout_sec;
        if (p.has_slow) {
          bool designated = m == p.slow_m && n == p.slow_n && id == p.slow_id;
          bool same_group = m == p.slow_m && n == p.slow_n;
          if (designated) {
            sleep_ms = p.slow_sleep_ms;
            t.timeout_sec = p.slow_timeout_sec;
          } else if (!same_group && p.dominated_sleep_ms > 0 &&
                     dominates(t.hardness, slow_hardness)) {
            sleep_ms = p.dominated_sleep_ms;
            t.timeout_sec = p.dominated_timeout_sec;
          }
        }
        t.payload = Json{{"workload", "sleep"}, {"sleep_ms", sleep_ms}};
        tasks.push_back(std::move(t));
      }
    }
  }
  return tasks;
}

std::vector<TaskDescriptor> build_workload_tasks(const std::string& name,
                                                 const Json& params) {
  try {
    if (name == "bnb") {
      reject_unknown_keys(params, {"max_m", "per_setting", "timeout_sec", "seed"},
                          "bnb workload");
      return build_task_list(params.at("max_m").get<int>(),
                             params.at("per_setting").get<int>(),
                             params.value("timeout_sec", 60.0),
                             params.value("seed", uint64_t{1}));
    }
    if (name == "sleepgrid") {
      reject_unknown_keys(params,
                          {"max_m", "per_setting", "timeout_sec",
                           "base_sleep_ms", "slow", "dominated_sleep_ms",
                           "dominated_timeout_sec"},
                          "sleepgrid workload");
      SleepGridParams p;
      p.max_m = params.at("max_m").get<int>();
      p.per_setting = params.at("per_setting").get<int>();
      p.timeout_sec = params.value("timeout_sec", 30.0);
      p.base_sleep_ms = params.value("base_sleep_ms", 30);
      p.dominated_sleep_ms = params.value("dominated_sleep_ms", 0);
      p.dominated_timeout_sec = params.value("dominated_timeout_sec", 30.0);
      if (params.contains("slow")) {
        const Json& s = params.at("slow");
        reject_unknown_keys(s, {"m", "n", "id", "sleep_ms", "timeout_sec"},
                            "sleepgrid slow task");
        p.has_slow = true;
        p.slow_m = s.at("m").get<int>();
        p.slow_n = s.at("n").get<int>();
        p.slow_id = s.value("id", int64_t{0});
        p.slow_sleep_ms = s.value("sleep_ms", 2000);
        p.slow_timeout_sec = s.value("timeout_sec", 1.0);
      }
      return build_sleep_grid(p);
    }
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("bad workload params: ") +
                                e.what());
  }
  throw std::invalid_argument("unknown workload: " + name);
}

}  // namespace gridsweep

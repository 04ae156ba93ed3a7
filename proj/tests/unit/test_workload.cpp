#include "gridsweep/workload.hpp"

#include <set>

#include "doctest.h"
#include "gridsweep/bnb.hpp"
#include "gridsweep/util.hpp"

using namespace gridsweep;

TEST_CASE("assignment payload runs and reports the optimum") {
  auto inst = generate_instances(2, 3, 0, 0, 3)[0];
  Json payload{{"workload", "bnb"},
               {"instance", inst.to_json()},
               {"options", ""}};
  WorkloadOutcome out = run_payload(payload);
  REQUIRE(out.result_titles ==
          std::vector<std::string>({"optimal_cost", "nodes_expanded",
                                    "elapsed_sec"}));
  REQUIRE(out.result_values.size() == 3);
  CHECK(out.result_values[0] == solve(inst, SolverOptions{}).optimal_cost);
}

TEST_CASE("sleep payload sleeps roughly the requested time") {
  double t0 = mono_now();
  WorkloadOutcome out = run_payload(Json{{"workload", "sleep"},
                                         {"sleep_ms", 80}});
  double elapsed = mono_now() - t0;
  CHECK(out.result_values == ParamTuple({80}));
  CHECK(out.result_titles == std::vector<std::string>({"slept_ms"}));
  CHECK(elapsed >= 0.075);
}

TEST_CASE("shell payload takes the last stdout line as the tuple") {
  WorkloadOutcome out = run_payload(
      Json{{"workload", "shell"},
           {"command", "echo noise; echo '[1, 2.5, \"x\"]'"}});
  CHECK(out.result_values == ParamTuple({1, 2.5, "x"}));
  REQUIRE(out.result_titles.size() == 3);
  CHECK(out.result_titles[0] == "out0");
}

TEST_CASE("shell payload without a tuple reports the exit status") {
  WorkloadOutcome out =
      run_payload(Json{{"workload", "shell"}, {"command", "true"}});
  CHECK(out.result_titles == std::vector<std::string>({"exit_status"}));
  CHECK(out.result_values == ParamTuple({0}));
}

TEST_CASE("unknown or malformed payloads are rejected") {
  CHECK_THROWS_AS(run_payload(Json{{"workload", "quantum"}}),
                  std::runtime_error);
  CHECK_THROWS_AS(run_payload(Json{{"sleep_ms", 5}}), std::runtime_error);
  CHECK_THROWS_AS(run_payload(Json{{"workload", "sleep"}}),
                  std::runtime_error);
}

TEST_CASE("sleep grid matches the sweep shape") {
  SleepGridParams p;
  p.max_m = 4;
  p.per_setting = 2;
  p.base_sleep_ms = 10;
  std::vector<TaskDescriptor> tasks = build_sleep_grid(p);
  // (m=2: 2) + (m=3: 3) + (m=4: 4) settings, 2 instances each
  REQUIRE(tasks.size() == 9 * 2);
  std::set<int64_t> ids;
  for (const auto& t : tasks) {
    CHECK(ids.insert(t.task_id).second);
    int m = t.parameters[0].get<int>();
    int n = t.parameters[1].get<int>();
    CHECK(m >= 2);
    CHECK(m <= 4);
    CHECK(n >= m);
    CHECK(n <= 2 * m - 1);
    CHECK(t.hardness == Hardness({m, n}));
    CHECK(t.group_key == ParamTuple({m, n}));
    CHECK(t.payload.at("sleep_ms") == 10);
    CHECK(t.parameter_titles ==
          std::vector<std::string>({"m", "n", "id"}));
  }
}

TEST_CASE("sleep grid slow task and dominated region") {
  SleepGridParams p;
  p.max_m = 4;
  p.per_setting = 1;
  p.base_sleep_ms = 10;
  p.timeout_sec = 30.0;
  p.has_slow = true;
  p.slow_m = 3;
  p.slow_n = 4;
  p.slow_sleep_ms = 5000;
  p.slow_timeout_sec = 0.5;
  p.dominated_sleep_ms = 900;
  p.dominated_timeout_sec = 20.0;
  std::vector<TaskDescriptor> tasks = build_sleep_grid(p);
  Hardness slow({3, 4});
  for (const auto& t : tasks) {
    int m = t.parameters[0].get<int>();
    int n = t.parameters[1].get<int>();
    if (m == 3 && n == 4) {
      CHECK(t.payload.at("sleep_ms") == 5000);
      CHECK(t.timeout_sec == 0.5);
    } else if (dominates(t.hardness, slow)) {
      CHECK(t.payload.at("sleep_ms") == 900);
      CHECK(t.timeout_sec == 20.0);
    } else {
      CHECK(t.payload.at("sleep_ms") == 10);
      CHECK(t.timeout_sec == 30.0);
    }
  }
}

TEST_CASE("named workload builders validate their parameters") {
  Json bnb_params{{"max_m", 3}, {"per_setting", 1}};
  CHECK(build_workload_tasks("bnb", bnb_params).size() == 3 * 5);
  Json sleep_params{{"max_m", 3}, {"per_setting", 1}};
  CHECK(build_workload_tasks("sleepgrid", sleep_params).size() == 5);

  CHECK_THROWS_AS(build_workload_tasks("bnb", Json{{"max_m", 3},
                                                   {"per_setting", 1},
                                                   {"surprise", true}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_workload_tasks("sleepgrid", Json{{"max_m", 3}}),
                  std::invalid_argument);  // per_setting missing
  CHECK_THROWS_AS(build_workload_tasks("fractal", Json::object()),
                  std::invalid_argument);
}

TEST_CASE("bnb workload defaults match the direct builder") {
  Json params{{"max_m", 3}, {"per_setting", 2}, {"seed", 7},
              {"timeout_sec", 30.0}};
  CHECK(build_workload_tasks("bnb", params) == build_task_list(3, 2, 30.0, 7));
}

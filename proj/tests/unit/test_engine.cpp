#include "gridsweep/engine.hpp"

#include <signal.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "gridsweep/util.hpp"

using namespace gridsweep;
namespace fs = std::filesystem;

namespace {

struct Registry {
  std::string dir;
  explicit Registry(const std::string& name) {
    dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Registry() { fs::remove_all(dir); }
};

std::vector<std::string> sleeper_argv() {
  return {"/bin/sh", "-c", "sleep 30"};
}

bool wait_until(double timeout_sec, const std::function<bool()>& pred) {
  double deadline = mono_now() + timeout_sec;
  while (mono_now() < deadline) {
    if (pred()) return true;
    sleep_sec(0.05);
  }
  return pred();
}

}  // namespace

TEST_CASE("creation backoff grows geometrically and caps") {
  BackoffPolicy p;  // base 1, factor 2, cap 60
  CHECK(next_creation_delay(p, 0) == 1.0);
  CHECK(next_creation_delay(p, 1) == 2.0);
  CHECK(next_creation_delay(p, 3) == 8.0);
  CHECK(next_creation_delay(p, 10) == 60.0);  // 1024 capped
  BackoffPolicy q{0.25, 4.0, 2.0};
  CHECK(next_creation_delay(q, 0) == 0.25);
  CHECK(next_creation_delay(q, 1) == 1.0);
  CHECK(next_creation_delay(q, 2) == 2.0);
}

TEST_CASE("fault plan entries validate") {
  CHECK_THROWS_AS(FaultSpec::from_json(Json{{"target", "x"}}),
                  std::invalid_argument);  // neither trigger
  CHECK_THROWS_AS(FaultSpec::from_json(Json{{"target", "x"},
                                            {"after_sec", 1.0},
                                            {"event", "send"}}),
                  std::invalid_argument);  // both triggers
  CHECK_THROWS_AS(FaultSpec::from_json(Json{{"target", "x"},
                                            {"event", "explode"}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(FaultSpec::from_json(Json{{"target", "x"},
                                            {"event", "send"},
                                            {"count", 0}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(FaultSpec::from_json(Json{{"target", "x"},
                                            {"after_sec", 1.0},
                                            {"surprise", 1}}),
                  std::invalid_argument);
  FaultSpec s = FaultSpec::from_json(Json{{"target", "client-0"},
                                          {"event", "send"},
                                          {"kind", "GRANT_TASKS"},
                                          {"count", 2},
                                          {"delay_ms", 10}});
  CHECK(s.target == "client-0");
  CHECK(s.count == 2);
  CHECK(s.delay_ms == 10);
  CHECK(parse_fault_plan(Json::array({Json{{"target", "a"},
                                           {"after_sec", 0.5}}})).size() == 1);
}

TEST_CASE("local engine spawns, lists and terminates instances") {
  Registry reg("gridsweep_test_engine_a");
  LocalEngine engine("tst", reg.dir, 2);
  engine.set_spawn_command(sleeper_argv());

  InstanceHandle h = engine.create_instance("client", {});
  CHECK(h.name == "tst-client-0");
  CHECK(h.kind == "client");
  CHECK(h.pid > 0);

  auto listed = engine.list_instances();
  REQUIRE(listed.size() == 1);
  CHECK(listed[0].name == h.name);
  CHECK(listed[0].pid == h.pid);

  CHECK(engine.terminate_instance(h));
  CHECK(wait_until(5.0, [&] { return engine.list_instances().empty(); }));
  CHECK_FALSE(engine.terminate_instance(h));  // already gone
}

TEST_CASE("launch args substitute the instance name") {
  Registry reg("gridsweep_test_engine_b");
  LocalEngine engine("tst", reg.dir, 2);
  std::string marker = reg.dir + "/marker";
  engine.set_spawn_command(
      {"/bin/sh", "-c", "echo \"$0\" > " + marker + "; sleep 30"});
  InstanceHandle h = engine.create_instance("client", {"{name}"});
  CHECK(wait_until(5.0, [&] { return fs::exists(marker); }));
  std::ifstream in(marker);
  std::string content;
  std::getline(in, content);
  CHECK(content == h.name);
  engine.terminate_instance(h);
}

TEST_CASE("client capacity throws EngineBusy, servers are uncapped") {
  Registry reg("gridsweep_test_engine_c");
  LocalEngine engine("tst", reg.dir, 1);
  engine.set_spawn_command(sleeper_argv());
  InstanceHandle c0 = engine.create_instance("client", {});
  CHECK_THROWS_AS(engine.create_instance("client", {}), EngineBusy);
  InstanceHandle s0 = engine.create_instance("server", {});
  CHECK(s0.name == "tst-server-0");
  CHECK_THROWS_AS(engine.create_instance("rack", {}), EngineError);
  engine.terminate_instance(c0);
  engine.terminate_instance(s0);
}

TEST_CASE("registry is shared across engines and evicts dead entries") {
  Registry reg("gridsweep_test_engine_d");
  LocalEngine a("tst", reg.dir, 4);
  LocalEngine b("tst", reg.dir, 4);
  a.set_spawn_command(sleeper_argv());
  b.set_spawn_command(sleeper_argv());

  InstanceHandle ha = a.create_instance("client", {});
  InstanceHandle hb = b.create_instance("client", {});
  CHECK(ha.name != hb.name);  // counter file serializes ordinals

  auto seen_by_b = b.list_instances();
  REQUIRE(seen_by_b.size() == 2);

  // A process killed behind the engine's back disappears on the next scan.
  kill(static_cast<pid_t>(ha.pid), SIGKILL);
  CHECK(wait_until(5.0, [&] { return b.list_instances().size() == 1; }));
  CHECK(b.list_instances()[0].name == hb.name);
  // The stale registry file was evicted too.
  CHECK_FALSE(fs::exists(reg.dir + "/" + ha.name + ".json"));

  b.terminate_instance(hb);
  // Engines with a different prefix never see these instances.
  LocalEngine other("other", reg.dir, 4);
  CHECK(other.list_instances().empty());
}

TEST_CASE("sim engine kills on matching noted events") {
  Registry reg("gridsweep_test_engine_e");
  std::vector<FaultSpec> plan = parse_fault_plan(Json::array(
      {Json{{"target", "client-0"},
            {"event", "send"},
            {"kind", "GRANT_TASKS"},
            {"count", 2}}}));
  SimEngine engine("tst", reg.dir, 2, plan, true);
  engine.set_spawn_command(sleeper_argv());
  InstanceHandle h = engine.create_instance("client", {});
  REQUIRE(h.name == "tst-client-0");

  // Non-matching events leave it alone.
  engine.note_event(NoteEvent{NoteEvent::Type::Send, "RESULT", h.name});
  engine.note_event(NoteEvent{NoteEvent::Type::Recv, "GRANT_TASKS", h.name});
  engine.note_event(NoteEvent{NoteEvent::Type::Send, "GRANT_TASKS", "other"});
  CHECK(engine.list_instances().size() == 1);

  engine.note_event(NoteEvent{NoteEvent::Type::Send, "GRANT_TASKS", h.name});
  CHECK(engine.list_instances().size() == 1);  // count 2 not reached yet
  engine.note_event(NoteEvent{NoteEvent::Type::Send, "GRANT_TASKS", h.name});
  CHECK(wait_until(5.0, [&] { return engine.list_instances().empty(); }));

  // Fires at most once: a fresh instance survives further matching events.
  InstanceHandle h2 = engine.create_instance("client", {});
  engine.note_event(NoteEvent{NoteEvent::Type::Send, "GRANT_TASKS", h2.name});
  engine.note_event(NoteEvent{NoteEvent::Type::Send, "GRANT_TASKS", h2.name});
  sleep_sec(0.2);
  CHECK(engine.list_instances().size() == 1);
  engine.terminate_instance(h2);
}

TEST_CASE("sim engine wall-clock faults fire") {
  Registry reg("gridsweep_test_engine_f");
  std::vector<FaultSpec> plan = parse_fault_plan(Json::array(
      {Json{{"target", "client"}, {"after_sec", 0.3}}}));
  SimEngine engine("tst", reg.dir, 2, plan, true);
  engine.set_spawn_command(sleeper_argv());
  engine.create_instance("client", {});
  CHECK(engine.list_instances().size() == 1);
  CHECK(wait_until(5.0, [&] { return engine.list_instances().empty(); }));
}

TEST_CASE("engine factory honors the config") {
  Registry reg("gridsweep_test_engine_g");
  ExperimentConfig c;
  c.engine = "local";
  auto local = make_engine(c, reg.dir, true);
  CHECK(dynamic_cast<LocalEngine*>(local.get()) != nullptr);
  CHECK(dynamic_cast<SimEngine*>(local.get()) == nullptr);
  c.engine = "sim";
  auto sim = make_engine(c, reg.dir, true);
  CHECK(dynamic_cast<SimEngine*>(sim.get()) != nullptr);
}

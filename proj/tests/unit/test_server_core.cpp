#include "gridsweep/server_core.hpp"

#include <algorithm>
#include <random>

#include "doctest.h"
#include "gridsweep/workload.hpp"

using namespace gridsweep;

namespace {

ExperimentConfig test_config() {
  ExperimentConfig c;
  c.engine = "sim";
  c.backup_enabled = true;
  c.health.update_period_sec = 0.5;
  c.health.update_limit_sec = 2.0;
  c.health.max_non_active_sec = 5.0;
  return c;
}

std::vector<TaskDescriptor> grid_tasks(int max_m, int per_setting) {
  SleepGridParams p;
  p.max_m = max_m;
  p.per_setting = per_setting;
  return build_sleep_grid(p);
}

ServerCore fresh_core(int max_m = 3, int per_setting = 1) {
  return ServerCore(test_config(), "srv-init", grid_tasks(max_m, per_setting));
}

Envelope client_env(const std::string& id, int64_t seq, MessageKind kind,
                    Json body = Json::object()) {
  return Envelope{kind, id, seq, std::move(body)};
}

// Drives a handshake so the client has a channel and can be granted tasks.
void join(ServerCore& core, const std::string& id, int64_t& seq, double now) {
  core.handle_client_message(
      client_env(id, seq++, MessageKind::Handshake,
                 body::handshake("client", "127.0.0.1", 4000)),
      now);
}

template <typename Fx>
std::vector<Fx> pick(const Effects& fx) {
  std::vector<Fx> out;
  for (const Effect& e : fx) {
    if (const Fx* p = std::get_if<Fx>(&e)) out.push_back(*p);
  }
  return out;
}

std::vector<int64_t> granted_ids(const Effects& fx) {
  std::vector<int64_t> ids;
  for (const auto& send : pick<SendToClientFx>(fx)) {
    if (send.env.kind != MessageKind::GrantTasks) continue;
    for (const auto& t : send.env.body.at("tasks")) {
      ids.push_back(t.at("task_id").get<int64_t>());
    }
  }
  return ids;
}

bool has_trace(const Effects& fx, const std::string& event) {
  for (const auto& t : pick<TraceFx>(fx)) {
    if (t.record.value("event", "") == event) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("grants follow the hardness order and honor the request count") {
  ServerCore core = fresh_core(3, 1);  // 5 tasks: (2,2),(2,3),(3,3),(3,4),(3,5)
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.1);
  auto sends = pick<SendToClientFx>(fx);
  REQUIRE(sends.size() == 1);
  CHECK(sends[0].env.kind == MessageKind::GrantTasks);
  CHECK(sends[0].env.sender_id == "server");
  CHECK(sends[0].env.seq == 0);

  // The ordered list for this grid is (2,2),(2,3),(3,3),(3,4),(3,5): ids 0..4.
  std::vector<int64_t> ids = granted_ids(fx);
  CHECK(ids == std::vector<int64_t>({0, 1}));
  CHECK(core.phase_of(0) == TaskPhase::Assigned);
  CHECK(core.phase_of(1) == TaskPhase::Assigned);
  CHECK(core.phase_of(2) == TaskPhase::Pending);
  CHECK(core.invariants_ok());

  // A partial grant is fine when fewer tasks remain than requested.
  Effects fx2 = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(10)),
      1.2);
  CHECK(granted_ids(fx2) == std::vector<int64_t>({2, 3, 4}));
}

TEST_CASE("exhausted task list answers NO_FURTHER_TASKS") {
  ServerCore core = fresh_core(2, 1);  // 2 tasks
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(5)),
      1.1);
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(1)),
      1.2);
  auto sends = pick<SendToClientFx>(fx);
  REQUIRE(sends.size() == 1);
  CHECK(sends[0].env.kind == MessageKind::NoFurtherTasks);
  // Mirrored seq advanced past the earlier grant.
  CHECK(sends[0].env.seq == 1);
}

TEST_CASE("requests from unknown clients are refused") {
  ServerCore core = fresh_core();
  Effects fx = core.handle_client_message(
      client_env("ghost", 0, MessageKind::RequestTasks, body::request_tasks(1)),
      1.0);
  CHECK(pick<SendToClientFx>(fx).empty());
  CHECK(has_trace(fx, "request_from_unknown_client"));
}

TEST_CASE("reassignment queue is served before the cursor") {
  ServerCore core = fresh_core(3, 1);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.1);
  // Worker crash puts task 0 back.
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Exception,
                 body::log_event("crash", 1.0,
                                 Json{{"type", "worker_crashed"},
                                      {"task_id", 0}})),
      1.2);
  CHECK(has_trace(fx, "task_reassignable"));
  CHECK(core.phase_of(0) == TaskPhase::Reassignable);
  REQUIRE(core.tasks_from_failed().size() == 1);
  CHECK(core.invariants_ok());

  Effects fx2 = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.3);
  // Task 0 first (from the failed queue), then the cursor's next task 2.
  CHECK(granted_ids(fx2) == std::vector<int64_t>({0, 2}));
  CHECK(core.tasks_from_failed().empty());
}

TEST_CASE("results store once, duplicates and late copies drop") {
  ServerCore core = fresh_core(3, 1);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(1)),
      1.1);
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(0, {30}, {"slept_ms"})),
      1.2);
  CHECK(core.phase_of(0) == TaskPhase::Done);
  CHECK(pick<ClientEventFx>(fx).empty());

  Effects dup = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(0, {31}, {"slept_ms"})),
      1.3);
  CHECK(has_trace(dup, "duplicate_result_dropped"));

  Effects unknown = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(999, {1}, {"slept_ms"})),
      1.4);
  CHECK_FALSE(pick<ClientEventFx>(unknown).empty());

  // A result for a task no longer assigned (sender was presumed dead) drops.
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(1)),
      1.5);
  Effects crash = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Exception,
                 body::log_event("crash", 1.0,
                                 Json{{"type", "worker_crashed"},
                                      {"task_id", 1}})),
      1.6);
  (void)crash;
  Effects late = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(1, {30}, {"slept_ms"})),
      1.7);
  CHECK(has_trace(late, "late_result_dropped"));
  CHECK(core.phase_of(1) == TaskPhase::Reassignable);
  CHECK(core.invariants_ok());

  // First writer wins across the whole run: the stored value is the first.
  while (true) {
    Effects grant = core.handle_client_message(
        client_env("client-0", seq++, MessageKind::RequestTasks,
                    body::request_tasks(5)),
        2.0);
    std::vector<int64_t> ids = granted_ids(grant);
    if (ids.empty()) break;
    for (int64_t id : ids) {
      core.handle_client_message(
          client_env("client-0", seq++, MessageKind::Result,
                     body::result(id, {30}, {"slept_ms"})),
          2.1);
    }
  }
  core.handle_client_message(client_env("client-0", seq++, MessageKind::Bye),
                             2.2);
  ResultTable table = core.finalize_results();
  for (const auto& row : table.rows) {
    if (row[2] == Json(0) && row[0] == Json(2) && row[1] == Json(2)) {
      CHECK(row[3] == Json(30));  // not the duplicate's 31
    }
  }
}

TEST_CASE("timeout reports prune the dominated region") {
  ServerCore core = fresh_core(3, 1);  // hardness (2,2),(2,3),(3,3),(3,4),(3,5)
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(3)),
      1.1);  // assigns 0,1,2
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({3, 3}), 2)),
      1.2);
  CHECK(core.phase_of(2) == TaskPhase::TimedOut);
  CHECK(core.min_hard().prunes(Hardness({3, 3})));
  CHECK(has_trace(fx, "timeout_registered"));
  // Every handshaken client gets the domino broadcast, mirrored.
  auto sends = pick<SendToClientFx>(fx);
  REQUIRE(sends.size() == 1);
  CHECK(sends[0].env.kind == MessageKind::ApplyDominoEffect);
  CHECK(sends[0].env.body.at("hardness") == Json::array({3, 3}));

  // Pending dominated tasks are skipped at grant time, never granted.
  Effects fx2 = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(5)),
      1.3);
  CHECK(granted_ids(fx2).empty());
  auto sends2 = pick<SendToClientFx>(fx2);
  REQUIRE(sends2.size() == 1);
  CHECK(sends2[0].env.kind == MessageKind::NoFurtherTasks);
  CHECK(core.phase_of(3) == TaskPhase::Skipped);
  CHECK(core.phase_of(4) == TaskPhase::Skipped);
  CHECK(core.invariants_ok());
}

TEST_CASE("timeout transitions depend on the task's phase") {
  ServerCore core = fresh_core(3, 1);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.1);
  // Crash task 1 into the failed queue, then report its hardness: the queued
  // task is skipped and popped.
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Exception,
                 body::log_event("crash", 1.0,
                                 Json{{"type", "worker_crashed"},
                                      {"task_id", 1}})),
      1.2);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({2, 3}), 1)),
      1.3);
  CHECK(core.phase_of(1) == TaskPhase::Skipped);
  CHECK(core.tasks_from_failed().empty());

  // Reporting an already-terminal task keeps its phase but still registers
  // the hardness.
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({2, 2}), 0)),
      1.35);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(0, {30}, {"slept_ms"})),
      1.4);
  CHECK(core.phase_of(0) == TaskPhase::TimedOut);  // from the Assigned report
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({2, 2}), 0)),
      1.5);
  CHECK(core.phase_of(0) == TaskPhase::TimedOut);
  CHECK(core.min_hard().prunes(Hardness({2, 2})));
  CHECK(core.invariants_ok());
}

TEST_CASE("domino kill confirmations mark assigned tasks skipped") {
  ServerCore core = fresh_core(3, 1);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.1);
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Log,
                 body::log_event("killed", 1.0,
                                 Json{{"type", "domino_kill"},
                                      {"task_id", 1}})),
      1.2);
  CHECK(core.phase_of(1) == TaskPhase::Skipped);
  CHECK_FALSE(pick<ClientEventFx>(fx).empty());  // text still logged
  // A plain log without an event block only logs.
  Effects fx2 = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Log,
                 body::log_event("note", 1.0)),
      1.3);
  CHECK(core.phase_of(0) == TaskPhase::Assigned);
  CHECK(pick<ClientEventFx>(fx2).size() == 1);
  CHECK(core.invariants_ok());
}

TEST_CASE("BYE reassigns leftovers and removes the client") {
  ServerCore core = fresh_core(3, 1);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(3)),
      1.1);
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Bye), 1.2);
  CHECK(core.clients().empty());
  // Assigned 0,1,2 go back in ascending id order.
  CHECK(core.tasks_from_failed() == std::deque<int64_t>({0, 1, 2}));
  auto terms = pick<TerminateInstanceFx>(fx);
  REQUIRE(terms.size() == 1);
  CHECK(terms[0].name == "client-0");
  CHECK(has_trace(fx, "client_removed"));
  CHECK(core.invariants_ok());
  CHECK_FALSE(core.all_done());  // reassignable work remains
}

TEST_CASE("liveness detector separates handshaken and silent instances") {
  ServerCore core = fresh_core();
  int64_t seq = 0;
  join(core, "client-0", seq, 10.0);
  core.note_client_created("client-1", 10.0);  // created, never handshakes

  CHECK(core.unhealthy_clients(10.5).empty());
  // update_limit_sec 2.0: the handshaken client times out first.
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::HealthUpdate), 11.0);
  auto sick = core.unhealthy_clients(13.5);
  REQUIRE(sick.size() == 1);
  CHECK(sick[0] == "client-0");
  // max_non_active_sec 5.0: the silent instance joins later.
  auto sick2 = core.unhealthy_clients(15.5);
  REQUIRE(sick2.size() == 2);

  Effects fx = core.remove_client("client-0", 15.5, "health_timeout");
  CHECK(pick<TerminateInstanceFx>(fx).size() == 1);
  CHECK(core.clients().count("client-0") == 0);
  CHECK(core.want_client());  // work remains for a replacement
}

TEST_CASE("backup records and liveness") {
  ServerCore core = fresh_core();
  CHECK(core.should_create_backup());
  core.note_backup_created("srv-backup-0", 1.0);
  CHECK_FALSE(core.should_create_backup());
  CHECK_FALSE(core.backup_unhealthy(5.5));  // within max_non_active_sec
  CHECK(core.backup_unhealthy(6.5));        // never handshook

  Envelope hs{MessageKind::Handshake, "srv-backup-0", 0,
              body::handshake("backup", "127.0.0.1", 5000)};
  Effects fx = core.handle_backup_handshake(hs, 6.0);
  auto dials = pick<ConnectToBackupFx>(fx);
  REQUIRE(dials.size() == 1);
  CHECK(dials[0].port == 5000);
  CHECK_FALSE(core.backup_unhealthy(7.5));  // handshake refreshed health
  core.note_backup_health(10.0);
  CHECK_FALSE(core.backup_unhealthy(11.5));
  CHECK(core.backup_unhealthy(12.5));

  Effects drop = core.drop_backup("health_timeout");
  CHECK(pick<TerminateInstanceFx>(drop).size() == 1);
  CHECK_FALSE(core.backup().has_value());
  CHECK(core.should_create_backup());
}

TEST_CASE("forwarding wraps every handled client message except health") {
  ServerCore core = fresh_core();
  core.note_backup_created("srv-backup-0", 1.0);
  core.handle_backup_handshake(
      Envelope{MessageKind::Handshake, "srv-backup-0", 0,
               body::handshake("backup", "127.0.0.1", 5000)},
      1.0);
  int64_t seq = 0;

  // HANDSHAKE is announced as NEW_CLIENT rather than forwarded verbatim.
  Effects hs = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Handshake,
                 body::handshake("client", "127.0.0.1", 4000)),
      1.1);
  auto fwd = pick<SendToBackupFx>(hs);
  REQUIRE(fwd.size() == 1);
  CHECK(fwd[0].env.kind == MessageKind::NewClient);
  CHECK(fwd[0].env.sender_id == "srv-init");

  // HEALTH_UPDATE is never forwarded.
  Effects health = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::HealthUpdate), 1.2);
  CHECK(pick<SendToBackupFx>(health).empty());

  // Other kinds forward the client's envelope verbatim, before any reply.
  Envelope req = client_env("client-0", seq++, MessageKind::RequestTasks,
                            body::request_tasks(1));
  Effects fx = core.handle_client_message(req, 1.3);
  auto fwd2 = pick<SendToBackupFx>(fx);
  REQUIRE(fwd2.size() == 1);
  CHECK(fwd2[0].env == req);
  REQUIRE(std::holds_alternative<SendToBackupFx>(fx.front()));
}

TEST_CASE("primary and backup converge over a forwarded stream") {
  ServerCore primary = fresh_core(3, 2);
  int64_t seq = 0;
  join(primary, "client-0", seq, 1.0);

  // Snapshot mid-run, then continue identically on both sides.
  primary.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.1);
  primary.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(0, {30}, {"slept_ms"})),
      1.2);

  Json snap = primary.snapshot();
  ServerCore backup =
      ServerCore::from_snapshot(snapshot_from_text(snapshot_to_text(snap)),
                                "srv-backup-0");
  CHECK(backup.role() == ServerRole::Backup);
  CHECK(backup.digest() == primary.digest());

  std::vector<Envelope> stream = {
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(1, {30}, {"slept_ms"})),
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({3, 3}), 3)),
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(3)),
  };
  for (const Envelope& env : stream) {
    primary.handle_client_message(env, 2.0);
    backup.handle_forwarded(env, 2.0);
  }
  CHECK(primary.digest() == backup.digest());
  CHECK(primary.invariants_ok());
  CHECK(backup.invariants_ok());
}

TEST_CASE("backup drops direct copies already forwarded, holds the rest") {
  ServerCore primary = fresh_core(3, 1);
  int64_t seq = 0;
  join(primary, "client-0", seq, 1.0);
  ServerCore backup = ServerCore::from_snapshot(primary.snapshot(), "srv-b");

  Envelope req = client_env("client-0", seq++, MessageKind::RequestTasks,
                            body::request_tasks(1));
  backup.handle_forwarded(req, 2.0);
  Effects direct = backup.handle_direct(req, 2.1);
  CHECK(pick<SendToClientFx>(direct).empty());
  bool dropped = false;
  for (const auto& t : pick<TraceFx>(direct)) {
    if (t.record.value("event", "") == "direct_copy_dropped") dropped = true;
  }
  CHECK(dropped);

  // A direct copy the forward never covered is held, not acted on.
  Envelope req2 = client_env("client-0", seq++, MessageKind::RequestTasks,
                             body::request_tasks(1));
  Effects held = backup.handle_direct(req2, 2.2);
  CHECK(pick<SendToClientFx>(held).empty());
  CHECK(pick<TraceFx>(held).empty());
  CHECK(backup.phase_of(1) == TaskPhase::Pending);  // not granted yet

  // Promotion replays held copies in order and swaps every client's queues.
  Effects fx = backup.promote(3.0);
  CHECK(backup.role() == ServerRole::Primary);
  auto swaps = pick<SwapClientFx>(fx);
  REQUIRE(swaps.size() == 1);
  CHECK(swaps[0].client_id == "client-0");
  CHECK(swaps[0].env.kind == MessageKind::SwapQueues);
  CHECK(granted_ids(fx) == std::vector<int64_t>({1}));
  CHECK(backup.phase_of(1) == TaskPhase::Assigned);
  CHECK(backup.invariants_ok());

  // The replayed grant continues the replicated seq, not a fresh counter.
  auto sends = pick<SendToClientFx>(fx);
  REQUIRE(sends.size() == 1);
  CHECK(sends[0].env.seq == 1);  // seq 0 went to the forwarded request's grant
}

TEST_CASE("forwarded control messages maintain the client set") {
  ServerCore primary = fresh_core();
  ServerCore backup = ServerCore::from_snapshot(primary.snapshot(), "srv-b");

  Effects fx = backup.handle_forwarded(
      Envelope{MessageKind::NewClient, "srv-init", 0,
               body::new_client("client-0", "127.0.0.1", 4000)},
      1.0);
  auto dials = pick<ConnectToClientFx>(fx);
  REQUIRE(dials.size() == 1);
  CHECK(dials[0].client_id == "client-0");
  CHECK(backup.clients().count("client-0") == 1);

  // Assign something through a forward, then CLIENT_TERMINATED reassigns it.
  backup.handle_forwarded(
      client_env("client-0", 1, MessageKind::RequestTasks,
                 body::request_tasks(1)),
      1.1);
  CHECK(backup.phase_of(0) == TaskPhase::Assigned);
  backup.handle_forwarded(
      Envelope{MessageKind::ClientTerminated, "srv-init", 1,
               body::client_terminated("client-0")},
      1.2);
  CHECK(backup.clients().empty());
  CHECK(backup.phase_of(0) == TaskPhase::Reassignable);
  CHECK(backup.invariants_ok());

  // A second CLIENT_TERMINATED for the same client is a no-op.
  Effects again = backup.handle_forwarded(
      Envelope{MessageKind::ClientTerminated, "srv-init", 2,
               body::client_terminated("client-0")},
      1.3);
  CHECK(pick<TraceFx>(again).empty());
}

TEST_CASE("any forwarded traffic counts as primary liveness") {
  ServerCore backup = ServerCore::from_snapshot(fresh_core().snapshot(),
                                                "srv-b");
  backup.note_primary_health(5.0);
  CHECK(backup.primary_last_health() == 5.0);
  backup.handle_forwarded(
      Envelope{MessageKind::HealthUpdate, "srv-init", 0, Json::object()}, 7.5);
  CHECK(backup.primary_last_health() == 7.5);
  backup.handle_forwarded(
      Envelope{MessageKind::NewClient, "srv-init", 1,
               body::new_client("c", "127.0.0.1", 1)},
      9.0);
  CHECK(backup.primary_last_health() == 9.0);
}

TEST_CASE("snapshot round-trips every replicated field") {
  ServerCore core = fresh_core(3, 2);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  join(core, "client-1", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(3)),
      1.1);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Result,
                 body::result(0, {30}, {"slept_ms"})),
      1.2);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({3, 4}), 7)),
      1.3);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Exception,
                 body::log_event("x", 1.0, Json{{"type", "worker_crashed"},
                                                {"task_id", 1}})),
      1.4);

  std::string text = snapshot_to_text(core.snapshot());
  ServerCore back = ServerCore::from_snapshot(snapshot_from_text(text),
                                              "srv-b");
  CHECK(back.digest() == core.digest());
  CHECK(back.ordered_tasks() == core.ordered_tasks());
  CHECK(back.clients().size() == 2);
  CHECK(back.clients().at("client-0").outbound_seq ==
        core.clients().at("client-0").outbound_seq);
  CHECK(back.cursor() == core.cursor());
  CHECK(back.min_hard() == core.min_hard());
  CHECK(back.invariants_ok());
  CHECK(back.role() == ServerRole::Backup);
}

TEST_CASE("snapshots missing task coverage are rejected") {
  ServerCore core = fresh_core();
  Json snap = core.snapshot();
  snap["task_status"].erase(snap["task_status"].begin());
  CHECK_THROWS(ServerCore::from_snapshot(snap, "srv-b"));
  CHECK_THROWS(ServerCore::from_snapshot(Json::object(), "srv-b"));
}

TEST_CASE("run completes into a filtered result table") {
  ExperimentConfig config = test_config();
  config.min_group_size = 2;
  std::vector<TaskDescriptor> tasks = grid_tasks(2, 2);  // (2,2)x2, (2,3)x2
  ServerCore core(config, "srv-init", tasks);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  // Complete three of four tasks; the (2,3) group keeps only one Done member.
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(4)),
      1.1);
  for (int64_t id : {0, 1, 2}) {
    core.handle_client_message(
        client_env("client-0", seq++, MessageKind::Result,
                   body::result(id, {30}, {"slept_ms"})),
        1.2);
  }
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({2, 3}), 3)),
      1.3);
  CHECK_FALSE(core.all_done());
  core.handle_client_message(client_env("client-0", seq++, MessageKind::Bye),
                             1.4);
  CHECK(core.all_done());

  ResultTable table = core.finalize_results();
  CHECK(table.titles ==
        std::vector<std::string>({"m", "n", "id", "slept_ms"}));
  // Group (2,3) has one Done member, below min_group_size 2: dropped.
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0][2] == Json(0));
  CHECK(table.rows[1][2] == Json(1));
  CHECK_FALSE(core.results_written());
  core.mark_results_written();
  CHECK(core.results_written());

  // With the filter off, the lone (2,3) row appears, in original order.
  ExperimentConfig loose = test_config();
  ServerCore core2(loose, "srv-init", tasks);
  int64_t seq2 = 0;
  join(core2, "client-0", seq2, 1.0);
  core2.handle_client_message(
      client_env("client-0", seq2++, MessageKind::RequestTasks,
                 body::request_tasks(4)),
      1.1);
  for (int64_t id : {2, 0, 1}) {
    core2.handle_client_message(
        client_env("client-0", seq2++, MessageKind::Result,
                   body::result(id, {30}, {"slept_ms"})),
        1.2);
  }
  core2.handle_client_message(
      client_env("client-0", seq2++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({2, 3}), 3)),
      1.3);
  core2.handle_client_message(client_env("client-0", seq2++, MessageKind::Bye),
                              1.4);
  ResultTable t2 = core2.finalize_results();
  REQUIRE(t2.rows.size() == 3);
  CHECK(t2.rows[0][2] == Json(0));  // original order despite arrival order
  CHECK(t2.rows[1][2] == Json(1));
  CHECK(t2.rows[2][0] == Json(2));
  CHECK(t2.rows[2][1] == Json(3));
}

TEST_CASE("want_client reflects remaining grantable work") {
  ServerCore core = fresh_core(2, 1);  // tasks (2,2),(2,3)
  CHECK(core.want_client());
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(2)),
      1.1);
  CHECK_FALSE(core.want_client());  // everything assigned
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::Exception,
                 body::log_event("x", 1.0, Json{{"type", "worker_crashed"},
                                                {"task_id", 0}})),
      1.2);
  CHECK(core.want_client());  // reassignable work reappeared
  core.handle_client_message(
      client_env("client-0", seq++, MessageKind::ReportHardTask,
                 body::report_hard_task(Hardness({2, 2}), 0)),
      1.3);
  CHECK_FALSE(core.want_client());  // queued task now pruned
  CHECK(core.phase_of(0) == TaskPhase::Skipped);
}

TEST_CASE("mirrored and control sequences are independent") {
  ServerCore core = fresh_core();
  Envelope c1 = core.control_message(MessageKind::Stop);
  Envelope c2 = core.control_message(MessageKind::Resume);
  CHECK(c1.sender_id == "srv-init");
  CHECK(c1.seq == 0);
  CHECK(c2.seq == 1);
  int64_t seq = 0;
  join(core, "client-0", seq, 1.0);
  Effects fx = core.handle_client_message(
      client_env("client-0", seq++, MessageKind::RequestTasks,
                 body::request_tasks(1)),
      1.1);
  auto sends = pick<SendToClientFx>(fx);
  REQUIRE(sends.size() == 1);
  CHECK(sends[0].env.seq == 0);  // per-client mirrored counter, not control's
  CHECK(core.control_message(MessageKind::Stop).seq == 2);
}

#pragma once

#include <string>

namespace gridsweep {

struct ClientNodeOptions {
  std::string client_id;
  int cpus = 0;  // 0: hardware concurrency
  std::string bind_host = "127.0.0.1";
  std::string primary_address;
  int primary_port = 0;
  double health_period_sec = 2.0;
};

// Runs the client event loop: handshakes with the primary, pulls and executes
// tasks in worker processes, exits 0 after its BYE. Exit 1 if the primary is
// unreachable at startup.
int run_client_node(const ClientNodeOptions& opts);

// Worker entry: reads one task as JSON on stdin, prints the start marker and
// the result record on stdout. Exit 1 on a malformed task or payload failure.
int run_worker();

}  // namespace gridsweep

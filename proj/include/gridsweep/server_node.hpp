#pragma once

#include <string>

#include "gridsweep/engine.hpp"
#include "gridsweep/server_core.hpp"

namespace gridsweep {

struct ServerNodeOptions {
  int listen_port = 0;          // 0 binds an ephemeral port
  std::string root_dir;         // trace.log, snapshots, clients/ live here
  std::string output_dir;       // canonical results.tsv location
  std::string primary_address;  // backup role: primary to introduce ourselves to
  int primary_port = 0;
};

// Runs the server event loop until the experiment is finalized (exit 0) or
// the node fails to start (exit 1). A node started from a snapshot serves the
// backup role first and keeps running across a promotion.
int run_server_node(ServerCore core, Engine& engine,
                    const ServerNodeOptions& opts);

}  // namespace gridsweep

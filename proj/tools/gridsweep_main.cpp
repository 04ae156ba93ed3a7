#include <fcntl.h>
#include <signal.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gridsweep/client_node.hpp"
#include "gridsweep/config.hpp"
#include "gridsweep/engine.hpp"
#include "gridsweep/results.hpp"
#include "gridsweep/server_core.hpp"
#include "gridsweep/server_node.hpp"
#include "gridsweep/workload.hpp"

namespace fs = std::filesystem;
using namespace gridsweep;

namespace {

int cmd_run(const std::string& config_path, int handshake_port_override,
            int cpus_override) {
  ExperimentConfig config;
  try {
    config = ExperimentConfig::from_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  if (handshake_port_override >= 0) config.handshake_port = handshake_port_override;
  if (cpus_override >= 0) config.client_cpus = cpus_override;

  std::vector<TaskDescriptor> tasks;
  try {
    tasks = build_workload_tasks(config.workload_name, config.workload_params);
  } catch (const std::exception& e) {
    std::cerr << "workload error: " << e.what() << "\n";
    return 2;
  }
  if (tasks.empty()) {
    std::cerr << "workload produced no tasks\n";
    return 2;
  }

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) {
    std::cerr << "cannot create " << config.output_dir << ": " << ec.message()
              << "\n";
    return 1;
  }
  int lock_fd =
      open((config.output_dir + "/.lock").c_str(), O_CREAT | O_RDWR, 0644);
  if (lock_fd < 0 || flock(lock_fd, LOCK_EX | LOCK_NB) != 0) {
    std::cerr << "another run is using " << config.output_dir << "\n";
    return 1;
  }

  std::unique_ptr<Engine> engine;
  try {
    engine = make_engine(config, config.output_dir + "/instances",
                         /*initial_process=*/true);
  } catch (const std::exception& e) {
    std::cerr << "engine error: " << e.what() << "\n";
    return 2;
  }

  std::string server_id = config.engine_config.prefix + "-server-init";
  ServerCore core(config, server_id, std::move(tasks));
  ServerNodeOptions opts;
  opts.listen_port = config.handshake_port;
  opts.root_dir = config.output_dir;
  opts.output_dir = config.output_dir;
  int rc = run_server_node(std::move(core), *engine, opts);
  flock(lock_fd, LOCK_UN);
  close(lock_fd);
  return rc;
}

int cmd_backup(const std::string& snapshot_path,
               const std::string& instance_name,
               const std::string& primary_address, int primary_port) {
  Json snap;
  try {
    std::ifstream in(snapshot_path);
    if (!in) throw std::runtime_error("cannot open " + snapshot_path);
    std::stringstream buf;
    buf << in.rdbuf();
    snap = snapshot_from_text(buf.str());
  } catch (const std::exception& e) {
    std::cerr << "snapshot error: " << e.what() << "\n";
    return 2;
  }
  try {
    ServerCore core = ServerCore::from_snapshot(snap, instance_name);
    ExperimentConfig config = core.config();
    std::unique_ptr<Engine> engine =
        make_engine(config, config.output_dir + "/instances",
                    /*initial_process=*/false);
    ServerNodeOptions opts;
    opts.listen_port = 0;
    opts.root_dir = config.output_dir + "/servers/" + instance_name;
    opts.output_dir = config.output_dir;
    opts.primary_address = primary_address;
    opts.primary_port = primary_port;
    return run_server_node(std::move(core), *engine, opts);
  } catch (const std::exception& e) {
    std::cerr << "snapshot error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_results(const std::string& output_dir,
                const std::vector<std::string>& filters,
                const std::vector<std::string>& group_by, bool aggregate) {
  ResultTable table;
  try {
    table = read_results_file(output_dir + "/results.tsv");
  } catch (const std::exception& e) {
    std::cerr << "results error: " << e.what() << "\n";
    return 1;
  }
  try {
    std::vector<std::pair<std::string, std::string>> parsed;
    for (const std::string& f : filters) {
      auto eq = f.find('=');
      if (eq == std::string::npos) {
        std::cerr << "bad filter (want title=value): " << f << "\n";
        return 2;
      }
      parsed.emplace_back(f.substr(0, eq), f.substr(eq + 1));
    }
    if (!parsed.empty()) table = filter_rows(table, parsed);
    if (aggregate) {
      if (group_by.empty()) {
        std::cerr << "--aggregate needs --group-by columns\n";
        return 2;
      }
      table = aggregate_groups(table, group_by);
    }
  } catch (const std::exception& e) {
    std::cerr << "results error: " << e.what() << "\n";
    return 2;
  }
  std::cout << render_aligned(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  signal(SIGPIPE, SIG_IGN);
  CLI::App app{"grid experiment runner"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run an experiment to completion");
  std::string config_path;
  int run_port = -1;
  int run_cpus = -1;
  run->add_option("config", config_path, "experiment config file")
      ->required();
  run->add_option("--handshake-port", run_port,
                  "listen port override (0 = ephemeral)");
  run->add_option("--cpus", run_cpus, "per-client worker count override");

  auto* client = app.add_subcommand("client", "client entry point");
  ClientNodeOptions copts;
  client->add_option("--client-id", copts.client_id)->required();
  client->add_option("--primary-address", copts.primary_address)->required();
  client->add_option("--handshake-port", copts.primary_port)->required();
  client->add_option("--bind", copts.bind_host);
  client->add_option("--cpus", copts.cpus);
  client->add_option("--health-period", copts.health_period_sec);

  auto* backup = app.add_subcommand("backup", "backup server entry point");
  std::string snapshot_path, instance_name, primary_address;
  int primary_port = 0;
  backup->add_option("--snapshot", snapshot_path)->required();
  backup->add_option("--instance-name", instance_name)->required();
  backup->add_option("--primary-address", primary_address)->required();
  backup->add_option("--primary-port", primary_port)->required();

  auto* results = app.add_subcommand("results", "print the results table");
  std::string output_dir = "output";
  std::vector<std::string> filters;
  std::vector<std::string> group_by;
  bool aggregate = false;
  results->add_option("output_dir", output_dir, "experiment output folder");
  results->add_option("--filter", filters,
                      "keep rows where column = value (repeatable)");
  results->add_option("--group-by", group_by,
                      "grouping columns for --aggregate (repeatable)");
  results->add_flag("--aggregate", aggregate,
                    "mean of numeric columns per group");

  auto* worker = app.add_subcommand("worker", "run one task from stdin");
  worker->group("");  // spawned by clients; hidden from help

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return cmd_run(config_path, run_port, run_cpus);
  if (client->parsed()) return run_client_node(copts);
  if (backup->parsed())
    return cmd_backup(snapshot_path, instance_name, primary_address,
                      primary_port);
  if (results->parsed())
    return cmd_results(output_dir, filters, group_by, aggregate);
  if (worker->parsed()) return run_worker();
  return 1;
}

#pragma once

#include <string>

#include "json.hpp"

namespace gridsweep {

using Json = nlohmann::json;

// Compute-platform settings. The cloud-oriented keys (project, zone, images,
// root_folder) are accepted for config portability; the local and simulated
// engines use only prefix, project_folder and max_clients.
struct EngineConfig {
  std::string prefix = "gridsweep";
  std::string project;
  std::string zone;
  std::string server_image;
  std::string client_image;
  std::string root_folder;
  std::string project_folder;
  int max_clients = 2;

  Json to_json() const;
  static EngineConfig from_json(const Json& j);
};

// Liveness policy. Handshaken instances must send HEALTH_UPDATE at least
// every update_limit_sec; instances that never handshake are reaped after
// max_non_active_sec.
struct HealthPolicy {
  double update_period_sec = 2.0;
  double update_limit_sec = 20.0;
  double max_non_active_sec = 90.0;

  Json to_json() const;
  static HealthPolicy from_json(const Json& j);
};

// Instance-creation retry schedule: base_sec * factor^attempt, capped.
struct BackoffPolicy {
  double base_sec = 1.0;
  double factor = 2.0;
  double cap_sec = 60.0;

  Json to_json() const;
  static BackoffPolicy from_json(const Json& j);
};

// One experiment: engine choice, replication switch, workload, health and
// backoff policies, fault plan (simulated engine only) and output location.
struct ExperimentConfig {
  std::string engine = "local";  // "local" | "sim"
  EngineConfig engine_config;
  // Default: off for the local engine, on for the simulated one.
  bool backup_enabled = false;
  int min_group_size = 0;
  HealthPolicy health;
  BackoffPolicy backoff;
  // Workload selected by name; defaults to the last dotted component of
  // engine_config.project_folder when absent.
  std::string workload_name = "bnb";
  Json workload_params = Json::object();
  Json fault_plan = Json::array();  // list of fault triggers, sim only
  std::string output_dir = "output";
  int client_cpus = 0;  // 0: use the machine's logical CPU count
  int handshake_port = 0;  // 0: pick an ephemeral port
  std::string bind_host = "127.0.0.1";

  Json to_json() const;
  // Unknown keys at any level are rejected with std::invalid_argument.
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig from_file(const std::string& path);
};

}  // namespace gridsweep

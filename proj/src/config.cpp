#include "gridsweep/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace gridsweep {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) {
    throw std::invalid_argument(where + " must be an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
    }
  }
}

}  // namespace

Json EngineConfig::to_json() const {
  return Json{{"prefix", prefix},
              {"project", project},
              {"zone", zone},
              {"server_image", server_image},
              {"client_image", client_image},
              {"root_folder", root_folder},
              {"project_folder", project_folder},
              {"max_clients", max_clients}};
}

EngineConfig EngineConfig::from_json(const Json& j) {
  reject_unknown(j,
                 {"prefix", "project", "zone", "server_image", "client_image",
                  "root_folder", "project_folder", "max_clients"},
                 "engine_config");
  EngineConfig c;
  c.prefix = j.value("prefix", c.prefix);
  c.project = j.value("project", c.project);
  c.zone = j.value("zone", c.zone);
  c.server_image = j.value("server_image", c.server_image);
  c.client_image = j.value("client_image", c.client_image);
  c.root_folder = j.value("root_folder", c.root_folder);
  c.project_folder = j.value("project_folder", c.project_folder);
  c.max_clients = j.value("max_clients", c.max_clients);
  if (c.prefix.empty()) throw std::invalid_argument("prefix must be non-empty");
  if (c.max_clients < 1) throw std::invalid_argument("max_clients must be >= 1");
  return c;
}

Json HealthPolicy::to_json() const {
  return Json{{"update_period_sec", update_period_sec},
              {"update_limit_sec", update_limit_sec},
              {"max_non_active_sec", max_non_active_sec}};
}

HealthPolicy HealthPolicy::from_json(const Json& j) {
  reject_unknown(j, {"update_period_sec", "update_limit_sec", "max_non_active_sec"},
                 "health");
  HealthPolicy p;
  p.update_period_sec = j.value("update_period_sec", p.update_period_sec);
  p.update_limit_sec = j.value("update_limit_sec", p.update_limit_sec);
  p.max_non_active_sec = j.value("max_non_active_sec", p.max_non_active_sec);
  if (p.update_period_sec <= 0 || p.update_limit_sec <= p.update_period_sec) {
    throw std::invalid_argument("need update_limit_sec > update_period_sec > 0");
  }
  return p;
}

Json BackoffPolicy::to_json() const {
  return Json{{"base_sec", base_sec}, {"factor", factor}, {"cap_sec", cap_sec}};
}

BackoffPolicy BackoffPolicy::from_json(const Json& j) {
  reject_unknown(j, {"base_sec", "factor", "cap_sec"}, "backoff");
  BackoffPolicy p;
  p.base_sec = j.value("base_sec", p.base_sec);
  p.factor = j.value("factor", p.factor);
  p.cap_sec = j.value("cap_sec", p.cap_sec);
  if (p.base_sec <= 0 || p.factor < 1 || p.cap_sec < p.base_sec) {
    throw std::invalid_argument("need cap_sec >= base_sec > 0 and factor >= 1");
  }
  return p;
}

Json ExperimentConfig::to_json() const {
  return Json{{"engine", engine},
              {"engine_config", engine_config.to_json()},
              {"backup_enabled", backup_enabled},
              {"min_group_size", min_group_size},
              {"health", health.to_json()},
              {"backoff", backoff.to_json()},
              {"workload", Json{{"name", workload_name}, {"params", workload_params}}},
              {"fault_plan", fault_plan},
              {"output_dir", output_dir},
              {"client_cpus", client_cpus},
              {"handshake_port", handshake_port},
              {"bind_host", bind_host}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  reject_unknown(j,
                 {"engine", "engine_config", "backup_enabled", "min_group_size",
                  "health", "backoff", "workload", "fault_plan", "output_dir",
                  "client_cpus", "handshake_port", "bind_host"},
                 "config");
  ExperimentConfig c;
  c.engine = j.value("engine", c.engine);
  if (c.engine != "local" && c.engine != "sim") {
    throw std::invalid_argument("engine must be \"local\" or \"sim\"");
  }
  if (j.contains("engine_config")) {
    c.engine_config = EngineConfig::from_json(j.at("engine_config"));
  }
  c.backup_enabled = j.value("backup_enabled", c.engine == "sim");
  c.min_group_size = j.value("min_group_size", 0);
  if (c.min_group_size < 0) {
    throw std::invalid_argument("min_group_size must be >= 0");
  }
  if (j.contains("health")) c.health = HealthPolicy::from_json(j.at("health"));
  if (j.contains("backoff")) c.backoff = BackoffPolicy::from_json(j.at("backoff"));
  if (j.contains("workload")) {
    const Json& w = j.at("workload");
    reject_unknown(w, {"name", "params"}, "workload");
    c.workload_name = w.value("name", "");
    c.workload_params = w.value("params", Json::object());
  } else {
    c.workload_name = "";
  }
  if (c.workload_name.empty()) {
    const std::string& dotted = c.engine_config.project_folder;
    std::size_t dot = dotted.rfind('.');
    c.workload_name =
        dotted.empty() ? "bnb" : dotted.substr(dot == std::string::npos ? 0 : dot + 1);
  }
  if (j.contains("fault_plan")) {
    c.fault_plan = j.at("fault_plan");
    if (!c.fault_plan.is_array()) {
      throw std::invalid_argument("fault_plan must be an array");
    }
    if (!c.fault_plan.empty() && c.engine != "sim") {
      throw std::invalid_argument("fault_plan requires the sim engine");
    }
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  if (c.output_dir.empty()) throw std::invalid_argument("output_dir must be set");
  c.client_cpus = j.value("client_cpus", 0);
  if (c.client_cpus < 0) throw std::invalid_argument("client_cpus must be >= 0");
  c.handshake_port = j.value("handshake_port", 0);
  c.bind_host = j.value("bind_host", c.bind_host);
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw std::invalid_argument("config file is not valid JSON: " + path);
  }
  return from_json(j);
}

}  // namespace gridsweep

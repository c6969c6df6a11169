// Copyright 2026 The hpcserve Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hpcserve/config.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <set>

#include "hpcserve/files.hpp"

namespace hpcserve::config {

using json = nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += "\n";
    out += l;
  }
  return out;
}

// Reads typed fields out of one JSON object, recording a diagnostic per
// type error and per unknown key.
class Fields {
 public:
  Fields(const json& obj, std::string where, std::vector<std::string>& diags)
      : obj_(obj), where_(std::move(where)), diags_(diags) {
    if (!obj_.is_object()) fail(where_, "expected an object");
  }

  ~Fields() {
    if (!obj_.is_object()) return;
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) fail(path(key), "unknown key");
    }
  }

  std::string path(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    if (!obj_.is_object()) return nullptr;
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw std::invalid_argument("expected a string");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw std::invalid_argument("expected true or false");
      }
      out = v->get<T>();
    } catch (const std::exception& e) {
      fail(path(key), e.what());
    }
  }

  void fail(const std::string& field, const std::string& message) {
    diags_.push_back(field + ": " + message);
  }

  std::vector<std::string>& diags() { return diags_; }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string>& diags_;
  std::set<std::string> seen_;
};

std::string resolve(const std::string& base, const std::string& path) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base) / path).lexically_normal().string();
}

scheduler::ServiceSpec read_service(const json& j, const std::string& where,
                                    std::vector<std::string>& diags) {
  scheduler::ServiceSpec s;
  Fields f(j, where, diags);
  f.get("name", s.name);
  f.get("job_template", s.job_template);
  f.get("min_instances", s.min_instances);
  f.get("max_instances", s.max_instances);
  f.get("target_concurrency_per_instance", s.target_concurrency_per_instance);
  f.get("window_seconds", s.window_seconds);
  f.get("walltime_seconds", s.walltime_seconds);
  f.get("renewal_margin_seconds", s.renewal_margin_seconds);
  f.get("probe_path", s.probe_path);
  f.get("startup_timeout_seconds", s.startup_timeout_seconds);
  if (const json* range = f.find("port_range")) {
    if (range->is_array() && range->size() == 2 && (*range)[0].is_number_integer() &&
        (*range)[1].is_number_integer()) {
      s.port_low = (*range)[0].get<int>();
      s.port_high = (*range)[1].get<int>();
    } else {
      f.fail(f.path("port_range"), "expected [low, high]");
    }
  }
  return s;
}

std::vector<scheduler::ServiceSpec> read_services(const json* arr, const std::string& where,
                                                  std::vector<std::string>& diags) {
  std::vector<scheduler::ServiceSpec> out;
  if (arr == nullptr) return out;
  if (!arr->is_array()) {
    diags.push_back(where + ": expected an array");
    return out;
  }
  for (std::size_t i = 0; i < arr->size(); ++i) {
    out.push_back(read_service((*arr)[i], where + "[" + std::to_string(i) + "]", diags));
  }
  return out;
}

void check_services(const std::vector<scheduler::ServiceSpec>& services, const std::string& where,
                    std::vector<std::string>& diags) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < services.size(); ++i) {
    const auto& s = services[i];
    std::string field = where + "[" + std::to_string(i) + "]";
    if (auto err = scheduler::validate(s); !err.empty()) diags.push_back(field + ": " + err);
    if (!names.insert(s.name).second) diags.push_back(field + ".name: duplicate service " + s.name);
  }
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError({"line " + std::to_string(line) + ": invalid JSON"});
  }
}

void read_proxy(const json& j, ProxyConfig& p, const std::string& base, std::vector<std::string>& diags) {
  Fields f(j, "proxy", diags);
  f.get("listen_host", p.listen_host);
  f.get("listen_port", p.listen_port);
  f.get("operator_host", p.operator_host);
  f.get("operator_port", p.operator_port);
  f.get("url_prefix", p.routes.url_prefix);
  f.get("request_timeout_ms", p.request_timeout_ms);
  f.get("worker_threads", p.worker_threads);
  f.get("access_log", p.access_log);
  p.access_log = resolve(base, p.access_log);
  f.get("ping_interval_ms", p.supervisor.ping_interval_ms);
  f.get("ping_timeout_ms", p.supervisor.ping_timeout_ms);
  f.get("backoff_initial_ms", p.supervisor.backoff_initial_ms);
  f.get("backoff_cap_ms", p.supervisor.backoff_cap_ms);

  if (const json* ch = f.find("channel")) {
    Fields c(*ch, "proxy.channel", diags);
    c.get("transport", p.channel.transport);
    c.get("argv", p.channel.argv);
    c.get("mode", p.channel.mode);
    c.get("connect_timeout_ms", p.channel.connect_timeout_ms);
  }
  if (const json* routes = f.find("routes")) {
    if (!routes->is_object()) {
      diags.push_back("proxy.routes: expected an object of model -> service");
    } else {
      for (const auto& [model, service] : routes->items()) {
        if (!service.is_string()) {
          diags.push_back("proxy.routes." + model + ": expected a service name");
          continue;
        }
        p.routes.models[model] = service.get<std::string>();
      }
    }
  }
  int default_rate = 60;
  f.get("default_requests_per_minute", default_rate);
  if (const json* keys = f.find("api_keys")) {
    if (!keys->is_array()) {
      diags.push_back("proxy.api_keys: expected an array");
    } else {
      for (std::size_t i = 0; i < keys->size(); ++i) {
        proxy::ApiKey key;
        key.requests_per_minute = default_rate;
        Fields k((*keys)[i], "proxy.api_keys[" + std::to_string(i) + "]", diags);
        k.get("id", key.id);
        k.get("key", key.secret);
        k.get("requests_per_minute", key.requests_per_minute);
        p.routes.keys.push_back(std::move(key));
      }
    }
  }
}

void read_scheduler(const json& j, SchedulerConfig& s, const std::string& base,
                    std::vector<std::string>& diags) {
  Fields f(j, "scheduler", diags);
  s.services = read_services(f.find("services"), "scheduler.services", diags);
  f.get("lock_path", s.lock_path);
  f.get("table_path", s.table_path);
  f.get("state_path", s.state_path);
  f.get("load_dir", s.load_dir);
  f.get("backup_path", s.backup_path);
  f.get("utc_offset_minutes", s.utc_offset_minutes);
  f.get("cluster", s.cluster);
  f.get("node_addresses", s.node_addresses);
  f.get("probe_timeout_ms", s.probe_timeout_ms);
  f.get("timer_period_ms", s.timer_period_ms);
  f.get("seed", s.seed);
  for (auto* path : {&s.lock_path, &s.table_path, &s.state_path, &s.load_dir, &s.backup_path}) {
    *path = resolve(base, *path);
  }
  if (const json* slurm = f.find("slurm")) {
    Fields c(*slurm, "scheduler.slurm", diags);
    c.get("sbatch", s.slurm.sbatch);
    c.get("squeue", s.slurm.squeue);
    c.get("scancel", s.slurm.scancel);
    c.get("user", s.slurm.user);
    c.get("timeout_ms", s.slurm.timeout_ms);
  }
  if (const json* schedule = f.find("schedule")) {
    if (!schedule->is_array()) {
      diags.push_back("scheduler.schedule: expected an array");
    } else {
      for (std::size_t i = 0; i < schedule->size(); ++i) {
        std::string where = "scheduler.schedule[" + std::to_string(i) + "]";
        Fields e((*schedule)[i], where, diags);
        std::string at;
        std::string file;
        e.get("at", at);
        e.get("services_file", file);
        auto minute = scheduler::parse_time_of_day(at);
        if (!minute) {
          diags.push_back(where + ".at: expected HH:MM");
          continue;
        }
        if (file.empty()) diags.push_back(where + ".services_file: missing");
        s.schedule.push_back({*minute, resolve(base, file)});
      }
      std::stable_sort(s.schedule.begin(), s.schedule.end(),
                       [](const auto& a, const auto& b) { return a.minute_of_day < b.minute_of_day; });
    }
  }
}

void read_sim(const json& j, SimConfig& s, std::vector<std::string>& diags) {
  Fields f(j, "sim", diags);
  f.get("nodes", s.topology.nodes);
  f.get("gpus_per_node", s.topology.gpus_per_node);
  f.get("node_prefix", s.topology.node_prefix);
  f.get("scheduling_delay_ms", s.scheduling_delay_ms);
  f.get("host", s.host);
  if (const json* profiles = f.find("profiles")) {
    if (!profiles->is_object()) {
      diags.push_back("sim.profiles: expected an object");
      return;
    }
    for (const auto& [name, body] : profiles->items()) {
      sim::ModelProfile p;
      Fields pf(body, "sim.profiles." + name, diags);
      pf.get("first_token_delay_ms", p.first_token_delay_ms);
      pf.get("tokens_per_second", p.tokens_per_second);
      pf.get("tokens_per_reply", p.tokens_per_reply);
      pf.get("max_concurrent", p.max_concurrent);
      pf.get("max_replies_per_second", p.max_replies_per_second);
      s.profiles[name] = p;
    }
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

std::vector<std::string> validate(const DeploymentConfig& c) {
  std::vector<std::string> diags;
  check_services(c.scheduler.services, "scheduler.services", diags);

  std::set<std::string> services;
  for (const auto& s : c.scheduler.services) services.insert(s.name);
  for (const auto& [model, service] : c.proxy.routes.models) {
    if (!services.count(service)) {
      diags.push_back("proxy.routes." + model + ": service '" + service +
                      "' is not defined in scheduler.services");
    }
  }

  std::set<std::string> ids;
  std::set<std::string> secrets;
  for (std::size_t i = 0; i < c.proxy.routes.keys.size(); ++i) {
    const auto& k = c.proxy.routes.keys[i];
    std::string where = "proxy.api_keys[" + std::to_string(i) + "]";
    if (k.id.empty()) diags.push_back(where + ".id: missing");
    if (k.secret.empty()) diags.push_back(where + ".key: missing");
    if (!k.id.empty() && !ids.insert(k.id).second) diags.push_back(where + ".id: duplicate");
    if (!k.secret.empty() && !secrets.insert(k.secret).second) diags.push_back(where + ".key: duplicate");
    if (k.requests_per_minute < 0) diags.push_back(where + ".requests_per_minute: must be >= 0");
  }

  const auto& p = c.proxy;
  if (p.routes.url_prefix.empty() || p.routes.url_prefix.front() != '/') {
    diags.push_back("proxy.url_prefix: must start with '/'");
  }
  if (p.channel.transport != "loopback" && p.channel.transport != "exec") {
    diags.push_back("proxy.channel.transport: expected loopback or exec");
  }
  if (p.channel.transport == "exec" && p.channel.argv.empty()) {
    diags.push_back("proxy.channel.argv: required for the exec transport");
  }
  if (p.channel.mode != "argument" && p.channel.mode != "environment") {
    diags.push_back("proxy.channel.mode: expected argument or environment");
  }
  if (p.supervisor.ping_timeout_ms >= p.supervisor.ping_interval_ms) {
    diags.push_back("proxy.ping_timeout_ms: must be below ping_interval_ms");
  }
  if (p.supervisor.backoff_initial_ms <= 0 || p.supervisor.backoff_cap_ms < p.supervisor.backoff_initial_ms) {
    diags.push_back("proxy.backoff_cap_ms: must be >= backoff_initial_ms > 0");
  }
  if (p.worker_threads <= 0) diags.push_back("proxy.worker_threads: must be positive");

  const auto& s = c.scheduler;
  if (s.cluster != "slurm" && s.cluster != "sim") {
    diags.push_back("scheduler.cluster: expected slurm or sim");
  }
  if (s.cluster == "sim") {
    for (std::size_t i = 0; i < s.services.size(); ++i) {
      std::string where = "scheduler.services[" + std::to_string(i) + "].job_template";
      try {
        auto tmpl = sim::parse_job_template(s.services[i].job_template);
        if (!tmpl.profile.empty() && !c.sim.profiles.count(tmpl.profile)) {
          diags.push_back(where + ": unknown profile " + tmpl.profile);
        }
      } catch (const std::exception& e) {
        diags.push_back(where + ": " + e.what());
      }
    }
  }
  if (s.utc_offset_minutes <= -24 * 60 || s.utc_offset_minutes >= 24 * 60) {
    diags.push_back("scheduler.utc_offset_minutes: out of range");
  }
  if (s.timer_period_ms <= 0) diags.push_back("scheduler.timer_period_ms: must be positive");

  std::vector<std::pair<std::string, std::string>> paths = {
      {"scheduler.lock_path", s.lock_path},   {"scheduler.table_path", s.table_path},
      {"scheduler.state_path", s.state_path}, {"scheduler.load_dir", s.load_dir},
      {"scheduler.backup_path", s.backup_path}, {"proxy.access_log", p.access_log},
      {"log_file", c.log_file}};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (paths[i].second.empty()) continue;
    for (std::size_t k = 0; k < i; ++k) {
      if (paths[k].second == paths[i].second) {
        diags.push_back(paths[i].first + ": same path as " + paths[k].first);
      }
    }
  }

  if (c.sim.topology.nodes <= 0 || c.sim.topology.gpus_per_node <= 0) {
    diags.push_back("sim.nodes: nodes and gpus_per_node must be positive");
  }
  if (c.sim.scheduling_delay_ms < 0) diags.push_back("sim.scheduling_delay_ms: must be >= 0");
  if (c.log_level != "debug" && c.log_level != "info" && c.log_level != "warn" && c.log_level != "error") {
    diags.push_back("log_level: expected debug, info, warn or error");
  }
  return diags;
}

DeploymentConfig parse_config(std::string_view text, const std::string& base_dir) {
  json root = parse_json(text);
  DeploymentConfig c;
  std::vector<std::string> diags;
  {
    Fields f(root, "", diags);
    if (const json* p = f.find("proxy")) read_proxy(*p, c.proxy, base_dir, diags);
    if (const json* s = f.find("scheduler")) read_scheduler(*s, c.scheduler, base_dir, diags);
    if (const json* s = f.find("sim")) read_sim(*s, c.sim, diags);
    f.get("log_file", c.log_file);
    f.get("log_level", c.log_level);
    c.log_file = resolve(base_dir, c.log_file);
  }
  if (!diags.empty()) throw ConfigError(std::move(diags));
  diags = validate(c);
  if (!diags.empty()) throw ConfigError(std::move(diags));
  return c;
}

DeploymentConfig load_config(const std::string& path) {
  auto text = files::read_file(path);
  if (!text) throw ConfigError({path + ": cannot read"});
  auto base = std::filesystem::path(path).parent_path().string();
  return parse_config(*text, base);
}

std::vector<scheduler::ServiceSpec> parse_services(std::string_view text) {
  json root = parse_json(text);
  std::vector<std::string> diags;
  std::vector<scheduler::ServiceSpec> services;
  {
    Fields f(root, "", diags);
    services = read_services(f.find("services"), "services", diags);
  }
  check_services(services, "services", diags);
  if (!diags.empty()) throw ConfigError(std::move(diags));
  return services;
}

std::vector<scheduler::ServiceSpec> load_services_file(const std::string& path) {
  auto text = files::read_file(path);
  if (!text) throw ConfigError({path + ": cannot read"});
  return parse_services(*text);
}

std::string config_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hpcserve::config

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

#pragma once

// Deployment configuration: one JSON document with proxy, scheduler and sim
// sections. See README.md for the key-by-key reference.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hpcserve/mock_model.hpp"
#include "hpcserve/proxy.hpp"
#include "hpcserve/scheduler.hpp"
#include "hpcserve/simcluster.hpp"
#include "hpcserve/workload.hpp"

namespace hpcserve::config {

struct ChannelConfig {
  std::string transport = "loopback";  // loopback | exec
  std::vector<std::string> argv;
  std::string mode = "argument";  // argument | environment
  Millis connect_timeout_ms = 4000;
};

struct ProxyConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::string operator_host = "127.0.0.1";
  int operator_port = 9090;
  ChannelConfig channel;
  proxy::RouteBinding routes;
  proxy::SupervisorOptions supervisor;
  Millis request_timeout_ms = 600'000;
  int worker_threads = 64;
  std::string access_log;
};

struct SchedulerConfig {
  std::vector<scheduler::ServiceSpec> services;
  std::string lock_path = "state/scheduler.lock";
  std::string table_path = "state/routing.table";
  std::string state_path = "state/desired.state";
  std::string load_dir = "state/load";
  std::vector<scheduler::ScheduleEntry> schedule;
  std::string backup_path;
  int utc_offset_minutes = 0;
  std::string cluster = "slurm";  // slurm | sim
  SlurmCli::Commands slurm;
  std::map<std::string, std::string> node_addresses;
  int probe_timeout_ms = 2000;
  Millis timer_period_ms = 5000;
  std::uint64_t seed = 0;  // 0 draws from random_device
};

struct SimConfig {
  sim::Topology topology;
  Millis scheduling_delay_ms = 3000;
  std::string host = "127.0.0.1";
  std::map<std::string, sim::ModelProfile> profiles;
};

struct DeploymentConfig {
  ProxyConfig proxy;
  SchedulerConfig scheduler;
  SimConfig sim;
  std::string log_file;
  std::string log_level = "warn";
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

// Relative paths are resolved against base_dir. Throws ConfigError carrying
// one diagnostic per problem (syntax errors name the line, semantic errors
// the field).
DeploymentConfig parse_config(std::string_view text, const std::string& base_dir = {});
DeploymentConfig load_config(const std::string& path);

// Semantic checks on an assembled config; empty when valid.
std::vector<std::string> validate(const DeploymentConfig& config);

// A services file holds {"services": [...]} with the same entries as the
// scheduler section. Used by the day/night schedule.
std::vector<scheduler::ServiceSpec> parse_services(std::string_view text);
std::vector<scheduler::ServiceSpec> load_services_file(const std::string& path);

// FNV-1a 64 of the text, as 16 hex digits.
std::string config_hash(std::string_view text);

}  // namespace hpcserve::config

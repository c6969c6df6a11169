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

// Everything in one process: simulated cluster with mock model servers, the
// scheduler, the interface behind a loopback channel, and the proxy.

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <thread>

#include "hpcserve/channel.hpp"
#include "hpcserve/clock.hpp"
#include "hpcserve/config.hpp"
#include "hpcserve/interface.hpp"
#include "hpcserve/mock_model.hpp"
#include "hpcserve/proxy.hpp"
#include "hpcserve/scheduler.hpp"
#include "hpcserve/simcluster.hpp"

namespace hpcserve {

struct LocalStackOptions {
  config::DeploymentConfig config;
  bool start_proxy = true;
  // Tick on every timer_period_ms in addition to ping-triggered ticks.
  bool timer_ticks = false;
  std::uint64_t seed = 1;
  // Listen ports for the proxy; 0 picks free ones.
  int ingress_port = 0;
  int operator_port = 0;
};

class LocalStack {
 public:
  explicit LocalStack(LocalStackOptions options);
  ~LocalStack();

  LocalStack(const LocalStack&) = delete;
  LocalStack& operator=(const LocalStack&) = delete;

  // False if the proxy could not bind.
  bool start();
  void stop();

  // Requests a scheduler tick; concurrent requests coalesce.
  void trigger_tick();
  // Polls the routing table until service has `count` READY instances.
  bool wait_until_ready(const std::string& service, int count, Millis timeout_ms);

  sim::SimCluster& cluster() { return cluster_; }
  channel::LoopbackTransport& transport() { return *transport_; }
  proxy::ChannelSupervisor& supervisor() { return *supervisor_; }
  proxy::Proxy& proxy() { return *proxy_; }
  scheduler::Scheduler& scheduler() { return *scheduler_; }
  const interface::InterfaceEnv& interface_env() const { return env_; }
  const config::DeploymentConfig& config() const { return options_.config; }
  std::size_t running_models() const;
  // Replies completed by every mock model this stack has run.
  std::uint64_t model_replies() const;
  std::uint64_t ticks() const { return ticks_.load(); }

 private:
  void drive_models();
  void tick_loop();

  LocalStackOptions options_;
  SystemClock& clock_;
  sim::SimCluster cluster_;
  HttpProber prober_;
  interface::HttpUpstream upstream_;
  interface::CallbackTrigger trigger_;
  interface::InterfaceEnv env_;
  std::unique_ptr<scheduler::Scheduler> scheduler_;
  std::unique_ptr<channel::LoopbackTransport> transport_;
  std::unique_ptr<proxy::ChannelSupervisor> supervisor_;
  std::unique_ptr<proxy::Proxy> proxy_;

  std::mutex seed_mutex_;
  std::mt19937_64 seed_rng_;

  mutable std::mutex models_mutex_;
  std::map<std::string, std::unique_ptr<sim::MockModelServer>> models_;
  std::atomic<std::uint64_t> retired_replies_{0};

  std::mutex tick_mutex_;
  std::condition_variable tick_cv_;
  bool tick_pending_ = false;
  std::atomic<std::uint64_t> ticks_{0};

  std::atomic<bool> stopping_{false};
  bool started_ = false;
  std::thread driver_thread_;
  std::thread tick_thread_;
};

}  // namespace hpcserve

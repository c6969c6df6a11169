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

#include "hpcserve/local_stack.hpp"

#include <filesystem>

#include "hpcserve/files.hpp"
#include "hpcserve/log.hpp"

namespace hpcserve {

namespace {

std::map<std::string, std::string> loopback_addresses(const config::DeploymentConfig& c) {
  auto addresses = c.scheduler.node_addresses;
  addresses.emplace("*", c.sim.host);
  return addresses;
}

}  // namespace

LocalStack::LocalStack(LocalStackOptions options)
    : options_(std::move(options)),
      clock_(SystemClock::instance()),
      cluster_(options_.config.sim.topology, options_.config.sim.scheduling_delay_ms, clock_),
      prober_(loopback_addresses(options_.config), options_.config.scheduler.probe_timeout_ms),
      trigger_([this] { trigger_tick(); }),
      seed_rng_(options_.seed) {
  const auto& sc = options_.config.scheduler;
  files::ensure_directory(sc.load_dir);
  for (const auto* path : {&sc.lock_path, &sc.table_path, &sc.state_path}) {
    auto parent = std::filesystem::path(*path).parent_path();
    if (!parent.empty()) files::ensure_directory(parent.string());
  }

  scheduler::SchedulerPaths paths{sc.lock_path, sc.table_path, sc.state_path, sc.load_dir};
  scheduler_ = std::make_unique<scheduler::Scheduler>(paths, cluster_, prober_, clock_, options_.seed);
  scheduler_->set_services(sc.services);
  if (!sc.schedule.empty()) {
    scheduler_->set_swapper(std::make_shared<scheduler::ConfigSwapper>(
        sc.schedule, config::load_services_file, sc.backup_path, sc.utc_offset_minutes));
  }

  env_.table_path = sc.table_path;
  env_.state_path = sc.state_path;
  env_.load_dir = sc.load_dir;
  env_.node_addresses = loopback_addresses(options_.config);
  env_.clock = &clock_;
  env_.upstream = &upstream_;
  env_.trigger = &trigger_;
  env_.next_seed = [this] {
    std::lock_guard lock(seed_mutex_);
    return seed_rng_();
  };

  transport_ = std::make_unique<channel::LoopbackTransport>(
      [this](const std::string& command, const std::string& body, ByteSink& out) {
        StringSource source(body);
        interface::handle_invocation(command, source, out, env_);
      });
  supervisor_ = std::make_unique<proxy::ChannelSupervisor>(*transport_, clock_,
                                                           options_.config.proxy.supervisor);
  const auto& pc = options_.config.proxy;
  proxy::ProxyOptions po;
  po.routes = pc.routes;
  po.request_timeout_ms = pc.request_timeout_ms;
  po.worker_threads = pc.worker_threads;
  po.access_log_path = pc.access_log;
  proxy_ = std::make_unique<proxy::Proxy>(po, *transport_, *supervisor_, clock_);
}

LocalStack::~LocalStack() { stop(); }

bool LocalStack::start() {
  if (started_) return true;
  started_ = true;
  stopping_ = false;
  driver_thread_ = std::thread([this] { drive_models(); });
  tick_thread_ = std::thread([this] { tick_loop(); });
  if (options_.start_proxy) {
    const auto& pc = options_.config.proxy;
    if (!proxy_->start(pc.listen_host, options_.ingress_port, pc.operator_host, options_.operator_port)) {
      HPC_LOG_ERROR("proxy bind failed");
      return false;
    }
    supervisor_->start();
  }
  trigger_tick();
  return true;
}

void LocalStack::stop() {
  if (!started_) return;
  started_ = false;
  if (options_.start_proxy) {
    supervisor_->stop();
    proxy_->stop();
  }
  {
    std::lock_guard lock(tick_mutex_);
    stopping_ = true;
  }
  tick_cv_.notify_all();
  if (tick_thread_.joinable()) tick_thread_.join();
  if (driver_thread_.joinable()) driver_thread_.join();
  std::lock_guard lock(models_mutex_);
  for (auto& [_, server] : models_) {
    server->stop();
    retired_replies_.fetch_add(server->replies());
  }
  models_.clear();
}

void LocalStack::trigger_tick() {
  {
    std::lock_guard lock(tick_mutex_);
    tick_pending_ = true;
  }
  tick_cv_.notify_one();
}

void LocalStack::tick_loop() {
  const Millis period = options_.config.scheduler.timer_period_ms;
  std::unique_lock lock(tick_mutex_);
  while (!stopping_) {
    if (options_.timer_ticks) {
      tick_cv_.wait_for(lock, std::chrono::milliseconds(period),
                        [this] { return tick_pending_ || stopping_; });
    } else {
      tick_cv_.wait(lock, [this] { return tick_pending_ || stopping_.load(); });
    }
    if (stopping_) break;
    tick_pending_ = false;
    lock.unlock();
    scheduler_->run_once();
    ticks_.fetch_add(1);
    lock.lock();
  }
}

void LocalStack::drive_models() {
  const auto& sim = options_.config.sim;
  while (!stopping_) {
    cluster_.sync();
    for (auto& event : cluster_.drain_lifecycle()) {
      const auto& job = event.job;
      if (event.kind == sim::Lifecycle::Kind::kStarted) {
        sim::ModelProfile profile;
        if (auto it = sim.profiles.find(job.profile); it != sim.profiles.end()) profile = it->second;
        auto server = std::make_unique<sim::MockModelServer>(
            job.service, profile, [this, id = job.id] { return cluster_.is_health_ready(id); });
        if (!server->start(sim.host, job.port)) {
          HPC_LOG_WARN("mock for job " << job.id << " could not bind port " << job.port);
          continue;
        }
        std::lock_guard lock(models_mutex_);
        models_[job.id] = std::move(server);
      } else {
        std::unique_ptr<sim::MockModelServer> server;
        {
          std::lock_guard lock(models_mutex_);
          if (auto it = models_.find(job.id); it != models_.end()) {
            server = std::move(it->second);
            models_.erase(it);
          }
        }
        if (server) {
          server->stop();
          retired_replies_.fetch_add(server->replies());
        }
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

std::size_t LocalStack::running_models() const {
  std::lock_guard lock(models_mutex_);
  return models_.size();
}

std::uint64_t LocalStack::model_replies() const {
  std::lock_guard lock(models_mutex_);
  std::uint64_t total = retired_replies_.load();
  for (const auto& [_, server] : models_) total += server->replies();
  return total;
}

bool LocalStack::wait_until_ready(const std::string& service, int count, Millis timeout_ms) {
  Millis deadline = clock_.now_ms() + timeout_ms;
  while (clock_.now_ms() < deadline) {
    try {
      auto table = RoutingTable::load(options_.config.scheduler.table_path);
      if (static_cast<int>(table.count(service, InstanceState::kReady)) >= count) return true;
    } catch (const std::exception&) {
    }
    trigger_tick();
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

}  // namespace hpcserve

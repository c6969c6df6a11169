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

#include "hpcserve/simcluster.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <set>
#include <sstream>

#include "hpcserve/log.hpp"

namespace hpcserve::sim {
namespace {

constexpr Millis kNever = std::numeric_limits<Millis>::max();

bool is_live(SimJobState s) { return s == SimJobState::kPending || s == SimJobState::kRunning; }

}  // namespace

std::string_view to_string(SimJobState state) {
  switch (state) {
    case SimJobState::kPending:
      return "PENDING";
    case SimJobState::kRunning:
      return "RUNNING";
    case SimJobState::kCompleted:
      return "COMPLETED";
    case SimJobState::kFailed:
      return "FAILED";
  }
  return "?";
}

JobTemplate parse_job_template(std::string_view text) {
  JobTemplate tmpl;
  std::istringstream in{std::string(text)};
  std::string token;
  bool any = false;
  while (in >> token) {
    auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == token.size()) {
      throw RejectedTemplate("template token '" + token + "' is not key=value");
    }
    std::string key = token.substr(0, eq);
    std::string value = token.substr(eq + 1);
    if (key == "gpus") {
      int gpus = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), gpus);
      if (ec != std::errc() || p != value.data() + value.size() || gpus < 1) {
        throw RejectedTemplate("gpus must be a positive integer");
      }
      tmpl.gpus = gpus;
    } else if (key == "cold_start") {
      try {
        std::size_t used = 0;
        tmpl.cold_start_seconds = std::stod(value, &used);
        if (used != value.size() || tmpl.cold_start_seconds < 0) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw RejectedTemplate("cold_start must be a non-negative number");
      }
    } else if (key == "profile") {
      tmpl.profile = value;
    } else {
      throw RejectedTemplate("unknown template key '" + key + "'");
    }
    any = true;
  }
  if (!any) throw RejectedTemplate("empty template");
  return tmpl;
}

SimCluster::SimCluster(Topology topology, Millis scheduling_delay_ms, Clock& clock)
    : topology_(std::move(topology)),
      scheduling_delay_ms_(scheduling_delay_ms),
      clock_(clock),
      now_(clock.now_ms()) {
  for (int i = 0; i < topology_.nodes; ++i) {
    std::ostringstream name;
    name << topology_.node_prefix << (i + 1 < 10 ? "0" : "") << (i + 1);
    nodes_.push_back(SimNode{name.str(), topology_.gpus_per_node, topology_.gpus_per_node, true});
  }
}

std::string SimCluster::submit(const std::string& job_template, std::int64_t walltime_s,
                               const SubmitEnv& env) {
  auto tmpl = parse_job_template(job_template);
  std::lock_guard lock(mutex_);
  if (unreachable_) throw ClusterUnreachable("simulated outage");
  advance_locked(clock_.now_ms());
  SimJob job;
  job.id = std::to_string(next_id_++);
  job.service = env.service;
  job.port = env.port;
  job.gpus = tmpl.gpus;
  job.profile = tmpl.profile;
  job.submit_time = now_;
  job.walltime_ms = walltime_s * kMillisPerSecond;
  job.cold_start_ms = seconds_to_millis(tmpl.cold_start_seconds);
  trace_.push_back({now_, "submit", job.id, env.service + ":" + std::to_string(env.port)});
  submit_order_.push_back(job.id);
  jobs_.emplace(job.id, job);
  ++submissions_;
  try_start_locked(now_);
  return job.id;
}

std::vector<JobInfo> SimCluster::list() {
  std::lock_guard lock(mutex_);
  if (unreachable_) throw ClusterUnreachable("simulated outage");
  advance_locked(clock_.now_ms());
  std::vector<JobInfo> out;
  for (const auto& id : submit_order_) {
    const auto& job = jobs_.at(id);
    if (!is_live(job.state)) continue;
    JobInfo info;
    info.id = job.id;
    if (job.state == SimJobState::kRunning) {
      info.state = JobState::kRunning;
      info.node = job.node;
      info.remaining_walltime_s = (job.start_time + job.walltime_ms - now_) / kMillisPerSecond;
    } else {
      info.state = JobState::kPending;
      info.remaining_walltime_s = job.walltime_ms / kMillisPerSecond;
    }
    out.push_back(std::move(info));
  }
  return out;
}

void SimCluster::cancel(const std::string& job_id) {
  std::lock_guard lock(mutex_);
  advance_locked(clock_.now_ms());
  auto it = jobs_.find(job_id);
  if (it == jobs_.end() || !is_live(it->second.state)) {
    HPC_LOG_INFO("cancel of unknown or finished job " << job_id << " ignored");
    return;
  }
  ++cancellations_;
  if (ready_locked(it->second, now_)) ++ready_cancellations_;
  finish_locked(it->second, SimJobState::kCompleted, now_, "cancel");
  try_start_locked(now_);
}

void SimCluster::sync() {
  std::lock_guard lock(mutex_);
  advance_locked(clock_.now_ms());
}

bool SimCluster::ready_locked(const SimJob& job, Millis now) const {
  return job.state == SimJobState::kRunning && !job.never_ready &&
         now >= job.start_time + job.cold_start_ms;
}

SimNode* SimCluster::node_locked(const std::string& name) {
  auto it = std::find_if(nodes_.begin(), nodes_.end(),
                         [&](const SimNode& n) { return n.name == name; });
  return it == nodes_.end() ? nullptr : &*it;
}

void SimCluster::finish_locked(SimJob& job, SimJobState final_state, Millis at,
                               const std::string& why) {
  if (job.state == SimJobState::kRunning) {
    if (SimNode* node = node_locked(job.node); node != nullptr && node->healthy) {
      node->gpus_free += job.gpus;
    }
    lifecycle_.push_back(Lifecycle{Lifecycle::Kind::kStopped, job});
  }
  job.state = final_state;
  job.end_time = at;
  trace_.push_back({at, why, job.id, job.node});
}

Millis SimCluster::next_event_locked(Millis after) const {
  Millis next = kNever;
  for (const auto& [id, job] : jobs_) {
    if (job.state == SimJobState::kRunning) {
      Millis expiry = job.start_time + job.walltime_ms;
      if (expiry > after) next = std::min(next, expiry);
      Millis ready = job.start_time + job.cold_start_ms;
      if (!job.never_ready && ready > after) next = std::min(next, ready);
    } else if (job.state == SimJobState::kPending) {
      Millis eligible = job.submit_time + scheduling_delay_ms_;
      if (eligible > after) next = std::min(next, eligible);
    }
  }
  return next;
}

void SimCluster::advance_locked(Millis t) {
  if (t < now_) return;
  while (true) {
    Millis next = next_event_locked(now_);
    if (next > t) break;
    now_ = next;
    for (auto& [id, job] : jobs_) {
      if (job.state != SimJobState::kRunning) continue;
      if (job.start_time + job.walltime_ms <= now_) {
        finish_locked(job, SimJobState::kCompleted, now_, "expire");
      } else if (!job.never_ready && job.start_time + job.cold_start_ms == now_) {
        trace_.push_back({now_, "ready", job.id, job.node});
      }
    }
    try_start_locked(now_);
  }
  now_ = t;
  try_start_locked(now_);
}

void SimCluster::try_start_locked(Millis now) {
  std::set<int> blocked_shapes;
  for (const auto& id : submit_order_) {
    auto& job = jobs_.at(id);
    if (job.state != SimJobState::kPending) continue;
    if (blocked_shapes.count(job.gpus)) continue;
    if (job.submit_time + scheduling_delay_ms_ > now) {
      // Later jobs of this shape must not overtake it.
      blocked_shapes.insert(job.gpus);
      continue;
    }
    auto node = std::find_if(nodes_.begin(), nodes_.end(), [&](const SimNode& n) {
      return n.healthy && n.gpus_free >= job.gpus;
    });
    if (node == nodes_.end()) {
      blocked_shapes.insert(job.gpus);
      continue;
    }
    node->gpus_free -= job.gpus;
    job.state = SimJobState::kRunning;
    job.node = node->name;
    job.start_time = now;
    trace_.push_back({now, "start", job.id, job.node});
    if (job.cold_start_ms == 0 && !job.never_ready) {
      trace_.push_back({now, "ready", job.id, job.node});
    }
    lifecycle_.push_back(Lifecycle{Lifecycle::Kind::kStarted, job});
  }
}

void SimCluster::kill_node(const std::string& name) {
  std::lock_guard lock(mutex_);
  advance_locked(clock_.now_ms());
  SimNode* node = node_locked(name);
  if (node == nullptr) return;
  trace_.push_back({now_, "node-kill", "", name});
  for (auto& [id, job] : jobs_) {
    if (job.state == SimJobState::kRunning && job.node == name) {
      finish_locked(job, SimJobState::kFailed, now_, "fail");
    }
  }
  node->healthy = false;
  node->gpus_free = node->gpus_total;
}

void SimCluster::restore_node(const std::string& name) {
  std::lock_guard lock(mutex_);
  advance_locked(clock_.now_ms());
  if (SimNode* node = node_locked(name); node != nullptr && !node->healthy) {
    node->healthy = true;
    node->gpus_free = node->gpus_total;
    trace_.push_back({now_, "node-restore", "", name});
    try_start_locked(now_);
  }
}

void SimCluster::set_never_ready(const std::string& job_id) {
  std::lock_guard lock(mutex_);
  if (auto it = jobs_.find(job_id); it != jobs_.end()) it->second.never_ready = true;
}

void SimCluster::set_unreachable(bool unreachable) {
  std::lock_guard lock(mutex_);
  unreachable_ = unreachable;
}

bool SimCluster::is_health_ready(const std::string& job_id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return false;
  Millis now = std::max(now_, clock_.now_ms());
  const auto& job = it->second;
  return ready_locked(job, now) && now < job.start_time + job.walltime_ms;
}

bool SimCluster::is_port_ready(const std::string& node, int port) const {
  std::lock_guard lock(mutex_);
  Millis now = std::max(now_, clock_.now_ms());
  for (const auto& [id, job] : jobs_) {
    if (job.node == node && job.port == port && ready_locked(job, now) &&
        now < job.start_time + job.walltime_ms) {
      return true;
    }
  }
  return false;
}

std::vector<SimNode> SimCluster::nodes() const {
  std::lock_guard lock(mutex_);
  return nodes_;
}

std::optional<SimJob> SimCluster::job(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<SimJob> SimCluster::jobs() const {
  std::lock_guard lock(mutex_);
  std::vector<SimJob> out;
  for (const auto& id : submit_order_) out.push_back(jobs_.at(id));
  return out;
}

std::vector<TraceEvent> SimCluster::trace() const {
  std::lock_guard lock(mutex_);
  return trace_;
}

std::vector<Lifecycle> SimCluster::drain_lifecycle() {
  std::lock_guard lock(mutex_);
  std::vector<Lifecycle> out(lifecycle_.begin(), lifecycle_.end());
  lifecycle_.clear();
  return out;
}

std::size_t SimCluster::submissions() const {
  std::lock_guard lock(mutex_);
  return submissions_;
}

std::size_t SimCluster::cancellations() const {
  std::lock_guard lock(mutex_);
  return cancellations_;
}

std::size_t SimCluster::ready_cancellations() const {
  std::lock_guard lock(mutex_);
  return ready_cancellations_;
}

bool SimCluster::check_conservation() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, int> reserved;
  for (const auto& [id, job] : jobs_) {
    if (job.state == SimJobState::kRunning) reserved[job.node] += job.gpus;
  }
  for (const auto& node : nodes_) {
    if (!node.healthy) {
      if (reserved.count(node.name)) return false;
      continue;
    }
    if (node.gpus_free < 0 || node.gpus_free > node.gpus_total) return false;
    if (node.gpus_free + reserved[node.name] != node.gpus_total) return false;
  }
  return true;
}

bool SimProber::probe(const std::string& node, int port, const std::string&) {
  return cluster_.is_port_ready(node, port);
}

}  // namespace hpcserve::sim

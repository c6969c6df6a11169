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

// Desk-scale stand-in for a batch-scheduled GPU cluster with sbatch / squeue
// / scancel semantics. Time comes from a Clock: a ManualClock gives virtual
// time (advance explicitly, deterministic), the SystemClock gives real time.

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hpcserve/clock.hpp"
#include "hpcserve/workload.hpp"

namespace hpcserve::sim {

struct Topology {
  int nodes = 10;
  int gpus_per_node = 4;
  std::string node_prefix = "gpu";
};

struct SimNode {
  std::string name;
  int gpus_total = 0;
  int gpus_free = 0;
  bool healthy = true;
};

enum class SimJobState { kPending, kRunning, kCompleted, kFailed };

std::string_view to_string(SimJobState state);

class RejectedTemplate : public SubmitFailed {
 public:
  using SubmitFailed::SubmitFailed;
};

// Job template understood by the simulator: whitespace-separated key=value
// pairs, e.g. "gpus=2 cold_start=60 profile=mixtral".
struct JobTemplate {
  int gpus = 1;
  double cold_start_seconds = 0.0;
  std::string profile;
};

// Throws RejectedTemplate.
JobTemplate parse_job_template(std::string_view text);

struct SimJob {
  std::string id;
  std::string service;
  int port = 0;
  int gpus = 1;
  std::string profile;
  SimJobState state = SimJobState::kPending;
  std::string node;
  Millis submit_time = 0;
  Millis start_time = 0;
  Millis end_time = 0;
  Millis walltime_ms = 0;
  Millis cold_start_ms = 0;
  bool never_ready = false;
};

struct TraceEvent {
  Millis time = 0;
  std::string kind;  // submit, start, ready, expire, cancel, fail, node-kill
  std::string job_id;
  std::string detail;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

// Start/stop notifications for attaching mock model servers.
struct Lifecycle {
  enum class Kind { kStarted, kStopped } kind;
  SimJob job;
};

class SimCluster final : public WorkloadManager {
 public:
  SimCluster(Topology topology, Millis scheduling_delay_ms, Clock& clock);

  std::string submit(const std::string& job_template, std::int64_t walltime_s,
                     const SubmitEnv& env) override;
  std::vector<JobInfo> list() override;
  void cancel(const std::string& job_id) override;

  // Processes every start, readiness and expiry up to the clock's now.
  void sync();

  void kill_node(const std::string& node);
  void restore_node(const std::string& node);
  void set_never_ready(const std::string& job_id);
  // Makes list() and submit() throw ClusterUnreachable while set.
  void set_unreachable(bool unreachable);

  // Health as the job's model server would report it right now.
  bool is_health_ready(const std::string& job_id) const;
  bool is_port_ready(const std::string& node, int port) const;

  std::vector<SimNode> nodes() const;
  std::optional<SimJob> job(const std::string& id) const;
  std::vector<SimJob> jobs() const;
  std::vector<TraceEvent> trace() const;
  std::vector<Lifecycle> drain_lifecycle();

  std::size_t submissions() const;
  std::size_t cancellations() const;
  // Cancellations that hit a job whose model was already serving.
  std::size_t ready_cancellations() const;

  // Sum of free plus reserved GPUs on healthy nodes equals their total.
  bool check_conservation() const;

  Millis scheduling_delay_ms() const { return scheduling_delay_ms_; }
  Clock& clock() const { return clock_; }

 private:
  void advance_locked(Millis t);
  void try_start_locked(Millis now);
  void finish_locked(SimJob& job, SimJobState final_state, Millis at, const std::string& why);
  bool ready_locked(const SimJob& job, Millis now) const;
  SimNode* node_locked(const std::string& name);
  Millis next_event_locked(Millis after) const;

  Topology topology_;
  Millis scheduling_delay_ms_;
  Clock& clock_;
  mutable std::mutex mutex_;
  std::vector<SimNode> nodes_;
  std::map<std::string, SimJob> jobs_;
  std::vector<std::string> submit_order_;
  std::vector<TraceEvent> trace_;
  std::deque<Lifecycle> lifecycle_;
  Millis now_ = 0;
  std::uint64_t next_id_ = 1000;
  std::size_t submissions_ = 0;
  std::size_t cancellations_ = 0;
  std::size_t ready_cancellations_ = 0;
  bool unreachable_ = false;
};

// Prober answering from the simulator's readiness model (virtual-time mode).
class SimProber final : public Prober {
 public:
  explicit SimProber(const SimCluster& cluster) : cluster_(cluster) {}
  bool probe(const std::string& node, int port, const std::string& path) override;

 private:
  const SimCluster& cluster_;
};

}  // namespace hpcserve::sim

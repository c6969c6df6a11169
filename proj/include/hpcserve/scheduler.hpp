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

// Reconciling autoscaler. One tick lists the cluster's jobs, recomputes the
// desired instance count per service from the time-weighted request
// concurrency, renews or lets instances expire, submits missing instances on
// collision-free ports, probes new instances to readiness and rewrites the
// routing table.

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hpcserve/clock.hpp"
#include "hpcserve/routing.hpp"
#include "hpcserve/workload.hpp"

namespace hpcserve::scheduler {

struct ServiceSpec {
  std::string name;
  std::string job_template;
  int min_instances = 1;
  int max_instances = 4;
  // Concurrent requests one instance absorbs before another is wanted.
  double target_concurrency_per_instance = 4.0;
  std::int64_t window_seconds = 300;
  std::int64_t walltime_seconds = 4 * 3600;
  std::int64_t renewal_margin_seconds = 15 * 60;
  std::string probe_path = "/health";
  std::int64_t startup_timeout_seconds = 20 * 60;
  int port_low = kPortRangeLow;
  int port_high = kPortRangeHigh;

  friend bool operator==(const ServiceSpec&, const ServiceSpec&) = default;
};

// Empty when valid, otherwise the first violated constraint.
std::string validate(const ServiceSpec& spec);

// clamp(ceil(avg / target), min, max)
int desired_instances(double avg_concurrency, const ServiceSpec& spec);

struct WindowAverage {
  double average = 0.0;
  // Events needed to reproduce the same carried-in concurrency later: one
  // +1 at the window start per request still open there, then every event
  // after the window start.
  std::vector<LoadEvent> retained;
  bool corrupt = false;
};

// Time-weighted mean of the concurrency step function over
// [now - window, now). Concurrency at millisecond m is the sum of deltas with
// timestamp <= m.
WindowAverage average_concurrency(std::span<const LoadEvent> events, Millis window_ms, Millis now);

// Reads load/<service>.log, computes the window average and truncates the log
// to the window under the file lock. A corrupt log (negative running sum) is
// reset and reported as 0.
double avg_concurrency(const std::string& load_dir, const std::string& service,
                       std::int64_t window_seconds, Millis now);

class PortSpaceExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform draw from [low, high] avoiding ports held by any table entry.
// Up to 100 redraws, then a linear scan from low.
int pick_port(const RoutingTable& table, int low, int high, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Lock file.

inline constexpr std::int64_t kStaleLockSeconds = 60;

enum class LockStatus { kHeld, kBusy };

// Exclusive-create lock file holding "<pid> <acquired_at>". Released (file
// removed) on destruction if still owned.
class SchedulerLock {
 public:
  static std::optional<SchedulerLock> acquire(const std::string& path, std::int64_t now_seconds,
                                              std::int64_t stale_after = kStaleLockSeconds);

  SchedulerLock(SchedulerLock&& other) noexcept;
  SchedulerLock& operator=(SchedulerLock&& other) noexcept;
  SchedulerLock(const SchedulerLock&) = delete;
  SchedulerLock& operator=(const SchedulerLock&) = delete;
  ~SchedulerLock();

  void release();
  const std::string& path() const { return path_; }

 private:
  SchedulerLock(std::string path, std::string token) : path_(std::move(path)), token_(std::move(token)) {}

  std::string path_;
  std::string token_;
};

LockStatus acquire_lock(const std::string& path, std::int64_t now_seconds,
                        std::optional<SchedulerLock>& out);

// ---------------------------------------------------------------------------
// Tick.

enum class ActionKind {
  kDropVanished,
  kSubmit,
  kSubmitFailed,
  kRenew,
  kMarkDraining,
  kMarkStarting,
  kMarkReady,
  kCancelStartupTimeout,
};

std::string_view to_string(ActionKind kind);

struct Action {
  ActionKind kind;
  std::string service;
  std::string job_id;
  int port = 0;
};

struct TickContext {
  WorkloadManager& cluster;
  Prober& prober;
  std::mt19937_64& rng;
  std::string load_dir;
};

struct TickResult {
  RoutingTable table;
  std::vector<Action> actions;
  std::vector<ServiceStatus> status;

  std::size_t count(ActionKind kind) const;
};

// Marks READY entries near walltime end as DRAINING and submits replacements
// while the non-draining live count is below desired. Returns the actions.
std::vector<Action> renew_expiring(RoutingTable& table, const std::vector<JobInfo>& jobs,
                                   const ServiceSpec& spec, int desired, TickContext& ctx,
                                   std::int64_t now_seconds);

// SUBMITTED -> STARTING once the job runs, STARTING -> READY on a 200 probe,
// STARTING past startup_timeout -> cancelled and removed.
std::vector<Action> probe_instances(RoutingTable& table, const std::vector<JobInfo>& jobs,
                                    const std::vector<ServiceSpec>& specs, TickContext& ctx,
                                    std::int64_t now_seconds);

// One reconciliation pass on an in-memory table. Throws ClusterUnreachable
// before touching the table if the job listing fails.
TickResult tick(const std::vector<ServiceSpec>& specs, RoutingTable table, TickContext& ctx,
                Millis now);

// ---------------------------------------------------------------------------
// Day/night configuration schedule.

struct ScheduleEntry {
  int minute_of_day = 0;  // 0..1439
  std::string config_path;
};

// "HH:MM" -> minute of day; nullopt on syntax error.
std::optional<int> parse_time_of_day(std::string_view text);

// Index of the entry whose window contains minute_of_day; before the first
// entry the last one wraps around. schedule must be non-empty and sorted.
std::size_t select_schedule_entry(const std::vector<ScheduleEntry>& schedule, int minute_of_day);

using ServicesLoader = std::function<std::vector<ServiceSpec>(const std::string& path)>;

class ConfigSwapper {
 public:
  // backup_path receives the previously active configuration's content on
  // every switch (empty disables the backup).
  ConfigSwapper(std::vector<ScheduleEntry> schedule, ServicesLoader loader,
                std::string backup_path = {}, int utc_offset_minutes = 0);

  // Selects and loads the config for now. If the selected file cannot be
  // loaded the previous active config stays in force.
  const std::vector<ServiceSpec>& update(Millis now);

  const std::string& active_path() const { return active_path_; }
  const std::string& previous_path() const { return previous_path_; }
  const std::vector<ServiceSpec>& services() const { return services_; }

 private:
  std::vector<ScheduleEntry> schedule_;
  ServicesLoader loader_;
  std::string backup_path_;
  int utc_offset_minutes_;
  std::string active_path_;
  std::string previous_path_;
  std::vector<ServiceSpec> services_;
};

// ---------------------------------------------------------------------------
// File-backed runner: lock, load table, tick, write table and desired state.

struct SchedulerPaths {
  std::string lock_path;
  std::string table_path;
  std::string state_path;
  std::string load_dir;
};

class Scheduler {
 public:
  Scheduler(SchedulerPaths paths, WorkloadManager& cluster, Prober& prober, Clock& clock,
            std::uint64_t seed);

  void set_services(std::vector<ServiceSpec> services);
  void set_swapper(std::shared_ptr<ConfigSwapper> swapper);

  // nullopt when the lock is busy or the cluster is unreachable.
  std::optional<TickResult> run_once();

  const SchedulerPaths& paths() const { return paths_; }
  std::vector<ServiceSpec> services() const;

 private:
  SchedulerPaths paths_;
  WorkloadManager& cluster_;
  Prober& prober_;
  Clock& clock_;
  std::mt19937_64 rng_;
  mutable std::mutex mutex_;
  std::vector<ServiceSpec> services_;
  std::shared_ptr<ConfigSwapper> swapper_;
};

}  // namespace hpcserve::scheduler

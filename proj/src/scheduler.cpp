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

#include "hpcserve/scheduler.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <filesystem>
#include <future>
#include <map>
#include <set>
#include <sstream>

#include "hpcserve/files.hpp"
#include "hpcserve/log.hpp"
#include "hpcserve/wire.hpp"

namespace hpcserve::scheduler {

std::string validate(const ServiceSpec& spec) {
  if (!wire::is_valid_service_name(spec.name)) return "name must match [a-z0-9-]{1,64}";
  if (spec.min_instances < 0) return "min_instances must be >= 0";
  if (spec.min_instances > spec.max_instances) return "min_instances exceeds max_instances";
  if (!(spec.target_concurrency_per_instance > 0.0)) {
    return "target_concurrency_per_instance must be > 0";
  }
  if (spec.window_seconds <= 0) return "window_seconds must be > 0";
  if (spec.walltime_seconds <= 0) return "walltime_seconds must be > 0";
  if (spec.renewal_margin_seconds < 0 || spec.renewal_margin_seconds >= spec.walltime_seconds) {
    return "renewal_margin_seconds must be in [0, walltime_seconds)";
  }
  if (spec.startup_timeout_seconds <= 0) return "startup_timeout_seconds must be > 0";
  if (spec.probe_path.empty() || spec.probe_path.front() != '/') return "probe_path must start with /";
  if (spec.port_low < kPortRangeLow || spec.port_high > kPortRangeHigh ||
      spec.port_low > spec.port_high) {
    return "port range must lie within [20000, 40000]";
  }
  return {};
}

int desired_instances(double avg_concurrency, const ServiceSpec& spec) {
  double wanted = std::ceil(std::max(0.0, avg_concurrency) / spec.target_concurrency_per_instance);
  if (wanted >= static_cast<double>(spec.max_instances)) return spec.max_instances;
  return std::max(spec.min_instances, static_cast<int>(wanted));
}

WindowAverage average_concurrency(std::span<const LoadEvent> events, Millis window_ms, Millis now) {
  std::vector<LoadEvent> sorted(events.begin(), events.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const LoadEvent& a, const LoadEvent& b) {
    return a.timestamp < b.timestamp;
  });

  const Millis start = now - window_ms;
  WindowAverage out;
  std::int64_t running = 0;
  std::int64_t carried = 0;
  std::int64_t integral = 0;
  Millis last = start;
  for (std::size_t i = 0; i < sorted.size();) {
    const Millis ts = sorted[i].timestamp;
    std::int64_t group = 0;
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].timestamp == ts; ++j) group += sorted[j].delta;
    if (ts <= start) {
      running += group;
      carried = running;
    } else {
      if (ts < now) {
        integral += running * (ts - last);
        last = ts;
      }
      running += group;
      out.retained.insert(out.retained.end(), sorted.begin() + static_cast<std::ptrdiff_t>(i),
                          sorted.begin() + static_cast<std::ptrdiff_t>(j));
    }
    if (running < 0) {
      out.corrupt = true;
      out.retained.clear();
      return out;
    }
    i = j;
  }
  // Only the part up to now counts; running may include future events.
  std::int64_t at_now = carried;
  for (const auto& e : out.retained) {
    if (e.timestamp < now) at_now += e.delta;
  }
  integral += at_now * (now - last);
  out.average = static_cast<double>(integral) / static_cast<double>(window_ms);

  std::vector<LoadEvent> compacted(static_cast<std::size_t>(carried), LoadEvent{start, +1});
  compacted.insert(compacted.end(), out.retained.begin(), out.retained.end());
  out.retained = std::move(compacted);
  return out;
}

double avg_concurrency(const std::string& load_dir, const std::string& service,
                       std::int64_t window_seconds, Millis now) {
  double average = 0.0;
  std::error_code ec;
  if (!std::filesystem::is_directory(load_dir, ec)) files::ensure_directory(load_dir);
  files::rewrite_locked(load_log_path(load_dir, service), [&](const std::string& text) {
    auto events = parse_load_log(text);
    auto result = average_concurrency(events, window_seconds * kMillisPerSecond, now);
    if (result.corrupt) {
      HPC_LOG_WARN("load log for " << service << " has a negative running sum; resetting");
      average = 0.0;
      return std::string();
    }
    average = result.average;
    std::string out;
    out.reserve(result.retained.size() * 16);
    for (const auto& e : result.retained) out += format_load_event(e);
    return out;
  });
  return average;
}

int pick_port(const RoutingTable& table, int low, int high, std::mt19937_64& rng) {
  auto occupied = table.occupied_ports();
  std::uniform_int_distribution<int> dist(low, high);
  for (int attempt = 0; attempt < 100; ++attempt) {
    int port = dist(rng);
    if (!occupied.count(port)) return port;
  }
  for (int port = low; port <= high; ++port) {
    if (!occupied.count(port)) return port;
  }
  throw PortSpaceExhausted("no free port in [" + std::to_string(low) + ", " +
                           std::to_string(high) + "]");
}

// ---------------------------------------------------------------------------

namespace {

std::optional<std::int64_t> lock_acquired_at(const std::string& path) {
  std::optional<std::string> text;
  try {
    text = files::read_file(path);
  } catch (const files::IoError&) {
    return std::nullopt;
  }
  if (!text) return std::nullopt;
  std::istringstream in(*text);
  long long pid = 0;
  long long at = 0;
  if (in >> pid >> at) return at;
  // Half-written lock: fall back to the file's modification time.
  struct stat st {};
  if (::stat(path.c_str(), &st) == 0) return static_cast<std::int64_t>(st.st_mtime);
  return std::nullopt;
}

bool try_create(const std::string& path, const std::string& content) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) return false;
  ssize_t n = ::write(fd, content.data(), content.size());
  ::close(fd);
  if (n != static_cast<ssize_t>(content.size())) {
    ::unlink(path.c_str());
    return false;
  }
  return true;
}

std::string make_token(std::int64_t now_seconds) {
  static std::atomic<unsigned> counter{0};
  std::ostringstream os;
  os << ::getpid() << ' ' << now_seconds << ' ' << counter.fetch_add(1) << '\n';
  return os.str();
}

}  // namespace

std::optional<SchedulerLock> SchedulerLock::acquire(const std::string& path,
                                                    std::int64_t now_seconds,
                                                    std::int64_t stale_after) {
  auto token = make_token(now_seconds);
  if (try_create(path, token)) return SchedulerLock(path, token);
  if (errno != EEXIST) return std::nullopt;

  auto acquired_at = lock_acquired_at(path);
  if (!acquired_at) {
    // Vanished between our attempts; one retry.
    if (try_create(path, token)) return SchedulerLock(path, token);
    return std::nullopt;
  }
  if (now_seconds - *acquired_at < stale_after) return std::nullopt;

  HPC_LOG_WARN("breaking stale scheduler lock " << path << " aged "
                                                << (now_seconds - *acquired_at) << " s");
  ::unlink(path.c_str());
  if (try_create(path, token)) return SchedulerLock(path, token);
  return std::nullopt;
}

SchedulerLock::SchedulerLock(SchedulerLock&& other) noexcept
    : path_(std::move(other.path_)), token_(std::move(other.token_)) {
  other.path_.clear();
}

SchedulerLock& SchedulerLock::operator=(SchedulerLock&& other) noexcept {
  if (this != &other) {
    release();
    path_ = std::move(other.path_);
    token_ = std::move(other.token_);
    other.path_.clear();
  }
  return *this;
}

SchedulerLock::~SchedulerLock() { release(); }

void SchedulerLock::release() {
  if (path_.empty()) return;
  try {
    // Only remove a lock we still own; a stale-breaker may have replaced it.
    auto current = files::read_file(path_);
    if (current && *current == token_) ::unlink(path_.c_str());
  } catch (const files::IoError&) {
  }
  path_.clear();
}

LockStatus acquire_lock(const std::string& path, std::int64_t now_seconds,
                        std::optional<SchedulerLock>& out) {
  out = SchedulerLock::acquire(path, now_seconds);
  return out ? LockStatus::kHeld : LockStatus::kBusy;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::kDropVanished:
      return "drop-vanished";
    case ActionKind::kSubmit:
      return "submit";
    case ActionKind::kSubmitFailed:
      return "submit-failed";
    case ActionKind::kRenew:
      return "renew";
    case ActionKind::kMarkDraining:
      return "mark-draining";
    case ActionKind::kMarkStarting:
      return "mark-starting";
    case ActionKind::kMarkReady:
      return "mark-ready";
    case ActionKind::kCancelStartupTimeout:
      return "cancel-startup-timeout";
  }
  return "?";
}

std::size_t TickResult::count(ActionKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      actions.begin(), actions.end(), [&](const Action& a) { return a.kind == kind; }));
}

namespace {

const JobInfo* find_job(const std::vector<JobInfo>& jobs, const std::string& id) {
  auto it = std::find_if(jobs.begin(), jobs.end(), [&](const JobInfo& j) { return j.id == id; });
  return it == jobs.end() ? nullptr : &*it;
}

int live_non_draining(const RoutingTable& table, const std::string& service) {
  int n = 0;
  for (const auto& e : table.entries()) {
    if (e.service == service && e.state != InstanceState::kDraining) ++n;
  }
  return n;
}

// Submits one instance; records a SUBMITTED entry on success.
Action submit_instance(RoutingTable& table, const ServiceSpec& spec, TickContext& ctx,
                       std::int64_t now_seconds, ActionKind kind) {
  int port = 0;
  try {
    port = pick_port(table, spec.port_low, spec.port_high, ctx.rng);
    auto job_id = ctx.cluster.submit(spec.job_template, spec.walltime_seconds,
                                     SubmitEnv{spec.name, port});
    table.add(RouteEntry{job_id, spec.name, std::string(kNoNode), port, InstanceState::kSubmitted,
                         now_seconds});
    return Action{kind, spec.name, job_id, port};
  } catch (const std::exception& e) {
    HPC_LOG_WARN("submit for " << spec.name << " failed: " << e.what());
    return Action{ActionKind::kSubmitFailed, spec.name, {}, port};
  }
}

}  // namespace

std::vector<Action> renew_expiring(RoutingTable& table, const std::vector<JobInfo>& jobs,
                                   const ServiceSpec& spec, int desired, TickContext& ctx,
                                   std::int64_t now_seconds) {
  std::vector<Action> actions;
  int newly_drained = 0;
  for (auto& e : table.mutable_entries()) {
    if (e.service != spec.name || e.state != InstanceState::kReady) continue;
    const JobInfo* job = find_job(jobs, e.job_id);
    if (job == nullptr || job->remaining_walltime_s >= spec.renewal_margin_seconds) continue;
    e.state = InstanceState::kDraining;
    e.updated_at = now_seconds;
    ++newly_drained;
    actions.push_back(Action{ActionKind::kMarkDraining, spec.name, e.job_id, e.port});
  }
  int replacements = std::min(newly_drained, desired - live_non_draining(table, spec.name));
  for (int i = 0; i < replacements; ++i) {
    actions.push_back(submit_instance(table, spec, ctx, now_seconds, ActionKind::kRenew));
  }
  return actions;
}

std::vector<Action> probe_instances(RoutingTable& table, const std::vector<JobInfo>& jobs,
                                    const std::vector<ServiceSpec>& specs, TickContext& ctx,
                                    std::int64_t now_seconds) {
  std::vector<Action> actions;
  auto spec_for = [&](const std::string& name) -> const ServiceSpec* {
    auto it = std::find_if(specs.begin(), specs.end(),
                           [&](const ServiceSpec& s) { return s.name == name; });
    return it == specs.end() ? nullptr : &*it;
  };
  static const ServiceSpec kDefaults{};

  for (auto& e : table.mutable_entries()) {
    if (e.state != InstanceState::kSubmitted) continue;
    const JobInfo* job = find_job(jobs, e.job_id);
    if (job != nullptr && job->state == JobState::kRunning && !job->node.empty()) {
      e.state = InstanceState::kStarting;
      e.node = job->node;
      e.updated_at = now_seconds;
      actions.push_back(Action{ActionKind::kMarkStarting, e.service, e.job_id, e.port});
    }
  }

  // Probes fan out; results are joined before the table changes.
  struct Probe {
    std::size_t index;
    std::future<bool> ok;
  };
  std::vector<Probe> probes;
  auto& entries = table.mutable_entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].state != InstanceState::kStarting) continue;
    const ServiceSpec* spec = spec_for(entries[i].service);
    std::string path = spec != nullptr ? spec->probe_path : kDefaults.probe_path;
    auto launch = probes.empty() ? std::launch::deferred : std::launch::async;
    probes.push_back(Probe{i, std::async(launch, [&prober = ctx.prober, node = entries[i].node,
                                                  port = entries[i].port, path] {
                             return prober.probe(node, port, path);
                           })});
  }
  std::vector<std::string> expired;
  for (auto& p : probes) {
    bool ok = p.ok.get();
    auto& e = entries[p.index];
    if (ok) {
      e.state = InstanceState::kReady;
      e.updated_at = now_seconds;
      actions.push_back(Action{ActionKind::kMarkReady, e.service, e.job_id, e.port});
      continue;
    }
    const ServiceSpec* spec = spec_for(e.service);
    auto timeout = spec != nullptr ? spec->startup_timeout_seconds : kDefaults.startup_timeout_seconds;
    if (now_seconds - e.updated_at > timeout) expired.push_back(e.job_id);
  }
  for (const auto& id : expired) {
    const RouteEntry* e = table.find(id);
    actions.push_back(Action{ActionKind::kCancelStartupTimeout, e->service, id, e->port});
    HPC_LOG_WARN("instance " << id << " of " << e->service << " not ready after startup timeout");
    ctx.cluster.cancel(id);
    table.erase(id);
  }
  return actions;
}

TickResult tick(const std::vector<ServiceSpec>& specs, RoutingTable table, TickContext& ctx,
                Millis now) {
  const std::int64_t now_s = now / kMillisPerSecond;
  auto jobs = ctx.cluster.list();

  TickResult result;
  auto append = [&](std::vector<Action> more) {
    result.actions.insert(result.actions.end(), std::make_move_iterator(more.begin()),
                          std::make_move_iterator(more.end()));
  };

  std::vector<std::string> vanished;
  for (const auto& e : table.entries()) {
    if (find_job(jobs, e.job_id) == nullptr) vanished.push_back(e.job_id);
  }
  for (const auto& id : vanished) {
    const RouteEntry* e = table.find(id);
    result.actions.push_back(Action{ActionKind::kDropVanished, e->service, id, e->port});
    table.erase(id);
  }

  std::set<std::string> configured;
  for (const auto& spec : specs) {
    configured.insert(spec.name);
    double avg = 0.0;
    try {
      avg = avg_concurrency(ctx.load_dir, spec.name, spec.window_seconds, now);
    } catch (const files::IoError& e) {
      HPC_LOG_WARN("load log for " << spec.name << ": " << e.what());
    }
    int desired = desired_instances(avg, spec);
    result.status.push_back(ServiceStatus{spec.name, desired, avg});

    append(renew_expiring(table, jobs, spec, desired, ctx, now_s));
    int deficit = desired - live_non_draining(table, spec.name);
    for (int i = 0; i < deficit; ++i) {
      result.actions.push_back(submit_instance(table, spec, ctx, now_s, ActionKind::kSubmit));
    }
  }

  // Services dropped from the configuration wind down by non-renewal.
  std::map<std::string, ServiceSpec> orphans;
  for (const auto& e : table.entries()) {
    if (!configured.count(e.service) && !orphans.count(e.service)) {
      ServiceSpec spec;
      spec.name = e.service;
      spec.min_instances = 0;
      orphans.emplace(e.service, spec);
    }
  }
  for (const auto& [name, spec] : orphans) {
    append(renew_expiring(table, jobs, spec, 0, ctx, now_s));
    result.status.push_back(ServiceStatus{name, 0, 0.0});
  }

  append(probe_instances(table, jobs, specs, ctx, now_s));
  result.table = std::move(table);
  return result;
}

// ---------------------------------------------------------------------------

std::optional<int> parse_time_of_day(std::string_view text) {
  if (text.size() != 5 || text[2] != ':') return std::nullopt;
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  if (!digit(text[0]) || !digit(text[1]) || !digit(text[3]) || !digit(text[4])) return std::nullopt;
  int h = (text[0] - '0') * 10 + (text[1] - '0');
  int m = (text[3] - '0') * 10 + (text[4] - '0');
  if (h > 23 || m > 59) return std::nullopt;
  return h * 60 + m;
}

std::size_t select_schedule_entry(const std::vector<ScheduleEntry>& schedule, int minute_of_day) {
  std::size_t chosen = schedule.size() - 1;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i].minute_of_day <= minute_of_day) chosen = i;
  }
  return chosen;
}

ConfigSwapper::ConfigSwapper(std::vector<ScheduleEntry> schedule, ServicesLoader loader,
                             std::string backup_path, int utc_offset_minutes)
    : schedule_(std::move(schedule)),
      loader_(std::move(loader)),
      backup_path_(std::move(backup_path)),
      utc_offset_minutes_(utc_offset_minutes) {
  if (schedule_.empty()) throw std::invalid_argument("config schedule is empty");
  std::sort(schedule_.begin(), schedule_.end(),
            [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.minute_of_day < b.minute_of_day; });
}

const std::vector<ServiceSpec>& ConfigSwapper::update(Millis now) {
  std::int64_t minutes = now / (60 * kMillisPerSecond) + utc_offset_minutes_;
  int minute_of_day = static_cast<int>(((minutes % 1440) + 1440) % 1440);
  const auto& entry = schedule_[select_schedule_entry(schedule_, minute_of_day)];
  if (entry.config_path == active_path_) return services_;

  std::vector<ServiceSpec> loaded;
  try {
    loaded = loader_(entry.config_path);
  } catch (const std::exception& e) {
    HPC_LOG_ERROR("cannot load " << entry.config_path << ", keeping " << active_path_ << ": "
                                 << e.what());
    return services_;
  }
  if (!active_path_.empty() && !backup_path_.empty()) {
    try {
      auto previous = files::read_file(active_path_);
      if (previous) files::write_file_atomic(backup_path_, *previous);
    } catch (const files::IoError& e) {
      HPC_LOG_WARN("config backup failed: " << e.what());
    }
  }
  HPC_LOG_INFO("switching scheduler config " << active_path_ << " -> " << entry.config_path);
  previous_path_ = active_path_;
  active_path_ = entry.config_path;
  services_ = std::move(loaded);
  return services_;
}

// ---------------------------------------------------------------------------

Scheduler::Scheduler(SchedulerPaths paths, WorkloadManager& cluster, Prober& prober, Clock& clock,
                     std::uint64_t seed)
    : paths_(std::move(paths)), cluster_(cluster), prober_(prober), clock_(clock), rng_(seed) {}

void Scheduler::set_services(std::vector<ServiceSpec> services) {
  std::lock_guard lock(mutex_);
  services_ = std::move(services);
}

void Scheduler::set_swapper(std::shared_ptr<ConfigSwapper> swapper) {
  std::lock_guard lock(mutex_);
  swapper_ = std::move(swapper);
}

std::vector<ServiceSpec> Scheduler::services() const {
  std::lock_guard lock(mutex_);
  return services_;
}

std::optional<TickResult> Scheduler::run_once() {
  const Millis now = clock_.now_ms();
  auto lock = SchedulerLock::acquire(paths_.lock_path, now / kMillisPerSecond);
  if (!lock) return std::nullopt;

  std::vector<ServiceSpec> services;
  {
    std::lock_guard guard(mutex_);
    if (swapper_) services_ = swapper_->update(now);
    services = services_;
  }

  try {
    files::ensure_directory(paths_.load_dir);
    auto table = RoutingTable::load(paths_.table_path);
    TickContext ctx{cluster_, prober_, rng_, paths_.load_dir};
    auto result = tick(services, std::move(table), ctx, now);
    result.table.save(paths_.table_path);
    files::write_file_atomic(paths_.state_path, serialize_desired_state(result.status));
    return result;
  } catch (const ClusterUnreachable& e) {
    HPC_LOG_WARN("tick aborted, cluster unreachable: " << e.what());
  } catch (const TableFormatError& e) {
    HPC_LOG_ERROR("tick aborted: " << e.what());
  } catch (const files::IoError& e) {
    HPC_LOG_ERROR("tick aborted: " << e.what());
  }
  return std::nullopt;
}

}  // namespace hpcserve::scheduler

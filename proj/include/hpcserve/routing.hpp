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

// Shared on-disk state between the scheduler and the interface entrypoint.
//
// Routing table: one line per entry
//   job_id service node port state epoch_seconds
// replaced atomically by the scheduler. SUBMITTED entries carry node "-".
//
// Load event log: load/<service>.log with lines `epoch_millis +1|-1`.
//
// Desired state: one line per service `service desired avg_concurrency`,
// written by the scheduler next to the routing table and read for pongs.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hpcserve/clock.hpp"

namespace hpcserve {

inline constexpr int kPortRangeLow = 20000;
inline constexpr int kPortRangeHigh = 40000;
inline constexpr std::string_view kNoNode = "-";

enum class InstanceState { kSubmitted, kStarting, kReady, kDraining };

std::string_view to_string(InstanceState state);
std::optional<InstanceState> instance_state_from_string(std::string_view token);

// READY and DRAINING instances keep serving until their job disappears.
constexpr bool is_routable(InstanceState state) {
  return state == InstanceState::kReady || state == InstanceState::kDraining;
}

struct RouteEntry {
  std::string job_id;
  std::string service;
  std::string node{kNoNode};
  int port = 0;
  InstanceState state = InstanceState::kSubmitted;
  std::int64_t updated_at = 0;

  friend bool operator==(const RouteEntry&, const RouteEntry&) = default;
};

class TableFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RoutingTable {
 public:
  RoutingTable() = default;
  explicit RoutingTable(std::vector<RouteEntry> entries);

  // Throws TableFormatError naming the offending line number.
  static RoutingTable parse(std::string_view text);
  std::string serialize() const;

  // A missing file is an empty table.
  static RoutingTable load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<RouteEntry>& entries() const { return entries_; }
  std::vector<RouteEntry>& mutable_entries() { return entries_; }

  // Throws std::invalid_argument on duplicate job id or occupied port.
  void add(RouteEntry entry);
  RouteEntry* find(std::string_view job_id);
  const RouteEntry* find(std::string_view job_id) const;
  bool erase(std::string_view job_id);

  std::set<int> occupied_ports() const;
  std::vector<RouteEntry> routable(std::string_view service) const;
  std::size_t count(std::string_view service, InstanceState state) const;
  std::size_t size() const { return entries_.size(); }

  friend bool operator==(const RoutingTable&, const RoutingTable&) = default;

 private:
  std::vector<RouteEntry> entries_;
};

// ---------------------------------------------------------------------------

struct LoadEvent {
  Millis timestamp = 0;
  int delta = 0;  // +1 request start, -1 request end

  friend bool operator==(const LoadEvent&, const LoadEvent&) = default;
};

std::string load_log_path(const std::string& load_dir, std::string_view service);
std::string format_load_event(const LoadEvent& event);
// Malformed lines are skipped.
std::vector<LoadEvent> parse_load_log(std::string_view text);
void append_load_event(const std::string& load_dir, std::string_view service,
                       const LoadEvent& event);

// ---------------------------------------------------------------------------

struct ServiceStatus {
  std::string service;
  int desired = 0;
  double avg_concurrency = 0.0;

  friend bool operator==(const ServiceStatus&, const ServiceStatus&) = default;
};

std::string serialize_desired_state(const std::vector<ServiceStatus>& state);
std::vector<ServiceStatus> parse_desired_state(std::string_view text);
std::vector<ServiceStatus> load_desired_state(const std::string& path);

}  // namespace hpcserve

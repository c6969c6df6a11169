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

#include "hpcserve/routing.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <sstream>

#include "hpcserve/files.hpp"
#include "hpcserve/wire.hpp"

namespace hpcserve {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view token) {
  T value{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    ++line_no;
    fn(line, line_no);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
}

}  // namespace

std::string_view to_string(InstanceState state) {
  switch (state) {
    case InstanceState::kSubmitted:
      return "SUBMITTED";
    case InstanceState::kStarting:
      return "STARTING";
    case InstanceState::kReady:
      return "READY";
    case InstanceState::kDraining:
      return "DRAINING";
  }
  return "SUBMITTED";
}

std::optional<InstanceState> instance_state_from_string(std::string_view token) {
  for (auto s : {InstanceState::kSubmitted, InstanceState::kStarting, InstanceState::kReady,
                 InstanceState::kDraining}) {
    if (to_string(s) == token) return s;
  }
  return std::nullopt;
}

RoutingTable::RoutingTable(std::vector<RouteEntry> entries) {
  for (auto& e : entries) add(std::move(e));
}

RoutingTable RoutingTable::parse(std::string_view text) {
  RoutingTable table;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    auto tokens = split_ws(line);
    if (tokens.empty()) return;
    auto bad = [&](const std::string& why) {
      return TableFormatError("routing table line " + std::to_string(line_no) + ": " + why);
    };
    if (tokens.size() != 6) throw bad("expected 6 fields");
    RouteEntry e;
    e.job_id = std::string(tokens[0]);
    e.service = std::string(tokens[1]);
    if (!wire::is_valid_service_name(e.service)) throw bad("bad service name");
    e.node = std::string(tokens[2]);
    auto port = parse_number<int>(tokens[3]);
    if (!port || *port < kPortRangeLow || *port > kPortRangeHigh) throw bad("bad port");
    e.port = *port;
    auto state = instance_state_from_string(tokens[4]);
    if (!state) throw bad("bad state");
    e.state = *state;
    auto ts = parse_number<std::int64_t>(tokens[5]);
    if (!ts) throw bad("bad timestamp");
    e.updated_at = *ts;
    try {
      table.add(std::move(e));
    } catch (const std::invalid_argument& ex) {
      throw bad(ex.what());
    }
  });
  return table;
}

std::string RoutingTable::serialize() const {
  std::string out;
  for (const auto& e : entries_) {
    out += e.job_id;
    out += ' ';
    out += e.service;
    out += ' ';
    out += e.node.empty() ? std::string(kNoNode) : e.node;
    out += ' ';
    out += std::to_string(e.port);
    out += ' ';
    out += to_string(e.state);
    out += ' ';
    out += std::to_string(e.updated_at);
    out += '\n';
  }
  return out;
}

RoutingTable RoutingTable::load(const std::string& path) {
  auto text = files::read_file(path);
  if (!text) return {};
  return parse(*text);
}

void RoutingTable::save(const std::string& path) const {
  files::write_file_atomic(path, serialize());
}

void RoutingTable::add(RouteEntry entry) {
  for (const auto& e : entries_) {
    if (e.job_id == entry.job_id) throw std::invalid_argument("duplicate job id " + e.job_id);
    if (e.port == entry.port) {
      throw std::invalid_argument("port " + std::to_string(e.port) + " already occupied");
    }
  }
  entries_.push_back(std::move(entry));
}

RouteEntry* RoutingTable::find(std::string_view job_id) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const RouteEntry& e) { return e.job_id == job_id; });
  return it == entries_.end() ? nullptr : &*it;
}

const RouteEntry* RoutingTable::find(std::string_view job_id) const {
  return const_cast<RoutingTable*>(this)->find(job_id);
}

bool RoutingTable::erase(std::string_view job_id) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const RouteEntry& e) { return e.job_id == job_id; });
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

std::set<int> RoutingTable::occupied_ports() const {
  std::set<int> ports;
  for (const auto& e : entries_) ports.insert(e.port);
  return ports;
}

std::vector<RouteEntry> RoutingTable::routable(std::string_view service) const {
  std::vector<RouteEntry> out;
  for (const auto& e : entries_) {
    if (e.service == service && is_routable(e.state)) out.push_back(e);
  }
  return out;
}

std::size_t RoutingTable::count(std::string_view service, InstanceState state) const {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(),
      [&](const RouteEntry& e) { return e.service == service && e.state == state; }));
}

std::string load_log_path(const std::string& load_dir, std::string_view service) {
  return load_dir + "/" + std::string(service) + ".log";
}

std::string format_load_event(const LoadEvent& event) {
  return std::to_string(event.timestamp) + (event.delta > 0 ? " +1\n" : " -1\n");
}

std::vector<LoadEvent> parse_load_log(std::string_view text) {
  std::vector<LoadEvent> events;
  for_each_line(text, [&](std::string_view line, std::size_t) {
    auto tokens = split_ws(line);
    if (tokens.size() != 2) return;
    auto ts = parse_number<Millis>(tokens[0]);
    if (!ts) return;
    if (tokens[1] == "+1") {
      events.push_back({*ts, +1});
    } else if (tokens[1] == "-1") {
      events.push_back({*ts, -1});
    }
  });
  return events;
}

void append_load_event(const std::string& load_dir, std::string_view service,
                       const LoadEvent& event) {
  std::error_code ec;
  if (!std::filesystem::is_directory(load_dir, ec)) files::ensure_directory(load_dir);
  files::append_locked(load_log_path(load_dir, service), format_load_event(event));
}

std::string serialize_desired_state(const std::vector<ServiceStatus>& state) {
  std::ostringstream os;
  for (const auto& s : state) {
    os << s.service << ' ' << s.desired << ' ' << s.avg_concurrency << '\n';
  }
  return os.str();
}

std::vector<ServiceStatus> parse_desired_state(std::string_view text) {
  std::vector<ServiceStatus> out;
  for_each_line(text, [&](std::string_view line, std::size_t) {
    auto tokens = split_ws(line);
    if (tokens.size() != 3 || !wire::is_valid_service_name(tokens[0])) return;
    auto desired = parse_number<int>(tokens[1]);
    if (!desired) return;
    ServiceStatus s;
    s.service = std::string(tokens[0]);
    s.desired = *desired;
    try {
      s.avg_concurrency = std::stod(std::string(tokens[2]));
    } catch (const std::exception&) {
      s.avg_concurrency = 0.0;
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<ServiceStatus> load_desired_state(const std::string& path) {
  auto text = files::read_file(path);
  if (!text) return {};
  return parse_desired_state(*text);
}

}  // namespace hpcserve

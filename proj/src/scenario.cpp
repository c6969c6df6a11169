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

#include "hpcserve/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <optional>

#include "hpcserve/clock.hpp"
#include "hpcserve/files.hpp"
#include "hpcserve/routing.hpp"

namespace hpcserve::scenario {
namespace {

// Virtual epoch for replays: 2024-01-01T00:00:00Z.
constexpr Millis kEpoch = 1'704'067'200'000;

using Args = std::map<std::string, std::string>;

// Splits `verb k=v k="v w"` into the verb and its arguments.
std::pair<std::string, std::vector<std::string>> tokenize(std::string_view line, int lineno) {
  std::vector<std::string> tokens;
  std::string cur;
  bool quoted = false;
  bool any = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
      any = true;
    } else if (!quoted && (c == ' ' || c == '\t')) {
      if (any) tokens.push_back(cur);
      cur.clear();
      any = false;
    } else {
      cur += c;
      any = true;
    }
  }
  if (quoted) throw ScenarioError(lineno, "unterminated quote");
  if (any) tokens.push_back(cur);
  if (tokens.empty()) return {};
  std::string verb = tokens.front();
  tokens.erase(tokens.begin());
  return {verb, tokens};
}

Args key_values(const std::vector<std::string>& tokens, int lineno) {
  Args out;
  for (const auto& t : tokens) {
    auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) throw ScenarioError(lineno, "expected key=value, got " + t);
    out[t.substr(0, eq)] = t.substr(eq + 1);
  }
  return out;
}

class ArgReader {
 public:
  ArgReader(Args args, int lineno) : args_(std::move(args)), line_(lineno) {}
  ~ArgReader() noexcept(false) {
    if (std::uncaught_exceptions() == 0 && !args_.empty()) {
      throw ScenarioError(line_, "unknown key " + args_.begin()->first);
    }
  }

  std::string str(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    auto it = args_.find(key);
    if (it == args_.end()) {
      if (!fallback) throw ScenarioError(line_, "missing " + key);
      return *fallback;
    }
    std::string v = it->second;
    args_.erase(it);
    return v;
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
    if (!args_.count(key)) {
      if (!fallback) throw ScenarioError(line_, "missing " + key);
      return *fallback;
    }
    auto text = str(key);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) {
      throw ScenarioError(line_, key + " must be an integer");
    }
    return v;
  }

  double real(const std::string& key, double fallback) {
    if (!args_.count(key)) return fallback;
    auto text = str(key);
    try {
      std::size_t used = 0;
      double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw ScenarioError(line_, key + " must be a number");
    }
  }

 private:
  Args args_;
  int line_;
};

}  // namespace

Scenario parse_scenario(std::string_view text) {
  Scenario s;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    auto [verb, tokens] = tokenize(raw, lineno);
    if (verb.empty()) continue;

    if (verb == "delay") {
      if (tokens.size() != 1) throw ScenarioError(lineno, "delay takes one value in ms");
      ArgReader r({{"ms", tokens[0]}}, lineno);
      s.scheduling_delay_ms = r.integer("ms");
      continue;
    }
    ArgReader r(key_values(tokens, lineno), lineno);
    if (verb == "topology") {
      s.topology.nodes = static_cast<int>(r.integer("nodes", s.topology.nodes));
      s.topology.gpus_per_node = static_cast<int>(r.integer("gpus", s.topology.gpus_per_node));
    } else if (verb == "service") {
      scheduler::ServiceSpec spec;
      spec.name = r.str("name");
      spec.job_template = r.str("template", "");
      spec.min_instances = static_cast<int>(r.integer("min", spec.min_instances));
      spec.max_instances = static_cast<int>(r.integer("max", spec.max_instances));
      spec.target_concurrency_per_instance = r.real("target", spec.target_concurrency_per_instance);
      spec.window_seconds = r.integer("window", spec.window_seconds);
      spec.walltime_seconds = r.integer("walltime", spec.walltime_seconds);
      spec.renewal_margin_seconds = r.integer("margin", spec.renewal_margin_seconds);
      spec.startup_timeout_seconds = r.integer("startup_timeout", spec.startup_timeout_seconds);
      if (auto err = scheduler::validate(spec); !err.empty()) throw ScenarioError(lineno, err);
      s.services.push_back(spec);
    } else if (verb == "load") {
      LoadStep step;
      step.at_s = r.integer("at");
      step.until_s = r.integer("until");
      step.service = r.str("service");
      step.concurrency = static_cast<int>(r.integer("concurrency"));
      if (step.until_s < step.at_s || step.concurrency < 0) {
        throw ScenarioError(lineno, "load needs at <= until and concurrency >= 0");
      }
      s.load.push_back(step);
    } else if (verb == "kill" || verb == "restore") {
      s.faults.push_back({r.integer("at"), verb == "kill", r.str("node")});
    } else if (verb == "expect") {
      Expectation e;
      e.at_s = r.integer("at");
      e.service = r.str("service");
      e.ready = static_cast<int>(r.integer("ready"));
      e.line = lineno;
      s.expectations.push_back(e);
    } else if (verb == "run") {
      s.until_s = r.integer("until");
      s.every_s = r.integer("every", s.every_s);
      s.seed = static_cast<std::uint64_t>(r.integer("seed", static_cast<std::int64_t>(s.seed)));
      if (s.every_s <= 0 || s.until_s < 0) throw ScenarioError(lineno, "run needs until >= 0, every > 0");
    } else {
      throw ScenarioError(lineno, "unknown directive " + verb);
    }
  }
  if (s.services.empty()) throw ScenarioError(lineno, "no service declared");
  return s;
}

ScenarioResult run_scenario(const Scenario& s, const std::string& work_dir) {
  files::ensure_directory(work_dir);
  scheduler::SchedulerPaths paths{work_dir + "/scheduler.lock", work_dir + "/routing.table",
                                  work_dir + "/desired.state", work_dir + "/load"};
  std::filesystem::remove(paths.table_path);
  std::filesystem::remove(paths.state_path);
  std::filesystem::remove_all(paths.load_dir);
  files::ensure_directory(paths.load_dir);

  ManualClock clock(kEpoch);
  sim::SimCluster cluster(s.topology, s.scheduling_delay_ms, clock);
  sim::SimProber prober(cluster);
  scheduler::Scheduler sched(paths, cluster, prober, clock, s.seed);
  sched.set_services(s.services);

  // Load steps become +c at the start and -c at the end.
  std::vector<std::pair<Millis, std::pair<std::string, int>>> events;
  for (const auto& step : s.load) {
    for (int i = 0; i < step.concurrency; ++i) {
      events.push_back({kEpoch + step.at_s * 1000, {step.service, +1}});
      events.push_back({kEpoch + step.until_s * 1000, {step.service, -1}});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  auto faults = s.faults;
  std::stable_sort(faults.begin(), faults.end(), [](const auto& a, const auto& b) { return a.at_s < b.at_s; });

  ScenarioResult result;
  std::size_t next_event = 0;
  std::size_t next_fault = 0;
  for (std::int64_t t = 0; t <= s.until_s; t += s.every_s) {
    Millis now = kEpoch + t * 1000;
    while (next_fault < faults.size() && faults[next_fault].at_s <= t) {
      const auto& f = faults[next_fault++];
      clock.set(kEpoch + f.at_s * 1000);
      if (f.kill) {
        cluster.kill_node(f.node);
      } else {
        cluster.restore_node(f.node);
      }
    }
    while (next_event < events.size() && events[next_event].first <= now) {
      const auto& [ts, ev] = events[next_event++];
      append_load_event(paths.load_dir, ev.first, LoadEvent{ts, ev.second});
    }
    clock.set(now);
    auto tick = sched.run_once();
    if (!tick) {
      result.failures.push_back("t=" + std::to_string(t) + ": tick did not run");
      continue;
    }
    for (const auto& st : tick->status) {
      std::size_t live = 0;
      for (const auto& e : tick->table.entries()) {
        if (e.service == st.service) ++live;
      }
      result.timeline.push_back("t=" + std::to_string(t) + " " + st.service +
                                " desired=" + std::to_string(st.desired) +
                                " ready=" + std::to_string(tick->table.routable(st.service).size()) +
                                " live=" + std::to_string(live));
    }
    for (const auto& e : s.expectations) {
      if (e.at_s != t) continue;
      auto ready = static_cast<int>(tick->table.routable(e.service).size());
      if (ready != e.ready) {
        result.failures.push_back("line " + std::to_string(e.line) + ": expected " + e.service +
                                  " ready=" + std::to_string(e.ready) + " at t=" + std::to_string(t) +
                                  ", got " + std::to_string(ready));
      }
    }
  }
  for (const auto& e : s.expectations) {
    if (e.at_s > s.until_s || e.at_s % s.every_s != 0) {
      result.failures.push_back("line " + std::to_string(e.line) + ": at=" + std::to_string(e.at_s) +
                                " is not a tick time");
    }
  }
  result.submissions = cluster.submissions();
  result.ready_cancellations = cluster.ready_cancellations();
  result.conserved = cluster.check_conservation();
  if (!result.conserved) result.failures.push_back("gpu conservation violated");
  return result;
}

}  // namespace hpcserve::scenario

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

// Replays a declarative cluster scenario in virtual time: topology, services,
// load steps, faults and expectations, with scheduler ticks on a fixed period.
//
//   topology nodes=4 gpus=4
//   delay 3000
//   service name=qwen min=1 max=4 target=4 window=300 walltime=3600 margin=900 template="gpus=1 cold_start=60"
//   load at=0 until=1800 service=qwen concurrency=8
//   kill at=600 node=gpu01
//   restore at=900 node=gpu01
//   expect at=1200 service=qwen ready=2
//   run until=7200 every=5
//
// Times are seconds from the scenario start.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hpcserve/scheduler.hpp"
#include "hpcserve/simcluster.hpp"

namespace hpcserve::scenario {

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct LoadStep {
  std::int64_t at_s = 0;
  std::int64_t until_s = 0;
  std::string service;
  int concurrency = 0;
};

struct Fault {
  std::int64_t at_s = 0;
  bool kill = true;
  std::string node;
};

struct Expectation {
  std::int64_t at_s = 0;
  std::string service;
  int ready = 0;
  int line = 0;
};

struct Scenario {
  sim::Topology topology;
  Millis scheduling_delay_ms = 3000;
  std::vector<scheduler::ServiceSpec> services;
  std::vector<LoadStep> load;
  std::vector<Fault> faults;
  std::vector<Expectation> expectations;
  std::int64_t until_s = 3600;
  std::int64_t every_s = 5;
  std::uint64_t seed = 1;
};

// Throws ScenarioError naming the offending line.
Scenario parse_scenario(std::string_view text);

struct ScenarioResult {
  // One line per tick: "t=<s> <service> desired=<n> ready=<n> live=<n>".
  std::vector<std::string> timeline;
  std::vector<std::string> failures;
  std::size_t submissions = 0;
  std::size_t ready_cancellations = 0;
  bool conserved = true;
};

// Runs the scenario with its state files under work_dir.
ScenarioResult run_scenario(const Scenario& scenario, const std::string& work_dir);

}  // namespace hpcserve::scenario

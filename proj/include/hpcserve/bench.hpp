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

// Measurement harness: latency breakdown at four cut points along the
// request path, and closed-loop throughput per pipeline stage.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hpcserve/clock.hpp"

namespace hpcserve::bench {

struct Target {
  std::string host = "127.0.0.1";
  int ingress_port = 0;
  int operator_port = 0;
  std::string url_prefix = "/v1";
  std::string api_key;
  std::string model;
  std::string service;
  // Placed in every request body.
  std::string prompt = "hello";
};

struct Stat {
  double mean = 0;
  double stddev = 0;
  double p50 = 0;
  double min = 0;
  double max = 0;
};

Stat summarize(std::vector<double> samples);

struct LatencyRow {
  std::string name;
  Stat stat;
  double diff_mean = 0;  // mean minus the previous row's mean
};

struct LatencyReport {
  int samples = 0;
  int errors = 0;
  std::vector<LatencyRow> rows;
  std::string config_hash;
};

// Rows, in order: proxy self-probe, channel round trip, instance probe
// through the channel, first streamed token. Throws std::runtime_error if
// the service has no ready instance.
LatencyReport bench_latency(const Target& target, int samples);

enum class Stage { kIngressOnly, kChannel, kFullPath };

std::string_view to_string(Stage stage);
std::optional<Stage> stage_from_string(std::string_view text);

struct ThroughputOptions {
  Stage stage = Stage::kFullPath;
  int concurrency = 16;
  Millis duration_ms = 30'000;
  // Abort once errors exceed this fraction (checked after 100 requests).
  double max_error_rate = 0.01;
};

struct ThroughputReport {
  Stage stage = Stage::kFullPath;
  int concurrency = 0;
  std::uint64_t requests = 0;
  std::uint64_t errors = 0;
  double elapsed_s = 0;
  double rps = 0;
  bool aborted = false;
  std::string config_hash;
};

ThroughputReport bench_throughput(const Target& target, const ThroughputOptions& options);

std::string to_json(const LatencyReport& report);
std::string to_table(const LatencyReport& report);
std::string to_json(const std::vector<ThroughputReport>& reports);
std::string to_table(const std::vector<ThroughputReport>& reports);

}  // namespace hpcserve::bench

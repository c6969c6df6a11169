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

#include "hpcserve/bench.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <stdexcept>
#include <thread>

namespace hpcserve::bench {

using json = nlohmann::json;

namespace {

using SteadyClock = std::chrono::steady_clock;

double elapsed_ms(SteadyClock::time_point since) {
  return std::chrono::duration<double, std::milli>(SteadyClock::now() - since).count();
}

httplib::Headers auth_headers(const Target& t) {
  return {{"Authorization", "Bearer " + t.api_key}};
}

std::string completion_body(const Target& t, bool stream) {
  return json{{"model", t.model},
              {"messages", json::array({{{"role", "user"}, {"content", t.prompt}}})},
              {"stream", stream}}
      .dump();
}

std::unique_ptr<httplib::Client> client(const Target& t, int port) {
  auto c = std::make_unique<httplib::Client>(t.host, port);
  c->set_keep_alive(true);
  c->set_tcp_nodelay(true);
  c->set_connection_timeout(5, 0);
  c->set_read_timeout(30, 0);
  return c;
}

// Milliseconds until the first body byte of a streamed completion; negative
// on failure.
double first_token_ms(httplib::Client& c, const Target& t) {
  httplib::Request req;
  req.method = "POST";
  req.path = t.url_prefix + "/chat/completions";
  req.headers = auth_headers(t);
  req.set_header("Content-Type", "application/json");
  req.body = completion_body(t, true);
  double first = -1;
  auto start = SteadyClock::now();
  int status = 0;
  req.response_handler = [&](const httplib::Response& res) {
    status = res.status;
    return true;
  };
  req.content_receiver = [&](const char*, std::size_t, std::uint64_t, std::uint64_t) {
    if (first < 0) first = elapsed_ms(start);
    return true;
  };
  auto res = c.send(req);
  if (!res || status != 200) return -1;
  return first;
}

double timed_get(httplib::Client& c, const std::string& path) {
  auto start = SteadyClock::now();
  auto res = c.Get(path);
  if (!res || res->status != 200) return -1;
  return elapsed_ms(start);
}

}  // namespace

Stat summarize(std::vector<double> samples) {
  Stat s;
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  double sum = 0;
  for (double v : samples) sum += v;
  s.mean = sum / static_cast<double>(samples.size());
  double sq = 0;
  for (double v : samples) sq += (v - s.mean) * (v - s.mean);
  s.stddev = samples.size() > 1 ? std::sqrt(sq / static_cast<double>(samples.size() - 1)) : 0.0;
  std::size_t n = samples.size();
  s.p50 = n % 2 == 1 ? samples[n / 2] : (samples[n / 2 - 1] + samples[n / 2]) / 2.0;
  s.min = samples.front();
  s.max = samples.back();
  return s;
}

LatencyReport bench_latency(const Target& target, int samples) {
  auto op = client(target, target.operator_port);
  auto ingress = client(target, target.ingress_port);

  auto probe = op->Get("/probe/instance/" + target.service);
  if (!probe || probe->status != 200) {
    throw std::runtime_error("service " + target.service + " has no ready instance");
  }

  std::vector<std::string> names = {"proxy self-probe", "channel round trip", "instance probe",
                                    "first token"};
  std::vector<std::vector<double>> values(names.size());
  LatencyReport report;
  report.samples = samples;
  for (int i = 0; i < samples; ++i) {
    double v[4] = {timed_get(*op, "/status"), timed_get(*op, "/probe/channel"),
                   timed_get(*op, "/probe/instance/" + target.service),
                   first_token_ms(*ingress, target)};
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (v[k] < 0) {
        ++report.errors;
        continue;
      }
      values[k].push_back(v[k]);
    }
  }
  double previous = 0;
  for (std::size_t k = 0; k < names.size(); ++k) {
    LatencyRow row{names[k], summarize(values[k]), 0};
    row.diff_mean = row.stat.mean - previous;
    previous = row.stat.mean;
    report.rows.push_back(row);
  }
  return report;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kIngressOnly:
      return "ingress-only";
    case Stage::kChannel:
      return "channel";
    case Stage::kFullPath:
      return "full-path";
  }
  return "full-path";
}

std::optional<Stage> stage_from_string(std::string_view text) {
  for (auto s : {Stage::kIngressOnly, Stage::kChannel, Stage::kFullPath}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

ThroughputReport bench_throughput(const Target& target, const ThroughputOptions& options) {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> errors{0};
  std::atomic<bool> abort{false};
  auto start = SteadyClock::now();
  auto deadline = start + std::chrono::milliseconds(options.duration_ms);
  const std::string body = completion_body(target, false);

  auto worker = [&] {
    auto c = client(target, options.stage == Stage::kChannel ? target.operator_port : target.ingress_port);
    while (!abort.load() && SteadyClock::now() < deadline) {
      httplib::Result res;
      switch (options.stage) {
        case Stage::kIngressOnly:
          res = c->Get(target.url_prefix + "/models", auth_headers(target));
          break;
        case Stage::kChannel:
          res = c->Get("/probe/channel");
          break;
        case Stage::kFullPath:
          res = c->Post(target.url_prefix + "/chat/completions", auth_headers(target), body,
                        "application/json");
          break;
      }
      auto n = requests.fetch_add(1) + 1;
      if (!res || res->status != 200) {
        auto e = errors.fetch_add(1) + 1;
        if (n >= 100 && static_cast<double>(e) > options.max_error_rate * static_cast<double>(n)) {
          abort = true;
        }
      }
    }
  };
  std::vector<std::thread> threads;
  for (int i = 0; i < options.concurrency; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  ThroughputReport r;
  r.stage = options.stage;
  r.concurrency = options.concurrency;
  r.requests = requests.load();
  r.errors = errors.load();
  r.elapsed_s = elapsed_ms(start) / 1000.0;
  r.rps = r.elapsed_s > 0 ? static_cast<double>(r.requests - r.errors) / r.elapsed_s : 0;
  r.aborted = abort.load();
  return r;
}

std::string to_json(const LatencyReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"name", r.name},
                    {"mean_ms", r.stat.mean},
                    {"std_ms", r.stat.stddev},
                    {"p50_ms", r.stat.p50},
                    {"min_ms", r.stat.min},
                    {"max_ms", r.stat.max},
                    {"diff_ms", r.diff_mean}});
  }
  return json{{"report", "latency"},
              {"samples", report.samples},
              {"errors", report.errors},
              {"config_hash", report.config_hash},
              {"rows", rows}}
      .dump(2);
}

std::string to_table(const LatencyReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "latency over %d samples (config %s)\n", report.samples,
                report.config_hash.c_str());
  out += line;
  std::snprintf(line, sizeof line, "%-20s %22s %10s %10s\n", "stage", "agg. avg (std) ms", "p50 ms",
                "diff ms");
  out += line;
  for (const auto& r : report.rows) {
    char avg[40];
    std::snprintf(avg, sizeof avg, "%.2f (%.2f)", r.stat.mean, r.stat.stddev);
    std::snprintf(line, sizeof line, "%-20s %22s %10.2f %10.2f\n", r.name.c_str(), avg, r.stat.p50,
                  r.diff_mean);
    out += line;
  }
  return out;
}

std::string to_json(const std::vector<ThroughputReport>& reports) {
  json rows = json::array();
  std::string hash;
  for (const auto& r : reports) {
    hash = r.config_hash;
    rows.push_back({{"stage", std::string(to_string(r.stage))},
                    {"concurrency", r.concurrency},
                    {"requests", r.requests},
                    {"errors", r.errors},
                    {"elapsed_s", r.elapsed_s},
                    {"rps", r.rps},
                    {"aborted", r.aborted}});
  }
  return json{{"report", "throughput"}, {"config_hash", hash}, {"stages", rows}}.dump(2);
}

std::string to_table(const std::vector<ThroughputReport>& reports) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %8s %10s %8s %10s\n", "stage", "workers", "requests",
                "errors", "rps");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-14s %8d %10llu %8llu %10.1f%s\n",
                  std::string(to_string(r.stage)).c_str(), r.concurrency,
                  static_cast<unsigned long long>(r.requests), static_cast<unsigned long long>(r.errors),
                  r.rps, r.aborted ? "  (aborted)" : "");
    out += line;
  }
  if (!reports.empty()) out += "config " + reports.front().config_hash + "\n";
  return out;
}

}  // namespace hpcserve::bench

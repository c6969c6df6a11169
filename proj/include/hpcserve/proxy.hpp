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

// HTTP ingress in front of the command channel: API-key auth, per-key rate
// limits, model -> service routing, streamed forwarding, a keep-alive
// supervisor for the channel and an operator port with metrics.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hpcserve/channel.hpp"
#include "hpcserve/clock.hpp"
#include "hpcserve/wire.hpp"

namespace hpcserve::proxy {

struct ApiKey {
  std::string id;      // appears in logs and metrics
  std::string secret;  // never logged
  int requests_per_minute = 60;
};

struct RouteBinding {
  std::string url_prefix = "/v1";
  std::map<std::string, std::string> models;  // model name -> service
  std::vector<ApiKey> keys;
};

// ---------------------------------------------------------------------------
// Channel supervision.

enum class ChannelStatus { kConnected, kReconnecting, kDown };

std::string_view to_string(ChannelStatus status);

struct ChannelState {
  ChannelStatus status = ChannelStatus::kDown;
  Millis last_pong = -1;  // -1 before the first pong
  int consecutive_failures = 0;
  std::vector<wire::ServiceSummary> service_summary;
};

struct SupervisorOptions {
  Millis ping_interval_ms = 5000;
  Millis ping_timeout_ms = 4000;
  Millis backoff_initial_ms = 1000;
  Millis backoff_cap_ms = 8000;
};

// Keep-alive and reconnect state machine. step() performs whatever is due at
// `now` and returns the time of the next action; start() runs it on a thread
// against the wall clock.
class ChannelSupervisor {
 public:
  ChannelSupervisor(channel::Transport& transport, Clock& clock, SupervisorOptions options = {});
  ~ChannelSupervisor();

  ChannelSupervisor(const ChannelSupervisor&) = delete;
  ChannelSupervisor& operator=(const ChannelSupervisor&) = delete;

  void start();
  void stop();

  Millis step(Millis now);

  // A request could not be dispatched: leave Connected and reconnect.
  void report_dispatch_failure();
  // One ping outside the schedule. Does not change the state.
  std::optional<std::vector<wire::ServiceSummary>> probe();

  ChannelState state() const;
  bool connected() const;
  std::uint64_t reconnects() const { return reconnects_.load(); }
  Millis next_action() const;

 private:
  bool ping(std::vector<wire::ServiceSummary>& summary);
  void on_ping(bool ok, Millis now, std::vector<wire::ServiceSummary> summary);
  void fail_locked(Millis now);
  void run();

  channel::Transport& transport_;
  Clock& clock_;
  SupervisorOptions options_;

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  ChannelState state_;
  Millis next_action_ = 0;
  Millis backoff_ms_ = 0;
  bool ever_connected_ = false;
  std::atomic<std::uint64_t> reconnects_{0};
  bool stopping_ = false;
  std::thread thread_;
};

// ---------------------------------------------------------------------------
// Ingress.

struct ProxyOptions {
  RouteBinding routes;
  // Upper bound on one forwarded request, headers to last chunk.
  Millis request_timeout_ms = 600'000;
  int worker_threads = 64;
  // Appended "<epoch_ms> <key_id> <model> <status>" per request; empty logs
  // at info level instead.
  std::string access_log_path;
};

struct ServeResult {
  int status = 0;
  std::string content_type;
  std::string body;
};

// Per-key sliding 60 s window.
class RateLimiter {
 public:
  explicit RateLimiter(Clock& clock) : clock_(clock) {}
  bool allow(const std::string& key_id, int per_minute);

 private:
  Clock& clock_;
  std::mutex mutex_;
  std::map<std::string, std::deque<Millis>> hits_;
};

struct MetricsSnapshot {
  std::uint64_t requests_total = 0;
  std::uint64_t requests_failed = 0;
  std::uint64_t reconnects_total = 0;
  std::map<std::string, std::uint64_t> service_requests;
  std::int64_t in_flight = 0;
  ChannelStatus channel = ChannelStatus::kDown;
  Millis last_pong_age_ms = -1;
};

std::string format_metrics(const MetricsSnapshot& snapshot);

class Proxy {
 public:
  Proxy(ProxyOptions options, channel::Transport& transport, ChannelSupervisor& supervisor,
        Clock& clock);
  ~Proxy();

  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  // Port 0 picks a free port. Returns false if either bind fails.
  bool start(const std::string& host, int ingress_port, const std::string& operator_host,
             int operator_port);
  void stop();

  int ingress_port() const { return ingress_port_; }
  int operator_port() const { return operator_port_; }

  MetricsSnapshot metrics() const;
  // Body of GET <prefix>/models.
  std::string models_json() const;
  std::string status_json() const;

  // Returns the key id for a valid "Bearer <key>" header.
  std::optional<std::string> authenticate(const std::string& authorization) const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
  int ingress_port_ = 0;
  int operator_port_ = 0;
};

}  // namespace hpcserve::proxy

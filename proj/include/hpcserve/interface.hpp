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

// Interface entrypoint: runs once per channel invocation on the service
// node. Keeps no state between invocations; the routing table, desired-state
// file and load logs are the only coordination points.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hpcserve/clock.hpp"
#include "hpcserve/io.hpp"
#include "hpcserve/routing.hpp"
#include "hpcserve/wire.hpp"

namespace hpcserve::interface {

class Upstream {
 public:
  enum class Outcome {
    kCompleted,
    // No response bytes were produced; the caller may retry elsewhere.
    kConnectFailed,
    // Failed after the reply had started.
    kAborted,
  };

  virtual ~Upstream() = default;
  // Sends req to host:port and writes the framed reply into out.
  virtual Outcome forward(const std::string& host, int port, const wire::WireRequest& req,
                          const std::string& body, ByteSink& out) = 0;
};

class HttpUpstream final : public Upstream {
 public:
  explicit HttpUpstream(int connect_timeout_ms = 2000, int read_timeout_s = 600)
      : connect_timeout_ms_(connect_timeout_ms), read_timeout_s_(read_timeout_s) {}

  Outcome forward(const std::string& host, int port, const wire::WireRequest& req,
                  const std::string& body, ByteSink& out) override;

 private:
  int connect_timeout_ms_;
  int read_timeout_s_;
};

class SchedulerTrigger {
 public:
  virtual ~SchedulerTrigger() = default;
  // Fire-and-forget; must not wait for the tick.
  virtual void trigger() = 0;
};

// Spawns a detached scheduler run.
class CommandTrigger final : public SchedulerTrigger {
 public:
  explicit CommandTrigger(std::vector<std::string> argv) : argv_(std::move(argv)) {}
  void trigger() override;

 private:
  std::vector<std::string> argv_;
};

class CallbackTrigger final : public SchedulerTrigger {
 public:
  explicit CallbackTrigger(std::function<void()> fn) : fn_(std::move(fn)) {}
  void trigger() override {
    if (fn_) fn_();
  }

 private:
  std::function<void()> fn_;
};

struct InterfaceEnv {
  std::string table_path;
  std::string state_path;
  std::string load_dir;
  std::map<std::string, std::string> node_addresses;
  Clock* clock = nullptr;
  Upstream* upstream = nullptr;
  SchedulerTrigger* trigger = nullptr;
  // Seed for this invocation's instance choice; random_device when empty.
  std::function<std::uint64_t()> next_seed;
};

class NoReadyInstance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform over routable entries of service. Throws NoReadyInstance.
RouteEntry pick_instance(const RoutingTable& table, std::string_view service, std::mt19937_64& rng);

// Per-service (ready, desired) as carried in the pong.
std::vector<wire::ServiceSummary> service_summary(const RoutingTable& table,
                                                  const std::vector<ServiceStatus>& desired);

// Handles one invocation and returns the process exit code (0 for every
// handled outcome, including upstream errors).
int handle_invocation(std::string_view command, ByteSource& body, ByteSink& out,
                      const InterfaceEnv& env);

}  // namespace hpcserve::interface

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

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "hpcserve/interface.hpp"
#include "hpcserve/routing.hpp"
#include "hpcserve/wire.hpp"

namespace hpcserve::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hpcserve-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string path() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Records every forward instead of opening connections.
class RecordingUpstream final : public interface::Upstream {
 public:
  struct Call {
    std::string host;
    int port;
    wire::WireRequest request;
    std::string body;
  };

  Outcome forward(const std::string& host, int port, const wire::WireRequest& req,
                  const std::string& body, ByteSink& out) override {
    {
      std::lock_guard lock(mutex_);
      calls_.push_back({host, port, req, body});
    }
    if (refuse_) return Outcome::kConnectFailed;
    out.write(wire::frame_response(wire::WireResponse{200, {{"content-type", "application/json"}}, {"{}"}}));
    return Outcome::kCompleted;
  }

  std::vector<Call> calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }
  void refuse(bool r) { refuse_ = r; }

 private:
  mutable std::mutex mutex_;
  std::vector<Call> calls_;
  std::atomic<bool> refuse_{false};
};

// Per-millisecond oracle for the window mean: materializes the concurrency
// at every millisecond of [now - window, now) and sums it.
inline std::int64_t brute_force_integral(const std::vector<LoadEvent>& events, Millis window_ms,
                                         Millis now) {
  const Millis start = now - window_ms;
  std::vector<std::int64_t> diff(static_cast<std::size_t>(window_ms) + 1, 0);
  for (const auto& e : events) {
    if (e.timestamp >= now) continue;
    Millis at = std::max(e.timestamp, start);
    diff[static_cast<std::size_t>(at - start)] += e.delta;
  }
  std::int64_t level = 0;
  std::int64_t total = 0;
  for (Millis m = 0; m < window_ms; ++m) {
    level += diff[static_cast<std::size_t>(m)];
    total += level;
  }
  return total;
}

// clamp(ceil(integral / (window * target)), min, max) in exact integer
// arithmetic; target must be a whole number.
inline int oracle_desired(std::int64_t integral, Millis window_ms, std::int64_t target, int min, int max) {
  std::int64_t denom = window_ms * target;
  std::int64_t wanted = integral <= 0 ? 0 : (integral + denom - 1) / denom;
  if (wanted > max) return max;
  return std::max<std::int64_t>(min, wanted);
}

}  // namespace hpcserve::testing

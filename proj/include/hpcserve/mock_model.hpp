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

// Stand-in for an OpenAI-compatible model server: health gating plus
// deterministic streamed completions at a configurable pace.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hpcserve/clock.hpp"

namespace httplib {
class Server;
}

namespace hpcserve::sim {

struct ModelProfile {
  int first_token_delay_ms = 0;
  // 0 emits all tokens at once after the first-token delay.
  double tokens_per_second = 0.0;
  int tokens_per_reply = 10;
  // 0 means unbounded.
  int max_concurrent = 0;
  // Spacing between reply starts; 0 disables pacing.
  double max_replies_per_second = 0.0;

  // Answers instantly; for throughput runs.
  static ModelProfile null_profile() {
    ModelProfile p;
    p.tokens_per_reply = 1;
    return p;
  }
};

// Deterministic reply tokens: " 1", " 2", ... (first token has no space).
std::vector<std::string> reply_tokens(int count);
std::string reply_text(int count);

// SSE frame for one streamed token, and the terminator.
std::string sse_token_event(const std::string& model, const std::string& token);
inline constexpr std::string_view kSseDone = "data: [DONE]\n\n";

class MockModelServer {
 public:
  using ReadyGate = std::function<bool()>;

  MockModelServer(std::string model, ModelProfile profile, ReadyGate ready = {});
  ~MockModelServer();
  MockModelServer(const MockModelServer&) = delete;
  MockModelServer& operator=(const MockModelServer&) = delete;

  // Binds host:port (0 picks a free port) and serves on a background thread.
  // Returns false if the bind fails.
  bool start(const std::string& host, int port);
  void stop();

  int port() const { return port_; }
  std::uint64_t replies() const { return replies_.load(); }
  std::uint64_t rejected() const { return rejected_.load(); }

 private:
  // Blocks until a serving slot is free; false means the queue is full.
  bool acquire_slot();
  void release_slot();
  void pace();

  std::string model_;
  ModelProfile profile_;
  ReadyGate ready_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  std::mutex slot_mutex_;
  std::condition_variable slot_cv_;
  int active_ = 0;
  int waiting_ = 0;
  bool stopping_ = false;
  std::mutex pace_mutex_;
  std::chrono::steady_clock::time_point next_reply_{};

  std::atomic<std::uint64_t> replies_{0};
  std::atomic<std::uint64_t> rejected_{0};
};

}  // namespace hpcserve::sim

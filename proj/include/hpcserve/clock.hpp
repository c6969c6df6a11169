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

#include <atomic>
#include <chrono>
#include <cstdint>
#include <thread>

namespace hpcserve {

// Milliseconds since the Unix epoch (or since an arbitrary origin for
// virtual clocks).
using Millis = std::int64_t;

inline constexpr Millis kMillisPerSecond = 1000;

constexpr Millis seconds_to_millis(double seconds) {
  return static_cast<Millis>(seconds * 1000.0);
}

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Millis now_ms() const = 0;
  virtual void sleep_until(Millis deadline) = 0;

  std::int64_t now_seconds() const { return now_ms() / kMillisPerSecond; }
  void sleep_for(Millis duration) { sleep_until(now_ms() + duration); }
};

class SystemClock final : public Clock {
 public:
  Millis now_ms() const override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
  void sleep_until(Millis deadline) override {
    auto remaining = deadline - now_ms();
    if (remaining > 0) std::this_thread::sleep_for(std::chrono::milliseconds(remaining));
  }

  static SystemClock& instance() {
    static SystemClock clock;
    return clock;
  }
};

// Virtual time. sleep_until jumps forward instead of blocking.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Millis start = 0) : now_(start) {}

  Millis now_ms() const override { return now_.load(); }
  void sleep_until(Millis deadline) override { advance_to(deadline); }

  void advance_to(Millis t) {
    Millis cur = now_.load();
    while (t > cur && !now_.compare_exchange_weak(cur, t)) {
    }
  }
  void advance(Millis dt) { now_.fetch_add(dt); }
  void set(Millis t) { now_.store(t); }

 private:
  std::atomic<Millis> now_;
};

}  // namespace hpcserve

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

// Restricted command channel between the proxy and the interface
// entrypoint. Each invocation carries exactly one command line plus its body
// and yields one framed reply stream.
//
// Two transports share the same semantics: an in-process loopback (tests,
// local demos) and an exec transport that spawns one process per invocation,
// either an ssh client whose server side pins the key to the interface via
// ForceCommand, or the interface binary itself with the command in
// SSH_ORIGINAL_COMMAND.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hpcserve/io.hpp"
#include "hpcserve/wire.hpp"

namespace hpcserve::channel {

using Deadline = std::chrono::steady_clock::time_point;

enum class ChannelErrc {
  kUnavailable,  // nothing was dispatched
  kBroken,       // failed after dispatch
  kTimeout,
};

class ChannelError : public std::runtime_error {
 public:
  ChannelError(ChannelErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ChannelErrc code() const noexcept { return code_; }

 private:
  ChannelErrc code_;
};

class ChannelStream {
 public:
  virtual ~ChannelStream() = default;
  // Returns 0 at end of stream. Throws ChannelError(kTimeout | kBroken).
  virtual std::size_t read(std::span<char> buf, Deadline deadline) = 0;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // Establishes or re-verifies the channel. False if unreachable.
  virtual bool connect() = 0;
  // Dispatches one invocation. Throws ChannelError(kUnavailable) when the
  // channel cannot accept it.
  virtual std::unique_ptr<ChannelStream> open(const std::string& command, std::string body) = 0;
  virtual std::string name() const = 0;
};

// Pulls decoded reply events from a stream.
class ReplyReader {
 public:
  explicit ReplyReader(std::unique_ptr<ChannelStream> stream) : stream_(std::move(stream)) {}

  // nullopt once the reply is complete. Throws ChannelError or
  // wire::FrameError (kTruncatedStream when the stream ends early).
  std::optional<wire::ResponseDecoder::Event> next(Deadline deadline);

 private:
  std::unique_ptr<ChannelStream> stream_;
  wire::ResponseDecoder decoder_;
  bool eof_ = false;
};

// Reads the whole reply as raw bytes (used for pongs).
std::string read_all(ChannelStream& stream, Deadline deadline);

// ---------------------------------------------------------------------------

// Bounded in-memory byte queue between a producer thread and a reader.
class BytePipe {
 public:
  explicit BytePipe(std::size_t capacity = 1 << 20) : capacity_(capacity) {}

  bool write(std::string_view data);
  void close_write();
  // Makes both ends fail, as a severed connection would.
  void sever();
  // Closes the read side; blocked writers return false.
  void close_read();
  std::size_t read(std::span<char> buf, Deadline deadline);

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<char> buffer_;
  std::size_t capacity_;
  bool write_closed_ = false;
  bool read_closed_ = false;
  bool severed_ = false;
};

class LoopbackTransport final : public Transport {
 public:
  // Runs one invocation; must write the framed reply into out.
  using Handler = std::function<void(const std::string& command, const std::string& body, ByteSink& out)>;

  explicit LoopbackTransport(Handler handler);
  ~LoopbackTransport() override;

  bool connect() override;
  std::unique_ptr<ChannelStream> open(const std::string& command, std::string body) override;
  std::string name() const override { return "loopback"; }

  // Simulated network failure: in-flight streams break, new opens and
  // connects fail until restore().
  void sever();
  void restore();
  bool severed() const { return severed_.load(); }

  std::uint64_t invocations() const { return invocations_.load(); }

 private:
  class Stream;
  friend class Stream;

  Handler handler_;
  std::atomic<bool> severed_{false};
  std::atomic<std::uint64_t> invocations_{0};
  std::mutex mutex_;
  std::set<std::shared_ptr<BytePipe>> live_;
};

class ExecTransport final : public Transport {
 public:
  enum class CommandMode {
    // Command appended as the last argv element (ssh host <command>).
    kArgument,
    // Command passed in SSH_ORIGINAL_COMMAND (local ForceCommand emulation).
    kEnvironment,
  };

  struct Options {
    std::vector<std::string> argv;
    CommandMode mode = CommandMode::kEnvironment;
    std::chrono::milliseconds connect_timeout{4000};
  };

  explicit ExecTransport(Options options) : options_(std::move(options)) {}

  bool connect() override;
  std::unique_ptr<ChannelStream> open(const std::string& command, std::string body) override;
  std::string name() const override { return "exec"; }

 private:
  Options options_;
};

}  // namespace hpcserve::channel

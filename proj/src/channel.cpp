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

#include "hpcserve/channel.hpp"

#include "hpcserve/log.hpp"
#include "hpcserve/process.hpp"

namespace hpcserve::channel {

std::optional<wire::ResponseDecoder::Event> ReplyReader::next(Deadline deadline) {
  char buf[16384];
  while (true) {
    if (auto event = decoder_.next()) return event;
    if (decoder_.done()) return std::nullopt;
    if (eof_) {
      decoder_.finish();
      return std::nullopt;
    }
    std::size_t n = stream_->read(buf, deadline);
    if (n == 0) {
      eof_ = true;
      continue;
    }
    decoder_.feed(std::string_view(buf, n));
  }
}

std::string read_all(ChannelStream& stream, Deadline deadline) {
  std::string out;
  char buf[4096];
  while (std::size_t n = stream.read(buf, deadline)) out.append(buf, n);
  return out;
}

// ---------------------------------------------------------------------------

bool BytePipe::write(std::string_view data) {
  std::unique_lock lock(mutex_);
  while (!data.empty()) {
    cv_.wait(lock, [&] { return severed_ || read_closed_ || buffer_.size() < capacity_; });
    if (severed_ || read_closed_) return false;
    std::size_t n = std::min(data.size(), capacity_ - buffer_.size());
    buffer_.insert(buffer_.end(), data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n));
    data.remove_prefix(n);
    cv_.notify_all();
  }
  return true;
}

void BytePipe::close_write() {
  std::lock_guard lock(mutex_);
  write_closed_ = true;
  cv_.notify_all();
}

void BytePipe::sever() {
  std::lock_guard lock(mutex_);
  severed_ = true;
  cv_.notify_all();
}

void BytePipe::close_read() {
  std::lock_guard lock(mutex_);
  read_closed_ = true;
  cv_.notify_all();
}

std::size_t BytePipe::read(std::span<char> buf, Deadline deadline) {
  std::unique_lock lock(mutex_);
  bool ready = cv_.wait_until(lock, deadline,
                              [&] { return severed_ || !buffer_.empty() || write_closed_; });
  if (severed_) throw ChannelError(ChannelErrc::kBroken, "channel severed");
  if (!ready) throw ChannelError(ChannelErrc::kTimeout, "channel read timed out");
  std::size_t n = std::min(buf.size(), buffer_.size());
  std::copy_n(buffer_.begin(), n, buf.begin());
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
  cv_.notify_all();
  return n;
}

namespace {

class PipeSink final : public ByteSink {
 public:
  explicit PipeSink(BytePipe& pipe) : pipe_(pipe) {}
  bool write(std::string_view data) override { return pipe_.write(data); }

 private:
  BytePipe& pipe_;
};

}  // namespace

class LoopbackTransport::Stream final : public ChannelStream {
 public:
  Stream(LoopbackTransport& owner, std::shared_ptr<BytePipe> pipe, const std::string& command,
         std::string body)
      : owner_(owner), pipe_(std::move(pipe)) {
    worker_ = std::thread([this, command, body = std::move(body)] {
      PipeSink sink(*pipe_);
      try {
        owner_.handler_(command, body, sink);
      } catch (const std::exception& e) {
        HPC_LOG_ERROR("loopback invocation failed: " << e.what());
      }
      pipe_->close_write();
    });
  }

  ~Stream() override {
    pipe_->close_read();
    if (worker_.joinable()) worker_.join();
    std::lock_guard lock(owner_.mutex_);
    owner_.live_.erase(pipe_);
  }

  std::size_t read(std::span<char> buf, Deadline deadline) override {
    return pipe_->read(buf, deadline);
  }

 private:
  LoopbackTransport& owner_;
  std::shared_ptr<BytePipe> pipe_;
  std::thread worker_;
};

LoopbackTransport::LoopbackTransport(Handler handler) : handler_(std::move(handler)) {}

LoopbackTransport::~LoopbackTransport() = default;

bool LoopbackTransport::connect() { return !severed_.load(); }

std::unique_ptr<ChannelStream> LoopbackTransport::open(const std::string& command, std::string body) {
  auto pipe = std::make_shared<BytePipe>();
  {
    std::lock_guard lock(mutex_);
    if (severed_.load()) throw ChannelError(ChannelErrc::kUnavailable, "loopback channel severed");
    live_.insert(pipe);
  }
  invocations_.fetch_add(1);
  return std::make_unique<Stream>(*this, std::move(pipe), command, std::move(body));
}

void LoopbackTransport::sever() {
  std::lock_guard lock(mutex_);
  severed_.store(true);
  for (const auto& pipe : live_) pipe->sever();
}

void LoopbackTransport::restore() {
  std::lock_guard lock(mutex_);
  severed_.store(false);
}

// ---------------------------------------------------------------------------

namespace {

class ProcessStream final : public ChannelStream {
 public:
  explicit ProcessStream(process::ChildProcess child) : child_(std::move(child)) {}
  ~ProcessStream() override {
    child_.kill();
    child_.wait();
  }

  std::size_t read(std::span<char> buf, Deadline deadline) override {
    auto n = child_.read_stdout(buf, deadline);
    if (!n) throw ChannelError(ChannelErrc::kTimeout, "channel read timed out");
    if (*n == 0) {
      int status = child_.wait();
      if (status == 255) throw ChannelError(ChannelErrc::kBroken, "remote shell connection failed");
    }
    return *n;
  }

 private:
  process::ChildProcess child_;
};

}  // namespace

std::unique_ptr<ChannelStream> ExecTransport::open(const std::string& command, std::string body) {
  auto argv = options_.argv;
  process::Environment env;
  if (options_.mode == CommandMode::kArgument) {
    argv.push_back(command);
  } else {
    env.push_back("SSH_ORIGINAL_COMMAND=" + command);
  }
  try {
    auto child = process::ChildProcess::spawn(argv, env);
    if (!child.write_stdin(body)) throw ChannelError(ChannelErrc::kBroken, "channel closed input");
    child.close_stdin();
    return std::make_unique<ProcessStream>(std::move(child));
  } catch (const process::SpawnError& e) {
    throw ChannelError(ChannelErrc::kUnavailable, e.what());
  }
}

bool ExecTransport::connect() {
  try {
    auto stream = open(wire::encode_ping(), {});
    auto reply = read_all(*stream, std::chrono::steady_clock::now() + options_.connect_timeout);
    return wire::parse_pong(reply).has_value();
  } catch (const ChannelError& e) {
    HPC_LOG_INFO("exec channel connect failed: " << e.what());
    return false;
  }
}

}  // namespace hpcserve::channel

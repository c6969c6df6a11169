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

#include <chrono>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <sys/types.h>

namespace hpcserve::process {

class SpawnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extra environment entries are "KEY=value" strings overriding the parent's.
using Environment = std::vector<std::string>;

// A child with piped stdin/stdout. stderr is inherited. The destructor kills
// and reaps a child that is still running.
class ChildProcess {
 public:
  static ChildProcess spawn(const std::vector<std::string>& argv, const Environment& env = {});

  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  ~ChildProcess();

  // Returns false if the child closed its end.
  bool write_stdin(std::string_view data);
  void close_stdin();

  // Reads up to buf.size() octets. Returns 0 on EOF, nullopt when the
  // deadline passes first.
  std::optional<std::size_t> read_stdout(std::span<char> buf,
                                         std::chrono::steady_clock::time_point deadline);

  void kill();
  // Blocks until exit; returns the exit status (128+signal when signalled).
  int wait();
  pid_t pid() const { return pid_; }

 private:
  ChildProcess(pid_t pid, int in_fd, int out_fd) : pid_(pid), stdin_fd_(in_fd), stdout_fd_(out_fd) {}
  void release();

  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  std::optional<int> exit_status_;
};

struct RunResult {
  int exit_code = -1;
  std::string out;
  bool timed_out = false;
};

RunResult run(const std::vector<std::string>& argv, std::string_view input,
              std::chrono::milliseconds timeout, const Environment& env = {});

// Fire-and-forget: new session, stdio on /dev/null, never waited on here.
void spawn_detached(const std::vector<std::string>& argv, const Environment& env = {});

}  // namespace hpcserve::process

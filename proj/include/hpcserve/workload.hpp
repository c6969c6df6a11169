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

// Workload-manager and readiness-probe seams used by the scheduler.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hpcserve {

enum class JobState { kPending, kRunning };

std::string_view to_string(JobState state);

struct JobInfo {
  std::string id;
  JobState state = JobState::kPending;
  std::string node;  // empty while pending
  std::int64_t remaining_walltime_s = 0;

  friend bool operator==(const JobInfo&, const JobInfo&) = default;
};

struct SubmitEnv {
  std::string service;
  int port = 0;
};

class ClusterUnreachable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SubmitFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WorkloadManager {
 public:
  virtual ~WorkloadManager() = default;

  // Throws SubmitFailed (or ClusterUnreachable).
  virtual std::string submit(const std::string& job_template, std::int64_t walltime_s,
                             const SubmitEnv& env) = 0;
  // PENDING and RUNNING jobs only. Throws ClusterUnreachable.
  virtual std::vector<JobInfo> list() = 0;
  // Unknown ids are a no-op.
  virtual void cancel(const std::string& job_id) = 0;
};

// Wraps sbatch / squeue / scancel. The job template is the path of a batch
// script; SERVICE and PORT are exported into the job environment.
class SlurmCli final : public WorkloadManager {
 public:
  struct Commands {
    std::string sbatch = "sbatch";
    std::string squeue = "squeue";
    std::string scancel = "scancel";
    // Passed to squeue --user; empty lists the invoking user's jobs (--me).
    std::string user;
    int timeout_ms = 10000;
  };

  SlurmCli() = default;
  explicit SlurmCli(Commands commands) : commands_(std::move(commands)) {}

  std::string submit(const std::string& job_template, std::int64_t walltime_s,
                     const SubmitEnv& env) override;
  std::vector<JobInfo> list() override;
  void cancel(const std::string& job_id) override;

  // Parses `squeue --noheader --format="%i %T %N %L"` output.
  static std::vector<JobInfo> parse_squeue(std::string_view text);
  // Parses squeue's %L field ([days-]hours:minutes:seconds, MM:SS, ...).
  // UNLIMITED and NOT_SET map to a large value; INVALID maps to 0.
  static std::int64_t parse_time_left(std::string_view field);
  static std::string format_walltime(std::int64_t seconds);

 private:
  Commands commands_;
};

class Prober {
 public:
  virtual ~Prober() = default;
  // True iff GET path on node:port answered 200 within the timeout.
  virtual bool probe(const std::string& node, int port, const std::string& path) = 0;
};

class HttpProber final : public Prober {
 public:
  explicit HttpProber(std::map<std::string, std::string> node_addresses = {},
                      int timeout_ms = 2000)
      : node_addresses_(std::move(node_addresses)), timeout_ms_(timeout_ms) {}

  bool probe(const std::string& node, int port, const std::string& path) override;

 private:
  std::map<std::string, std::string> node_addresses_;
  int timeout_ms_;
};

// Node name -> network address; identity when unmapped.
std::string resolve_node(const std::map<std::string, std::string>& addresses,
                         const std::string& node);

}  // namespace hpcserve

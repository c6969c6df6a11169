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

#include "hpcserve/workload.hpp"

#include <httplib.h>

#include <charconv>
#include <sstream>

#include "hpcserve/log.hpp"
#include "hpcserve/process.hpp"

namespace hpcserve {
namespace {

constexpr std::int64_t kUnlimitedSeconds = 365LL * 24 * 3600;

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::optional<std::int64_t> to_int(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

std::string_view to_string(JobState state) {
  return state == JobState::kPending ? "PENDING" : "RUNNING";
}

std::string SlurmCli::format_walltime(std::int64_t seconds) {
  // sbatch --time accepts minutes; round up so the job never gets less.
  return std::to_string((seconds + 59) / 60);
}

std::string SlurmCli::submit(const std::string& job_template, std::int64_t walltime_s,
                             const SubmitEnv& env) {
  std::vector<std::string> argv = {
      commands_.sbatch,
      "--parsable",
      "--time=" + format_walltime(walltime_s),
      "--job-name=" + env.service,
      "--export=ALL,SERVICE=" + env.service + ",PORT=" + std::to_string(env.port),
      job_template};
  process::RunResult result;
  try {
    result = process::run(argv, {}, std::chrono::milliseconds(commands_.timeout_ms));
  } catch (const process::SpawnError& e) {
    throw ClusterUnreachable(e.what());
  }
  if (result.timed_out) throw ClusterUnreachable("sbatch timed out");
  if (result.exit_code != 0) {
    throw SubmitFailed("sbatch exited with " + std::to_string(result.exit_code));
  }
  // --parsable prints "jobid" or "jobid;cluster".
  auto id = trim(result.out);
  id = id.substr(0, id.find(';'));
  if (id.empty() || !to_int(id)) throw SubmitFailed("sbatch printed no job id");
  return id;
}

std::vector<JobInfo> SlurmCli::list() {
  std::vector<std::string> argv = {commands_.squeue, "--noheader", "--states=PENDING,RUNNING",
                                   "--format=%i %T %N %L"};
  if (commands_.user.empty()) {
    argv.emplace_back("--me");
  } else {
    argv.push_back("--user=" + commands_.user);
  }
  process::RunResult result;
  try {
    result = process::run(argv, {}, std::chrono::milliseconds(commands_.timeout_ms));
  } catch (const process::SpawnError& e) {
    throw ClusterUnreachable(e.what());
  }
  if (result.timed_out || result.exit_code != 0) throw ClusterUnreachable("squeue failed");
  return parse_squeue(result.out);
}

void SlurmCli::cancel(const std::string& job_id) {
  try {
    auto result = process::run({commands_.scancel, job_id}, {},
                               std::chrono::milliseconds(commands_.timeout_ms));
    if (result.exit_code != 0) HPC_LOG_WARN("scancel " << job_id << " exited " << result.exit_code);
  } catch (const process::SpawnError& e) {
    HPC_LOG_WARN("scancel " << job_id << ": " << e.what());
  }
}

std::vector<JobInfo> SlurmCli::parse_squeue(std::string_view text) {
  std::vector<JobInfo> jobs;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string id, state, node, left;
    if (!(fields >> id >> state)) continue;
    fields >> node >> left;
    // A pending job prints an empty %N, so the time-left lands in `node`.
    if (left.empty()) {
      left = node;
      node.clear();
    }
    JobInfo job;
    job.id = id;
    if (state == "RUNNING" || state == "COMPLETING") {
      job.state = JobState::kRunning;
    } else if (state == "PENDING" || state == "CONFIGURING") {
      job.state = JobState::kPending;
      node.clear();
    } else {
      continue;
    }
    if (node == "(null)" || node == "n/a") node.clear();
    job.node = node;
    job.remaining_walltime_s = parse_time_left(left);
    jobs.push_back(std::move(job));
  }
  return jobs;
}

std::int64_t SlurmCli::parse_time_left(std::string_view field) {
  if (field == "UNLIMITED" || field == "NOT_SET") return kUnlimitedSeconds;
  std::int64_t days = 0;
  if (auto dash = field.find('-'); dash != std::string_view::npos) {
    auto d = to_int(field.substr(0, dash));
    if (!d) return 0;
    days = *d;
    field.remove_prefix(dash + 1);
  }
  std::vector<std::int64_t> parts;
  while (true) {
    auto colon = field.find(':');
    auto v = to_int(field.substr(0, colon));
    if (!v) return 0;
    parts.push_back(*v);
    if (colon == std::string_view::npos) break;
    field.remove_prefix(colon + 1);
  }
  std::int64_t h = 0, m = 0, s = 0;
  switch (parts.size()) {
    case 1:
      // "D-HH" or plain minutes.
      if (days > 0) {
        h = parts[0];
      } else {
        m = parts[0];
      }
      break;
    case 2:
      m = parts[0];
      s = parts[1];
      if (days > 0) {
        h = parts[0];
        m = parts[1];
        s = 0;
      }
      break;
    case 3:
      h = parts[0];
      m = parts[1];
      s = parts[2];
      break;
    default:
      return 0;
  }
  return ((days * 24 + h) * 60 + m) * 60 + s;
}

std::string resolve_node(const std::map<std::string, std::string>& addresses,
                         const std::string& node) {
  auto it = addresses.find(node);
  if (it != addresses.end()) return it->second;
  auto wildcard = addresses.find("*");
  if (wildcard != addresses.end()) return wildcard->second;
  return node;
}

bool HttpProber::probe(const std::string& node, int port, const std::string& path) {
  httplib::Client client(resolve_node(node_addresses_, node), port);
  auto sec = timeout_ms_ / 1000;
  auto usec = (timeout_ms_ % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  auto res = client.Get(path);
  return res && res->status == 200;
}

}  // namespace hpcserve

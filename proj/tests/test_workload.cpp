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

#include <gtest/gtest.h>

#include <filesystem>

#include "hpcserve/files.hpp"
#include "hpcserve/workload.hpp"
#include "support.hpp"

namespace hpcserve {
namespace {

using hpcserve::testing::TempDir;

TEST(SlurmCli, ParseTimeLeft) {
  EXPECT_EQ(SlurmCli::parse_time_left("1-02:03:04"), 93784);
  EXPECT_EQ(SlurmCli::parse_time_left("02:03:04"), 7384);
  EXPECT_EQ(SlurmCli::parse_time_left("03:04"), 184);
  EXPECT_EQ(SlurmCli::parse_time_left("2-05"), 2 * 86400 + 5 * 3600);
  EXPECT_EQ(SlurmCli::parse_time_left("INVALID"), 0);
  EXPECT_GE(SlurmCli::parse_time_left("UNLIMITED"), 365LL * 86400);
}

TEST(SlurmCli, ParseSqueue) {
  auto jobs = SlurmCli::parse_squeue(
      "101 RUNNING gpu03 3:59:00\n"
      "102 PENDING 4:00:00\n"
      "103 COMPLETED gpu01 0:00\n"
      "garbage\n");
  ASSERT_EQ(jobs.size(), 2u);
  EXPECT_EQ(jobs[0], (JobInfo{"101", JobState::kRunning, "gpu03", 14340}));
  EXPECT_EQ(jobs[1], (JobInfo{"102", JobState::kPending, "", 14400}));
}

TEST(SlurmCli, FormatWalltimeRoundsUpToMinutes) {
  EXPECT_EQ(SlurmCli::format_walltime(14400), "240");
  EXPECT_EQ(SlurmCli::format_walltime(61), "2");
}

struct FakeSlurm : ::testing::Test {
  TempDir dir;
  std::string script(const std::string& name, const std::string& body) {
    auto path = dir.file(name);
    files::write_file_atomic(path, "#!/bin/sh\n" + body);
    std::filesystem::permissions(path, std::filesystem::perms::owner_all);
    return path;
  }
};

TEST_F(FakeSlurm, SubmitListCancel) {
  SlurmCli::Commands cmds;
  cmds.sbatch = script("sbatch", "echo \"$@\" > " + dir.file("sbatch.args") + "\necho '4242;cluster'\n");
  cmds.squeue = script("squeue", "echo \"$@\" > " + dir.file("squeue.args") + "\necho '4242 RUNNING gpu02 1:00:00'\n");
  cmds.scancel = script("scancel", "echo \"$@\" > " + dir.file("scancel.args") + "\n");
  cmds.user = "svc";
  SlurmCli slurm(cmds);
  EXPECT_EQ(slurm.submit("/jobs/qwen.sbatch", 14400, {"qwen", 20001}), "4242");
  auto args = *files::read_file(dir.file("sbatch.args"));
  EXPECT_NE(args.find("--time=240"), std::string::npos);
  EXPECT_NE(args.find("SERVICE=qwen,PORT=20001"), std::string::npos);
  EXPECT_NE(args.find("/jobs/qwen.sbatch"), std::string::npos);

  auto jobs = slurm.list();
  ASSERT_EQ(jobs.size(), 1u);
  EXPECT_EQ(jobs[0].node, "gpu02");
  EXPECT_NE(files::read_file(dir.file("squeue.args"))->find("--user=svc"), std::string::npos);

  slurm.cancel("4242");
  EXPECT_EQ(*files::read_file(dir.file("scancel.args")), "4242\n");
}

TEST_F(FakeSlurm, Failures) {
  SlurmCli::Commands cmds;
  cmds.sbatch = script("sbatch", "exit 1\n");
  cmds.squeue = script("squeue", "exit 1\n");
  SlurmCli failing(cmds);
  EXPECT_THROW(failing.submit("t", 60, {"a", 1}), SubmitFailed);
  EXPECT_THROW(failing.list(), ClusterUnreachable);

  cmds.squeue = script("squeue2", "sleep 5\n");
  cmds.timeout_ms = 100;
  EXPECT_THROW(SlurmCli(cmds).list(), ClusterUnreachable);
  cmds.squeue = dir.file("missing");
  EXPECT_THROW(SlurmCli(cmds).list(), ClusterUnreachable);
}

TEST(ResolveNode, MapsAndFallsBack) {
  std::map<std::string, std::string> m = {{"gpu01", "10.0.0.1"}, {"*", "127.0.0.1"}};
  EXPECT_EQ(resolve_node(m, "gpu01"), "10.0.0.1");
  EXPECT_EQ(resolve_node(m, "gpu02"), "127.0.0.1");
  EXPECT_EQ(resolve_node({}, "gpu02"), "gpu02");
}

}  // namespace
}  // namespace hpcserve

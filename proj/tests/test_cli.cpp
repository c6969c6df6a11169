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

#include <thread>

#include "hpcserve/channel.hpp"
#include "hpcserve/files.hpp"
#include "hpcserve/process.hpp"
#include "hpcserve/routing.hpp"
#include "support.hpp"

namespace hpcserve {
namespace {

using namespace std::chrono_literals;
using hpcserve::testing::TempDir;

const std::string kCli = HPCSERVE_CLI_PATH;

struct CliTest : ::testing::Test {
  TempDir dir;
  std::string config;

  void SetUp() override {
    config = dir.file("deploy.json");
    files::write_file_atomic(config, R"({
      "proxy": {"routes": {"qwen-7b": "qwen"}, "api_keys": [{"id": "a", "key": "sk-a"}],
                "channel": {"transport": "exec", "argv": ["ssh", "login"]}},
      "scheduler": {"services": [{"name": "qwen", "job_template": "/jobs/q.sbatch"}],
                    "slurm": {"sbatch": "/bin/false", "squeue": "/bin/false", "scancel": "/bin/true"}}
    })");
  }

  process::RunResult cli(std::vector<std::string> args, const process::Environment& env = {}) {
    args.insert(args.begin(), kCli);
    return process::run(args, "", 20s, env);
  }
};

TEST_F(CliTest, CheckConfig) {
  EXPECT_EQ(cli({"check-config", "-c", config}).exit_code, 0);
  files::write_file_atomic(dir.file("bad.json"), R"({"proxy": {"routes": {"m": "nope"}}})");
  auto r = cli({"check-config", "-c", dir.file("bad.json")});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(cli({"check-config", "-c", dir.file("missing.json")}).exit_code, 1);
  EXPECT_NE(cli({"no-such-command"}).exit_code, 0);
}

TEST_F(CliTest, InterfaceAnswersPing) {
  auto r = cli({"run", "interface", "-c", config}, {"SSH_ORIGINAL_COMMAND=PING"});
  EXPECT_EQ(r.exit_code, 0);
  auto pong = wire::parse_pong(r.out);
  ASSERT_TRUE(pong) << r.out;
}

TEST_F(CliTest, InterfaceRejectsArbitraryCommands) {
  auto r = cli({"run", "interface", "-c", config}, {"SSH_ORIGINAL_COMMAND=cat /etc/passwd"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "ERR 400 MalformedCommand\n");
  r = cli({"run", "interface", "-c", config}, {"SSH_ORIGINAL_COMMAND=REQ 1 GET other /health 0 N"});
  EXPECT_EQ(r.out, "ERR 404 no ready instance\n");
}

TEST_F(CliTest, ExecTransportThroughInterface) {
  channel::ExecTransport t({{kCli, "run", "interface", "-c", config},
                            channel::ExecTransport::CommandMode::kEnvironment,
                            4000ms});
  EXPECT_TRUE(t.connect());
}

TEST_F(CliTest, ScenarioCommand) {
  files::write_file_atomic(dir.file("s.txt"),
                           "topology nodes=2 gpus=1\ndelay 0\nservice name=q template=\"gpus=1\" min=1 max=1\n"
                           "expect at=60 service=q ready=1\nrun until=120\n");
  auto r = cli({"scenario", dir.file("s.txt"), "--work-dir", dir.file("work")});
  EXPECT_EQ(r.exit_code, 0) << r.out;
  files::write_file_atomic(dir.file("fail.txt"),
                           "service name=q template=\"gpus=1\" min=1 max=1\nexpect at=60 service=q ready=2\nrun until=120\n");
  EXPECT_EQ(cli({"scenario", dir.file("fail.txt")}).exit_code, 3);
}

}  // namespace
}  // namespace hpcserve

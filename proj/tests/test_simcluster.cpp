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

#include "hpcserve/simcluster.hpp"

namespace hpcserve::sim {
namespace {

SubmitEnv env(int port) { return SubmitEnv{"qwen", port}; }

TEST(JobTemplate, Parses) {
  auto t = parse_job_template("gpus=2 cold_start=60 profile=fast");
  EXPECT_EQ(t.gpus, 2);
  EXPECT_DOUBLE_EQ(t.cold_start_seconds, 60);
  EXPECT_EQ(t.profile, "fast");
  EXPECT_THROW(parse_job_template(""), RejectedTemplate);
  EXPECT_THROW(parse_job_template("gpus=0"), RejectedTemplate);
  EXPECT_THROW(parse_job_template("mem=4G"), RejectedTemplate);
  EXPECT_THROW(parse_job_template("cold_start=-1"), RejectedTemplate);
}

TEST(SimCluster, NodeNames) {
  ManualClock clock;
  SimCluster c({12, 4, "gpu"}, 0, clock);
  auto nodes = c.nodes();
  ASSERT_EQ(nodes.size(), 12u);
  EXPECT_EQ(nodes[0].name, "gpu01");
  EXPECT_EQ(nodes[11].name, "gpu12");
}

TEST(SimCluster, LifecycleWithDelayColdStartAndWalltime) {
  ManualClock clock(0);
  SimCluster c({1, 4, "gpu"}, 3000, clock);
  auto id = c.submit("gpus=1 cold_start=10", 100, env(20001));
  auto jobs = c.list();
  ASSERT_EQ(jobs.size(), 1u);
  EXPECT_EQ(jobs[0].state, JobState::kPending);

  clock.set(2999);
  EXPECT_EQ(c.list()[0].state, JobState::kPending);
  clock.set(3000);
  jobs = c.list();
  EXPECT_EQ(jobs[0].state, JobState::kRunning);
  EXPECT_EQ(jobs[0].node, "gpu01");
  EXPECT_EQ(jobs[0].remaining_walltime_s, 100);
  EXPECT_FALSE(c.is_health_ready(id));

  clock.set(13000);
  EXPECT_TRUE(c.is_health_ready(id));
  EXPECT_TRUE(c.is_port_ready("gpu01", 20001));
  EXPECT_FALSE(c.is_port_ready("gpu01", 20002));

  clock.set(103000);
  EXPECT_TRUE(c.list().empty());
  EXPECT_EQ(c.job(id)->state, SimJobState::kCompleted);
  EXPECT_EQ(c.nodes()[0].gpus_free, 4);

  std::vector<std::string> kinds;
  for (const auto& e : c.trace()) kinds.push_back(e.kind);
  EXPECT_EQ(kinds, (std::vector<std::string>{"submit", "start", "ready", "expire"}));
  EXPECT_EQ(c.ready_cancellations(), 0u);
}

TEST(SimCluster, GpuCapacityQueuesInOrder) {
  ManualClock clock(0);
  SimCluster c({1, 4, "gpu"}, 0, clock);
  auto a = c.submit("gpus=3", 100, env(1));
  auto b = c.submit("gpus=2", 100, env(2));
  auto d = c.submit("gpus=1", 100, env(3));
  EXPECT_EQ(c.job(a)->state, SimJobState::kRunning);
  EXPECT_EQ(c.job(b)->state, SimJobState::kPending);
  EXPECT_EQ(c.job(d)->state, SimJobState::kRunning);
  EXPECT_TRUE(c.check_conservation());
  c.cancel(a);
  EXPECT_EQ(c.job(b)->state, SimJobState::kRunning);
  EXPECT_TRUE(c.check_conservation());
  EXPECT_EQ(c.cancellations(), 1u);
  EXPECT_EQ(c.ready_cancellations(), 1u);
}

TEST(SimCluster, KillAndRestoreNode) {
  ManualClock clock(0);
  SimCluster c({2, 1, "gpu"}, 0, clock);
  auto a = c.submit("gpus=1", 100, env(1));
  auto b = c.submit("gpus=1", 100, env(2));
  auto node_a = c.job(a)->node;
  c.kill_node(node_a);
  EXPECT_EQ(c.job(a)->state, SimJobState::kFailed);
  EXPECT_EQ(c.job(b)->state, SimJobState::kRunning);
  auto e = c.submit("gpus=1", 100, env(3));
  EXPECT_EQ(c.job(e)->state, SimJobState::kPending);
  EXPECT_TRUE(c.check_conservation());
  c.restore_node(node_a);
  EXPECT_EQ(c.job(e)->state, SimJobState::kRunning);
  EXPECT_EQ(c.job(e)->node, node_a);

  auto life = c.drain_lifecycle();
  ASSERT_GE(life.size(), 3u);
  EXPECT_EQ(life[0].kind, Lifecycle::Kind::kStarted);
  EXPECT_TRUE(c.drain_lifecycle().empty());
}

TEST(SimCluster, NeverReadyAndUnreachable) {
  ManualClock clock(0);
  SimCluster c({1, 4, "gpu"}, 0, clock);
  auto a = c.submit("gpus=1 cold_start=1", 100, env(1));
  c.set_never_ready(a);
  clock.set(50000);
  EXPECT_FALSE(c.is_health_ready(a));
  SimProber prober(c);
  EXPECT_FALSE(prober.probe("gpu01", 1, "/health"));
  c.set_unreachable(true);
  EXPECT_THROW(c.list(), ClusterUnreachable);
  EXPECT_THROW(c.submit("gpus=1", 1, env(2)), ClusterUnreachable);
  c.set_unreachable(false);
  EXPECT_EQ(c.list().size(), 1u);
  c.cancel("nope");
  EXPECT_EQ(c.cancellations(), 0u);
}

TEST(SimCluster, ExpiryBetweenSyncsIsProcessedAtItsTime) {
  ManualClock clock(0);
  SimCluster c({1, 1, "gpu"}, 0, clock);
  auto a = c.submit("gpus=1", 10, env(1));
  auto b = c.submit("gpus=1", 10, env(2));
  clock.set(25000);
  c.sync();
  // b starts when a expires at 10 s and expires itself at 20 s.
  EXPECT_EQ(c.job(a)->end_time, 10000);
  EXPECT_EQ(c.job(b)->start_time, 10000);
  EXPECT_EQ(c.job(b)->end_time, 20000);
}

}  // namespace
}  // namespace hpcserve::sim

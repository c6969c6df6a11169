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

#include "hpcserve/scenario.hpp"
#include "support.hpp"

namespace hpcserve::scenario {
namespace {

using hpcserve::testing::TempDir;

TEST(Scenario, ParseErrorsNameTheLine) {
  try {
    parse_scenario("topology nodes=2\nservice name=q\nbogus x=1\n");
    FAIL();
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_scenario("topology nodes=2\n"), ScenarioError);
  EXPECT_THROW(parse_scenario("service name=q colour=red\n"), ScenarioError);
  EXPECT_THROW(parse_scenario("service name=q min=5 max=1\n"), ScenarioError);
}

TEST(Scenario, ScaleUpAndDown) {
  auto s = parse_scenario(R"(
    topology nodes=4 gpus=1
    delay 0
    service name=q template="gpus=1 cold_start=30" min=1 max=4 target=2 window=60 walltime=900 margin=120
    load at=600 until=1200 service=q concurrency=6
    expect at=500 service=q ready=1
    expect at=1100 service=q ready=3
    expect at=1800 service=q ready=1
    run until=1900 every=5 seed=3
  )");
  ASSERT_EQ(s.services.size(), 1u);
  EXPECT_EQ(s.services[0].job_template, "gpus=1 cold_start=30");
  TempDir dir;
  auto r = run_scenario(s, dir.path());
  EXPECT_TRUE(r.failures.empty()) << (r.failures.empty() ? "" : r.failures[0]);
  EXPECT_TRUE(r.conserved);
  EXPECT_EQ(r.ready_cancellations, 0u);
  EXPECT_FALSE(r.timeline.empty());
}

TEST(Scenario, NodeFailureIsReplaced) {
  auto s = parse_scenario(R"(
    topology nodes=2 gpus=1
    delay 0
    service name=q template="gpus=1" min=1 max=1
    kill at=100 node=gpu01
    expect at=200 service=q ready=1
    run until=300
  )");
  TempDir dir;
  auto r = run_scenario(s, dir.path());
  EXPECT_TRUE(r.failures.empty()) << (r.failures.empty() ? "" : r.failures[0]);
  EXPECT_EQ(r.submissions, 2u);
}

}  // namespace
}  // namespace hpcserve::scenario

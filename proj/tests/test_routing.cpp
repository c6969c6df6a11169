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

#include "hpcserve/files.hpp"
#include "hpcserve/routing.hpp"
#include "support.hpp"

namespace hpcserve {
namespace {

RouteEntry entry(std::string job, std::string svc, int port, InstanceState st, std::string node = "gpu01") {
  return RouteEntry{std::move(job), std::move(svc), std::move(node), port, st, 1700000000};
}

TEST(RoutingTable, SerializeParseRoundTrip) {
  RoutingTable t({entry("1001", "qwen", 20001, InstanceState::kReady),
                  entry("1002", "qwen", 20002, InstanceState::kSubmitted, "-"),
                  entry("1003", "llama", 20003, InstanceState::kDraining)});
  EXPECT_EQ(t.serialize(),
            "1001 qwen gpu01 20001 READY 1700000000\n"
            "1002 qwen - 20002 SUBMITTED 1700000000\n"
            "1003 llama gpu01 20003 DRAINING 1700000000\n");
  EXPECT_EQ(RoutingTable::parse(t.serialize()), t);
}

TEST(RoutingTable, ParseErrorsNameTheLine) {
  try {
    RoutingTable::parse("1001 qwen gpu01 20001 READY 1\n1002 qwen gpu01 notaport READY 1\n");
    FAIL();
  } catch (const TableFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(RoutingTable::parse("1001 qwen gpu01 20001 HAPPY 1\n"), TableFormatError);
  EXPECT_THROW(RoutingTable::parse("1001 qwen gpu01 20001 READY\n"), TableFormatError);
  EXPECT_THROW(RoutingTable::parse("1001 qwen gpu01 20001 READY 1\n1001 qwen gpu02 20002 READY 1\n"),
               TableFormatError);
}

TEST(RoutingTable, AddRejectsDuplicates) {
  RoutingTable t;
  t.add(entry("1", "a", 20000, InstanceState::kReady));
  EXPECT_THROW(t.add(entry("1", "a", 20001, InstanceState::kReady)), std::invalid_argument);
  EXPECT_THROW(t.add(entry("2", "a", 20000, InstanceState::kReady)), std::invalid_argument);
  EXPECT_EQ(t.occupied_ports(), (std::set<int>{20000}));
}

TEST(RoutingTable, RoutableIsReadyOrDraining) {
  RoutingTable t({entry("1", "a", 20000, InstanceState::kReady), entry("2", "a", 20001, InstanceState::kDraining),
                  entry("3", "a", 20002, InstanceState::kStarting), entry("4", "b", 20003, InstanceState::kReady)});
  auto r = t.routable("a");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].job_id, "1");
  EXPECT_EQ(r[1].job_id, "2");
  EXPECT_EQ(t.count("a", InstanceState::kStarting), 1u);
}

TEST(RoutingTable, SaveLoadAndMissingFile) {
  testing::TempDir dir;
  EXPECT_EQ(RoutingTable::load(dir.file("nope")).size(), 0u);
  RoutingTable t({entry("1", "a", 20000, InstanceState::kReady)});
  t.save(dir.file("table"));
  EXPECT_EQ(RoutingTable::load(dir.file("table")), t);
}

TEST(LoadLog, AppendAndParse) {
  testing::TempDir dir;
  append_load_event(dir.path(), "qwen", {1000, +1});
  append_load_event(dir.path(), "qwen", {1500, -1});
  EXPECT_EQ(*files::read_file(load_log_path(dir.path(), "qwen")), "1000 +1\n1500 -1\n");
  auto events = parse_load_log("1000 +1\ngarbage\n1500 -1\n2000 +2\n");
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[1], (LoadEvent{1500, -1}));
}

TEST(LoadLog, ConcurrentAppendsStayLineAtomic) {
  testing::TempDir dir;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 200; ++i) append_load_event(dir.path(), "svc", {t * 1000 + i, i % 2 ? -1 : +1});
    });
  }
  for (auto& th : threads) th.join();
  auto events = parse_load_log(*files::read_file(load_log_path(dir.path(), "svc")));
  EXPECT_EQ(events.size(), 1600u);
}

TEST(DesiredState, RoundTrip) {
  std::vector<ServiceStatus> s = {{"qwen", 3, 9.5}, {"llama", 1, 0}};
  EXPECT_EQ(parse_desired_state(serialize_desired_state(s)), s);
  testing::TempDir dir;
  EXPECT_TRUE(load_desired_state(dir.file("none")).empty());
}

}  // namespace
}  // namespace hpcserve

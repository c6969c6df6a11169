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
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <json.hpp>
#include <thread>

#include "hpcserve/mock_model.hpp"

namespace hpcserve::sim {
namespace {

using nlohmann::json;
using steady = std::chrono::steady_clock;

TEST(ReplyTokens, Text) {
  EXPECT_EQ(reply_text(3), "1 2 3");
  EXPECT_TRUE(reply_tokens(0).empty());
}

TEST(MockModel, HealthGateAndCompletion) {
  std::atomic<bool> ready{false};
  MockModelServer server("m", ModelProfile::null_profile(), [&] { return ready.load(); });
  ASSERT_TRUE(server.start("127.0.0.1", 0));
  httplib::Client cli("127.0.0.1", server.port());
  EXPECT_EQ(cli.Get("/health")->status, 503);
  EXPECT_EQ(cli.Post("/v1/chat/completions", R"({"model":"m"})", "application/json")->status, 503);
  ready = true;
  EXPECT_EQ(cli.Get("/health")->status, 200);
  auto res = cli.Post("/v1/chat/completions", R"({"model":"m"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  auto body = json::parse(res->body);
  EXPECT_EQ(body["choices"][0]["message"]["content"], "1");
  EXPECT_EQ(server.replies(), 1u);
  server.stop();
}

TEST(MockModel, StreamsSseWithFirstTokenDelay) {
  ModelProfile p;
  p.first_token_delay_ms = 50;
  p.tokens_per_reply = 3;
  p.tokens_per_second = 100;
  MockModelServer server("m", p);
  ASSERT_TRUE(server.start("127.0.0.1", 0));
  httplib::Client cli("127.0.0.1", server.port());
  std::string body;
  steady::time_point first{};
  auto start = steady::now();
  httplib::Request req;
  req.method = "POST";
  req.path = "/v1/chat/completions";
  req.body = R"({"model":"m","stream":true})";
  req.set_header("Content-Type", "application/json");
  req.content_receiver = [&](const char* d, std::size_t n, std::uint64_t, std::uint64_t) {
    if (body.empty()) first = steady::now();
    body.append(d, n);
    return true;
  };
  auto res = cli.send(req);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_GE(first - start, std::chrono::milliseconds(45));
  EXPECT_NE(body.find(sse_token_event("m", "1")), std::string::npos);
  EXPECT_NE(body.find(sse_token_event("m", " 3")), std::string::npos);
  EXPECT_EQ(body.substr(body.size() - kSseDone.size()), kSseDone);
}

TEST(MockModel, PacingBoundsReplyRate) {
  ModelProfile p = ModelProfile::null_profile();
  p.max_replies_per_second = 20;
  MockModelServer server("m", p);
  ASSERT_TRUE(server.start("127.0.0.1", 0));
  auto start = steady::now();
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&] {
      httplib::Client cli("127.0.0.1", server.port());
      for (int i = 0; i < 5; ++i) cli.Post("/v1/completions", "{}", "application/json");
    });
  }
  for (auto& t : workers) t.join();
  auto elapsed = std::chrono::duration<double>(steady::now() - start).count();
  EXPECT_EQ(server.replies(), 20u);
  // 20 replies spaced 50 ms apart take at least 0.95 s.
  EXPECT_GE(elapsed, 0.9);
}

TEST(MockModel, BindFailureReported) {
  MockModelServer a("m", ModelProfile::null_profile());
  ASSERT_TRUE(a.start("127.0.0.1", 0));
  MockModelServer b("m", ModelProfile::null_profile());
  EXPECT_FALSE(b.start("127.0.0.1", a.port()));
}

}  // namespace
}  // namespace hpcserve::sim

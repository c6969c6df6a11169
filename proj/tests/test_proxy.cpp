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

#include <json.hpp>

#include "hpcserve/files.hpp"
#include "hpcserve/interface.hpp"
#include "hpcserve/proxy.hpp"
#include "support.hpp"

namespace hpcserve::proxy {
namespace {

using nlohmann::json;
using hpcserve::testing::RecordingUpstream;
using hpcserve::testing::TempDir;

// Transport whose failures cost virtual time: a failed ping consumes the
// whole ping timeout, a refused connect is instant.
class VirtualTransport final : public channel::Transport {
 public:
  VirtualTransport(ManualClock& clock, Millis ping_timeout) : clock_(clock), timeout_(ping_timeout) {}

  bool connect() override {
    connects.push_back(clock_.now_ms());
    return up;
  }
  std::unique_ptr<channel::ChannelStream> open(const std::string& command, std::string) override {
    pings.push_back(clock_.now_ms());
    if (!up) {
      clock_.advance(timeout_);
      throw channel::ChannelError(channel::ChannelErrc::kTimeout, "timeout");
    }
    return std::make_unique<Fixed>(command == "PING" ? wire::format_pong({{"qwen", 1, 1}}) : "");
  }
  std::string name() const override { return "virtual"; }

  bool up = true;
  std::vector<Millis> connects;
  std::vector<Millis> pings;

 private:
  class Fixed final : public channel::ChannelStream {
   public:
    explicit Fixed(std::string data) : data_(std::move(data)) {}
    std::size_t read(std::span<char> buf, channel::Deadline) override {
      std::size_t n = std::min(buf.size(), data_.size() - pos_);
      data_.copy(buf.data(), n, pos_);
      pos_ += n;
      return n;
    }

   private:
    std::string data_;
    std::size_t pos_ = 0;
  };

  ManualClock& clock_;
  Millis timeout_;
};

// Drives the supervisor until `until`, recording status after each step.
void drive(ChannelSupervisor& sup, ManualClock& clock, Millis until) {
  while (sup.next_action() <= until) {
    clock.advance_to(sup.next_action());
    sup.step(clock.now_ms());
  }
  clock.advance_to(until);
}

TEST(Supervisor, PingsEveryIntervalWhileHealthy) {
  ManualClock clock(0);
  VirtualTransport t(clock, 4000);
  ChannelSupervisor sup(t, clock);
  drive(sup, clock, 12000);
  EXPECT_EQ(t.connects, std::vector<Millis>{0});
  EXPECT_EQ(t.pings, (std::vector<Millis>{0, 5000, 10000}));
  EXPECT_EQ(sup.state().status, ChannelStatus::kConnected);
  EXPECT_EQ(sup.state().service_summary.size(), 1u);
  EXPECT_EQ(sup.reconnects(), 0u);
}

TEST(Supervisor, SeveredChannelBacksOffExponentially) {
  ManualClock clock(0);
  VirtualTransport t(clock, 4000);
  ChannelSupervisor sup(t, clock);
  drive(sup, clock, 7000);
  t.up = false;
  drive(sup, clock, 9999);
  EXPECT_EQ(sup.state().status, ChannelStatus::kConnected);
  // The ping sent at 10 s times out at 14 s.
  drive(sup, clock, 14000);
  EXPECT_EQ(clock.now_ms(), 14000);
  EXPECT_EQ(sup.state().status, ChannelStatus::kReconnecting);
  drive(sup, clock, 40000);
  EXPECT_EQ(t.connects, (std::vector<Millis>{0, 15000, 17000, 21000, 29000, 37000}));
  EXPECT_EQ(sup.state().status, ChannelStatus::kDown);

  t.up = true;
  drive(sup, clock, 45000);
  EXPECT_EQ(t.connects.back(), 45000);
  EXPECT_EQ(sup.state().status, ChannelStatus::kConnected);
  EXPECT_EQ(sup.reconnects(), 1u);
  EXPECT_EQ(t.pings.back(), 45000);
}

TEST(Supervisor, DispatchFailureLeavesConnected) {
  ManualClock clock(0);
  VirtualTransport t(clock, 4000);
  ChannelSupervisor sup(t, clock);
  drive(sup, clock, 2000);
  sup.report_dispatch_failure();
  EXPECT_EQ(sup.state().status, ChannelStatus::kReconnecting);
  EXPECT_EQ(sup.next_action(), 3000);
  sup.report_dispatch_failure();
  EXPECT_EQ(sup.next_action(), 3000);
}

TEST(RateLimiter, SlidingWindow) {
  ManualClock clock(0);
  RateLimiter limiter(clock);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(limiter.allow("a", 3));
  EXPECT_FALSE(limiter.allow("a", 3));
  EXPECT_TRUE(limiter.allow("b", 3));
  clock.set(60001);
  EXPECT_TRUE(limiter.allow("a", 3));
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(limiter.allow("c", 0));
}

TEST(Metrics, Format) {
  MetricsSnapshot m;
  m.requests_total = 3;
  m.service_requests["qwen"] = 2;
  m.channel = ChannelStatus::kReconnecting;
  auto text = format_metrics(m);
  EXPECT_NE(text.find("requests_total 3\n"), std::string::npos);
  EXPECT_NE(text.find("service_requests_total{service=\"qwen\"} 2\n"), std::string::npos);
  EXPECT_NE(text.find("channel_status{state=\"reconnecting\"} 1\n"), std::string::npos);
  EXPECT_NE(text.find("channel_status{state=\"connected\"} 0\n"), std::string::npos);
  EXPECT_NE(text.find("last_pong_age_ms -1\n"), std::string::npos);
}

struct ProxyTest : ::testing::Test {
  TempDir dir;
  RecordingUpstream upstream;
  interface::InterfaceEnv env;
  channel::LoopbackTransport transport{[this](const std::string& c, const std::string& b, ByteSink& out) {
    StringSource in(b);
    interface::handle_invocation(c, in, out, env);
  }};
  std::unique_ptr<ChannelSupervisor> sup;
  std::unique_ptr<Proxy> proxy;

  void SetUp() override {
    env.table_path = dir.file("table");
    env.state_path = dir.file("state");
    env.load_dir = dir.file("load");
    env.clock = &SystemClock::instance();
    env.upstream = &upstream;
    RoutingTable({{"1", "qwen", "gpu01", 20001, InstanceState::kReady, 0}}).save(env.table_path);
    files::write_file_atomic(env.state_path, serialize_desired_state({{"qwen", 1, 0.0}}));

    ProxyOptions opts;
    opts.routes.models = {{"qwen-7b", "qwen"}};
    opts.routes.keys = {{"alice", "sk-alice", 5}, {"bob", "sk-bob", 0}};
    opts.access_log_path = dir.file("access.log");
    sup = std::make_unique<ChannelSupervisor>(transport, SystemClock::instance());
    sup->step(SystemClock::instance().now_ms());
    proxy = std::make_unique<Proxy>(opts, transport, *sup, SystemClock::instance());
    ASSERT_TRUE(proxy->start("127.0.0.1", 0, "127.0.0.1", 0));
  }
  void TearDown() override { proxy->stop(); }

  httplib::Result post(const std::string& key, const std::string& body,
                       const std::string& path = "/v1/chat/completions") {
    httplib::Client cli("127.0.0.1", proxy->ingress_port());
    httplib::Headers h;
    if (!key.empty()) h.emplace("Authorization", "Bearer " + key);
    return cli.Post(path, h, body, "application/json");
  }
};

TEST_F(ProxyTest, Authentication) {
  EXPECT_EQ(proxy->authenticate("Bearer sk-alice"), "alice");
  EXPECT_FALSE(proxy->authenticate("Bearer sk-alic"));
  EXPECT_FALSE(proxy->authenticate("sk-alice"));
  auto before = transport.invocations();
  EXPECT_EQ(post("", R"({"model":"qwen-7b"})")->status, 401);
  EXPECT_EQ(post("wrong", R"({"model":"qwen-7b"})")->status, 401);
  EXPECT_EQ(transport.invocations(), before);
}

TEST_F(ProxyTest, ForwardsChatCompletion) {
  auto res = post("sk-bob", R"({"model":"qwen-7b","messages":[]})");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "{}");
  auto calls = upstream.calls();
  ASSERT_EQ(calls.size(), 1u);
  EXPECT_EQ(calls[0].request.service, "qwen");
  EXPECT_EQ(calls[0].request.path, wire::Path::kChatCompletions);
  EXPECT_EQ(calls[0].body, R"({"model":"qwen-7b","messages":[]})");
  auto log = files::read_file(dir.file("access.log"));
  ASSERT_TRUE(log);
  EXPECT_NE(log->find(" bob qwen-7b 200\n"), std::string::npos);
  EXPECT_EQ(log->find("sk-bob"), std::string::npos);
  auto m = proxy->metrics();
  EXPECT_EQ(m.requests_total, 1u);
  EXPECT_EQ(m.service_requests["qwen"], 1u);
}

TEST_F(ProxyTest, RejectsBadRequests) {
  EXPECT_EQ(post("sk-bob", "not json")->status, 400);
  EXPECT_EQ(post("sk-bob", R"({"messages":[]})")->status, 400);
  EXPECT_EQ(post("sk-bob", R"({"model":"gpt-4"})")->status, 404);
  EXPECT_TRUE(upstream.calls().empty());
}

TEST_F(ProxyTest, RateLimitPerKey) {
  for (int i = 0; i < 5; ++i) EXPECT_EQ(post("sk-alice", R"({"model":"qwen-7b"})")->status, 200);
  EXPECT_EQ(post("sk-alice", R"({"model":"qwen-7b"})")->status, 429);
  EXPECT_EQ(post("sk-bob", R"({"model":"qwen-7b"})")->status, 200);
}

TEST_F(ProxyTest, SeveredChannelIs503AndTriggersReconnect) {
  transport.sever();
  auto res = post("sk-bob", R"({"model":"qwen-7b"})");
  EXPECT_EQ(res->status, 503);
  EXPECT_NE(sup->state().status, ChannelStatus::kConnected);
  EXPECT_EQ(post("sk-bob", R"({"model":"qwen-7b"})")->status, 503);
  transport.restore();
  sup->step(sup->next_action());
  EXPECT_EQ(sup->state().status, ChannelStatus::kConnected);
  EXPECT_EQ(post("sk-bob", R"({"model":"qwen-7b"})")->status, 200);
  EXPECT_EQ(sup->reconnects(), 1u);
}

TEST_F(ProxyTest, UpstreamFailureIs502) {
  upstream.refuse(true);
  EXPECT_EQ(post("sk-bob", R"({"model":"qwen-7b"})")->status, 502);
  EXPECT_EQ(proxy->metrics().requests_failed, 1u);
}

TEST_F(ProxyTest, ModelsListing) {
  httplib::Client cli("127.0.0.1", proxy->ingress_port());
  EXPECT_EQ(cli.Get("/v1/models")->status, 401);
  auto res = cli.Get("/v1/models", {{"Authorization", "Bearer sk-bob"}});
  ASSERT_EQ(res->status, 200);
  auto body = json::parse(res->body);
  EXPECT_TRUE(body["data"].empty());  // no keep-alive yet
  EXPECT_TRUE(body["last_pong_age_ms"].is_null());
  sup->step(sup->next_action());
  body = json::parse(proxy->models_json());
  ASSERT_EQ(body["data"].size(), 1u);
  EXPECT_EQ(body["data"][0]["id"], "qwen-7b");
  EXPECT_EQ(body["stale"], false);
  EXPECT_EQ(body["data"][0]["ready"], 1);
  EXPECT_EQ(body["data"][0]["desired"], 1);
}

TEST_F(ProxyTest, OperatorEndpoints) {
  httplib::Client cli("127.0.0.1", proxy->operator_port());
  auto metrics = cli.Get("/metrics");
  ASSERT_EQ(metrics->status, 200);
  EXPECT_NE(metrics->body.find("channel_status{state=\"connected\"} 1"), std::string::npos);
  EXPECT_EQ(cli.Get("/probe/channel")->status, 200);
  EXPECT_EQ(cli.Get("/probe/instance/qwen")->status, 200);
  EXPECT_EQ(upstream.calls().back().request.path, wire::Path::kHealth);
  EXPECT_EQ(cli.Get("/probe/instance/BAD")->status, 400);
  auto status = json::parse(cli.Get("/status")->body);
  EXPECT_EQ(status["channel"], "connected");
  httplib::Client ingress("127.0.0.1", proxy->ingress_port());
  EXPECT_EQ(ingress.Get("/metrics")->status, 404);
}

}  // namespace
}  // namespace hpcserve::proxy

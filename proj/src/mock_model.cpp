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

#include "hpcserve/mock_model.hpp"

#include <httplib.h>

#include <json.hpp>

#include "hpcserve/log.hpp"

namespace hpcserve::sim {
namespace {

using nlohmann::json;
using steady = std::chrono::steady_clock;

constexpr int kServerThreads = 96;

std::chrono::microseconds token_gap(const ModelProfile& profile) {
  if (profile.tokens_per_second <= 0.0) return std::chrono::microseconds(0);
  return std::chrono::microseconds(static_cast<std::int64_t>(1e6 / profile.tokens_per_second));
}

}  // namespace

std::vector<std::string> reply_tokens(int count) {
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 1; i <= count; ++i) tokens.push_back((i == 1 ? "" : " ") + std::to_string(i));
  return tokens;
}

std::string reply_text(int count) {
  std::string text;
  for (const auto& t : reply_tokens(count)) text += t;
  return text;
}

std::string sse_token_event(const std::string& model, const std::string& token) {
  json event = {{"object", "chat.completion.chunk"},
                {"model", model},
                {"choices", json::array({{{"index", 0}, {"delta", {{"content", token}}}}})}};
  return "data: " + event.dump() + "\n\n";
}

MockModelServer::MockModelServer(std::string model, ModelProfile profile, ReadyGate ready)
    : model_(std::move(model)), profile_(profile), ready_(std::move(ready)) {}

MockModelServer::~MockModelServer() { stop(); }

bool MockModelServer::acquire_slot() {
  std::unique_lock lock(slot_mutex_);
  if (profile_.max_concurrent <= 0) {
    ++active_;
    return true;
  }
  if (active_ >= profile_.max_concurrent) {
    if (waiting_ >= 10 * profile_.max_concurrent) return false;
    ++waiting_;
    slot_cv_.wait(lock, [&] { return stopping_ || active_ < profile_.max_concurrent; });
    --waiting_;
  }
  ++active_;
  return true;
}

void MockModelServer::release_slot() {
  {
    std::lock_guard lock(slot_mutex_);
    --active_;
  }
  slot_cv_.notify_one();
}

void MockModelServer::pace() {
  if (profile_.max_replies_per_second <= 0.0) return;
  auto spacing = std::chrono::microseconds(
      static_cast<std::int64_t>(1e6 / profile_.max_replies_per_second));
  steady::time_point slot;
  {
    std::lock_guard lock(pace_mutex_);
    auto now = steady::now();
    slot = std::max(now, next_reply_);
    next_reply_ = slot + spacing;
  }
  std::this_thread::sleep_until(slot);
}

bool MockModelServer::start(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  server_->new_task_queue = [] { return new httplib::ThreadPool(kServerThreads); };
  server_->set_tcp_nodelay(true);
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    bool ready = !ready_ || ready_();
    res.status = ready ? 200 : 503;
    res.set_content(ready ? "{\"status\":\"ok\"}" : "{\"status\":\"loading\"}", "application/json");
  });

  server_->Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    json body = {{"object", "list"}, {"data", json::array({{{"id", model_}, {"object", "model"}}})}};
    res.set_content(body.dump(), "application/json");
  });

  auto completion = [this](const httplib::Request& req, httplib::Response& res) {
    if (ready_ && !ready_()) {
      res.status = 503;
      res.set_content("{\"error\":\"model loading\"}", "application/json");
      return;
    }
    bool stream = false;
    auto parsed = json::parse(req.body, nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) stream = parsed.value("stream", false);

    if (!acquire_slot()) {
      rejected_.fetch_add(1);
      res.status = 429;
      res.set_content("{\"error\":\"queue full\"}", "application/json");
      return;
    }
    pace();
    auto started = steady::now();
    auto tokens = reply_tokens(profile_.tokens_per_reply);
    auto gap = token_gap(profile_);
    auto first_at = started + std::chrono::milliseconds(profile_.first_token_delay_ms);

    if (!stream) {
      auto done_at = first_at + gap * std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(tokens.size()) - 1);
      std::this_thread::sleep_until(done_at);
      json body = {{"object", "chat.completion"},
                   {"model", model_},
                   {"choices", json::array({{{"index", 0},
                                             {"message", {{"role", "assistant"},
                                                          {"content", reply_text(profile_.tokens_per_reply)}}},
                                             {"finish_reason", "stop"}}})}};
      res.set_content(body.dump(), "application/json");
      release_slot();
      replies_.fetch_add(1);
      return;
    }

    auto next = std::make_shared<std::size_t>(0);
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, tokens, gap, first_at, next](std::size_t, httplib::DataSink& sink) {
          std::size_t i = *next;
          if (i < tokens.size()) {
            std::this_thread::sleep_until(first_at + gap * static_cast<std::ptrdiff_t>(i));
            auto event = sse_token_event(model_, tokens[i]);
            if (!sink.write(event.data(), event.size())) return false;
            *next = i + 1;
            return true;
          }
          sink.write(kSseDone.data(), kSseDone.size());
          sink.done();
          return true;
        },
        [this](bool) {
          release_slot();
          replies_.fetch_add(1);
        });
  };
  server_->Post("/v1/chat/completions", completion);
  server_->Post("/v1/completions", completion);

  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ <= 0) return false;
  } else {
    if (!server_->bind_to_port(host, port)) {
      HPC_LOG_WARN("mock model " << model_ << " cannot bind " << host << ":" << port);
      return false;
    }
    port_ = port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return true;
}

void MockModelServer::stop() {
  {
    // Wake anything queued for a slot so handler threads can drain.
    std::lock_guard lock(slot_mutex_);
    stopping_ = true;
  }
  slot_cv_.notify_all();
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

}  // namespace hpcserve::sim

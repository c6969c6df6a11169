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

#include "hpcserve/proxy.hpp"

#include <httplib.h>

#include <fstream>
#include <json.hpp>

#include "hpcserve/log.hpp"

namespace hpcserve::proxy {

using json = nlohmann::json;

std::string_view to_string(ChannelStatus status) {
  switch (status) {
    case ChannelStatus::kConnected:
      return "connected";
    case ChannelStatus::kReconnecting:
      return "reconnecting";
    case ChannelStatus::kDown:
      return "down";
  }
  return "down";
}

// ---------------------------------------------------------------------------

ChannelSupervisor::ChannelSupervisor(channel::Transport& transport, Clock& clock,
                                     SupervisorOptions options)
    : transport_(transport), clock_(clock), options_(options), next_action_(clock.now_ms()) {}

ChannelSupervisor::~ChannelSupervisor() { stop(); }

void ChannelSupervisor::start() {
  std::lock_guard lock(mutex_);
  if (thread_.joinable()) return;
  stopping_ = false;
  thread_ = std::thread([this] { run(); });
}

void ChannelSupervisor::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void ChannelSupervisor::run() {
  std::unique_lock lock(mutex_);
  while (!stopping_) {
    Millis now = clock_.now_ms();
    if (now >= next_action_) {
      lock.unlock();
      step(now);
      lock.lock();
      continue;
    }
    wake_.wait_for(lock, std::chrono::milliseconds(next_action_ - now));
  }
}

bool ChannelSupervisor::ping(std::vector<wire::ServiceSummary>& summary) {
  try {
    auto stream = transport_.open(wire::encode_ping(), {});
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(options_.ping_timeout_ms);
    auto pong = wire::parse_pong(channel::read_all(*stream, deadline));
    if (!pong) return false;
    summary = std::move(*pong);
    return true;
  } catch (const std::exception& e) {
    HPC_LOG_INFO("keep-alive ping failed: " << e.what());
    return false;
  }
}

void ChannelSupervisor::fail_locked(Millis now) {
  state_.status = ChannelStatus::kReconnecting;
  ++state_.consecutive_failures;
  backoff_ms_ = options_.backoff_initial_ms;
  next_action_ = now + backoff_ms_;
}

void ChannelSupervisor::on_ping(bool ok, Millis sent_at, std::vector<wire::ServiceSummary> summary) {
  Millis now = clock_.now_ms();
  std::lock_guard lock(mutex_);
  if (ok) {
    state_.last_pong = now;
    state_.service_summary = std::move(summary);
    if (state_.status == ChannelStatus::kConnected) {
      state_.consecutive_failures = 0;
      next_action_ = sent_at + options_.ping_interval_ms;
    }
    return;
  }
  if (state_.status == ChannelStatus::kConnected) {
    HPC_LOG_WARN("channel lost; reconnecting");
    fail_locked(now);
  }
}

Millis ChannelSupervisor::step(Millis now) {
  ChannelStatus status;
  {
    std::lock_guard lock(mutex_);
    if (now < next_action_) return next_action_;
    status = state_.status;
    if (status != ChannelStatus::kConnected) state_.status = ChannelStatus::kReconnecting;
  }

  if (status == ChannelStatus::kConnected) {
    std::vector<wire::ServiceSummary> summary;
    bool ok = ping(summary);
    on_ping(ok, now, std::move(summary));
  } else {
    bool ok = transport_.connect();
    Millis after = clock_.now_ms();
    std::lock_guard lock(mutex_);
    if (ok) {
      if (ever_connected_) reconnects_.fetch_add(1);
      ever_connected_ = true;
      state_.status = ChannelStatus::kConnected;
      state_.consecutive_failures = 0;
      backoff_ms_ = 0;
      next_action_ = after;  // ping right away
      HPC_LOG_INFO("channel connected via " << transport_.name());
    } else {
      ++state_.consecutive_failures;
      state_.status = ChannelStatus::kDown;
      backoff_ms_ = backoff_ms_ == 0 ? options_.backoff_initial_ms
                                     : std::min(backoff_ms_ * 2, options_.backoff_cap_ms);
      next_action_ = after + backoff_ms_;
    }
  }
  std::lock_guard lock(mutex_);
  return next_action_;
}

void ChannelSupervisor::report_dispatch_failure() {
  {
    std::lock_guard lock(mutex_);
    if (state_.status != ChannelStatus::kConnected) return;
    HPC_LOG_WARN("dispatch failed; reconnecting");
    fail_locked(clock_.now_ms());
  }
  wake_.notify_all();
}

std::optional<std::vector<wire::ServiceSummary>> ChannelSupervisor::probe() {
  std::vector<wire::ServiceSummary> summary;
  if (!ping(summary)) return std::nullopt;
  return summary;
}

ChannelState ChannelSupervisor::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

bool ChannelSupervisor::connected() const {
  std::lock_guard lock(mutex_);
  return state_.status == ChannelStatus::kConnected;
}

Millis ChannelSupervisor::next_action() const {
  std::lock_guard lock(mutex_);
  return next_action_;
}

// ---------------------------------------------------------------------------

bool RateLimiter::allow(const std::string& key_id, int per_minute) {
  if (per_minute <= 0) return true;
  Millis now = clock_.now_ms();
  std::lock_guard lock(mutex_);
  auto& hits = hits_[key_id];
  while (!hits.empty() && hits.front() <= now - 60'000) hits.pop_front();
  if (hits.size() >= static_cast<std::size_t>(per_minute)) return false;
  hits.push_back(now);
  return true;
}

std::string format_metrics(const MetricsSnapshot& m) {
  std::string out;
  auto line = [&](const std::string& name, auto value) {
    out += name + " " + std::to_string(value) + "\n";
  };
  line("requests_total", m.requests_total);
  line("requests_failed", m.requests_failed);
  line("reconnects_total", m.reconnects_total);
  for (const auto& [service, n] : m.service_requests) {
    line("service_requests_total{service=\"" + service + "\"}", n);
  }
  line("in_flight_requests", m.in_flight);
  for (auto s : {ChannelStatus::kConnected, ChannelStatus::kReconnecting, ChannelStatus::kDown}) {
    line("channel_status{state=\"" + std::string(to_string(s)) + "\"}", s == m.channel ? 1 : 0);
  }
  line("last_pong_age_ms", m.last_pong_age_ms);
  return out;
}

namespace {

bool constant_time_equal(std::string_view a, std::string_view b) {
  std::size_t n = std::max(a.size(), b.size());
  unsigned diff = a.size() == b.size() ? 0u : 1u;
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char x = i < a.size() ? static_cast<unsigned char>(a[i]) : 0;
    unsigned char y = i < b.size() ? static_cast<unsigned char>(b[i]) : 0;
    diff |= static_cast<unsigned>(x ^ y);
  }
  return diff == 0;
}

std::string error_body(std::string_view message) {
  return json{{"error", {{"message", message}}}}.dump();
}

struct Counter {
  explicit Counter(std::atomic<std::int64_t>& n) : n_(n) { n_.fetch_add(1); }
  ~Counter() { n_.fetch_sub(1); }
  std::atomic<std::int64_t>& n_;
};

}  // namespace

class Proxy::Impl {
 public:
  Impl(ProxyOptions options, channel::Transport& transport, ChannelSupervisor& supervisor,
       Clock& clock)
      : options_(std::move(options)),
        transport_(transport),
        supervisor_(supervisor),
        clock_(clock),
        limiter_(clock) {
    if (!options_.access_log_path.empty()) {
      access_log_.open(options_.access_log_path, std::ios::app);
    }
  }

  ProxyOptions options_;
  channel::Transport& transport_;
  ChannelSupervisor& supervisor_;
  Clock& clock_;
  RateLimiter limiter_;

  httplib::Server ingress_;
  httplib::Server operator_;
  std::thread ingress_thread_;
  std::thread operator_thread_;

  std::atomic<std::uint64_t> requests_total_{0};
  std::atomic<std::uint64_t> requests_failed_{0};
  std::atomic<std::int64_t> in_flight_{0};
  mutable std::mutex mutex_;
  std::map<std::string, std::uint64_t> service_requests_;
  std::ofstream access_log_;

  std::optional<std::string> authenticate(const std::string& header) const {
    constexpr std::string_view kBearer = "Bearer ";
    if (header.size() <= kBearer.size() || header.compare(0, kBearer.size(), kBearer) != 0) {
      return std::nullopt;
    }
    std::string_view token = std::string_view(header).substr(kBearer.size());
    std::optional<std::string> found;
    for (const auto& key : options_.routes.keys) {
      if (constant_time_equal(token, key.secret) && !found) found = key.id;
    }
    return found;
  }

  const ApiKey* key_by_id(const std::string& id) const {
    for (const auto& key : options_.routes.keys) {
      if (key.id == id) return &key;
    }
    return nullptr;
  }

  void record(const std::string& key_id, const std::string& model, int status) {
    if (status >= 400) requests_failed_.fetch_add(1);
    std::lock_guard lock(mutex_);
    if (access_log_.is_open()) {
      access_log_ << clock_.now_ms() << ' ' << key_id << ' ' << model << ' ' << status << '\n';
      access_log_.flush();
    } else {
      HPC_LOG_INFO("access key=" << key_id << " model=" << model << " status=" << status);
    }
  }

  void reply(httplib::Response& res, int status, std::string_view message) {
    res.status = status;
    res.set_content(error_body(message), "application/json");
  }

  // Auth and rate limit. Returns the key id or fills res.
  std::optional<std::string> admit(const httplib::Request& req, httplib::Response& res) {
    requests_total_.fetch_add(1);
    auto key_id = authenticate(req.get_header_value("Authorization"));
    if (!key_id) {
      reply(res, 401, "invalid api key");
      record("-", "-", 401);
      return std::nullopt;
    }
    if (!limiter_.allow(*key_id, key_by_id(*key_id)->requests_per_minute)) {
      reply(res, 429, "rate limit exceeded");
      record(*key_id, "-", 429);
      return std::nullopt;
    }
    return key_id;
  }

  void serve_completion(const httplib::Request& req, httplib::Response& res, wire::Path path) {
    auto key_id = admit(req, res);
    if (!key_id) return;

    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("model") ||
        !body["model"].is_string()) {
      reply(res, 400, "request body must be a JSON object with a model field");
      record(*key_id, "-", 400);
      return;
    }
    auto model = body["model"].get<std::string>();
    auto route = options_.routes.models.find(model);
    if (route == options_.routes.models.end()) {
      reply(res, 404, "unknown model");
      record(*key_id, "-", 404);
      return;
    }
    bool stream = body.contains("stream") && body["stream"].is_boolean() && body["stream"].get<bool>();
    const std::string& service = route->second;
    {
      std::lock_guard lock(mutex_);
      ++service_requests_[service];
    }

    wire::WireRequest wreq{wire::kProtocolVersion, wire::Method::kPost, service, path,
                           req.body.size(), stream};
    int status = dispatch(wreq, req.body, res);
    record(*key_id, model, status);
  }

  // Returns the status handed to the client (0 when a stream aborts later).
  int dispatch(const wire::WireRequest& wreq, const std::string& body, httplib::Response& res) {
    if (!supervisor_.connected()) {
      reply(res, 503, "channel unavailable");
      return 503;
    }
    auto in_flight = std::make_shared<Counter>(in_flight_);
    auto encoded = wire::encode_request(wreq, body);
    std::unique_ptr<channel::ChannelStream> stream;
    try {
      stream = transport_.open(encoded.command_line, std::move(encoded.body));
    } catch (const channel::ChannelError& e) {
      supervisor_.report_dispatch_failure();
      reply(res, 503, "channel unavailable");
      return 503;
    }
    auto reader = std::make_shared<channel::ReplyReader>(std::move(stream));
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(options_.request_timeout_ms);

    int status = 0;
    std::string content_type = "application/json";
    try {
      for (;;) {
        auto event = reader->next(deadline);
        if (!event) throw wire::FrameError(wire::FrameErrc::kTruncatedStream, "reply ended early");
        if (auto* s = std::get_if<wire::ResponseDecoder::Status>(&*event)) {
          status = s->code;
        } else if (auto* h = std::get_if<wire::ResponseDecoder::Header>(&*event)) {
          if (h->name == wire::kContentTypeHeader) content_type = h->value;
        } else if (auto* e = std::get_if<wire::ResponseDecoder::Error>(&*event)) {
          reply(res, 502, "upstream error " + std::to_string(e->frame.code) + ": " + e->frame.reason);
          return 502;
        } else if (std::holds_alternative<wire::ResponseDecoder::BodyStart>(*event)) {
          break;
        }
      }
    } catch (const std::exception& e) {
      HPC_LOG_WARN("reply failed before body: " << e.what());
      reply(res, 502, "channel error");
      return 502;
    }

    if (!wreq.stream) {
      std::string content;
      try {
        for (;;) {
          auto event = reader->next(deadline);
          if (!event || std::holds_alternative<wire::ResponseDecoder::End>(*event)) break;
          if (auto* c = std::get_if<wire::ResponseDecoder::Chunk>(&*event)) content += c->octets;
        }
      } catch (const std::exception& e) {
        HPC_LOG_WARN("reply failed mid-body: " << e.what());
        reply(res, 502, "channel error");
        return 502;
      }
      res.status = status;
      res.set_content(std::move(content), content_type);
      return status;
    }

    res.status = status;
    res.set_chunked_content_provider(
        content_type, [this, reader, deadline, in_flight](std::size_t, httplib::DataSink& sink) {
          try {
            for (;;) {
              auto event = reader->next(deadline);
              if (!event || std::holds_alternative<wire::ResponseDecoder::End>(*event)) {
                sink.done();
                return true;
              }
              if (auto* c = std::get_if<wire::ResponseDecoder::Chunk>(&*event)) {
                return sink.write(c->octets.data(), c->octets.size());
              }
            }
          } catch (const std::exception& e) {
            HPC_LOG_WARN("stream aborted: " << e.what());
            requests_failed_.fetch_add(1);
            return false;
          }
        });
    return status;
  }

  void serve_models(const httplib::Request& req, httplib::Response& res) {
    auto key_id = admit(req, res);
    if (!key_id) return;
    res.status = 200;
    res.set_content(models_json(), "application/json");
    record(*key_id, "-", 200);
  }

  std::string models_json() const {
    auto state = supervisor_.state();
    json data = json::array();
    for (const auto& s : state.service_summary) {
      bool named = false;
      for (const auto& [model, service] : options_.routes.models) {
        if (service != s.service) continue;
        named = true;
        data.push_back({{"id", model}, {"object", "model"}, {"owned_by", "hpcserve"},
                        {"service", s.service}, {"ready", s.ready}, {"desired", s.desired}});
      }
      if (!named) {
        data.push_back({{"id", s.service}, {"object", "model"}, {"owned_by", "hpcserve"},
                        {"service", s.service}, {"ready", s.ready}, {"desired", s.desired}});
      }
    }
    json out{{"object", "list"}, {"data", data}};
    if (state.last_pong >= 0) {
      Millis age = clock_.now_ms() - state.last_pong;
      out["last_pong_age_ms"] = age;
      out["stale"] = age > 60'000;
    } else {
      out["last_pong_age_ms"] = nullptr;
      out["stale"] = false;
    }
    return out.dump();
  }

  MetricsSnapshot metrics() const {
    MetricsSnapshot m;
    m.requests_total = requests_total_.load();
    m.requests_failed = requests_failed_.load();
    m.reconnects_total = supervisor_.reconnects();
    {
      std::lock_guard lock(mutex_);
      m.service_requests = service_requests_;
    }
    m.in_flight = in_flight_.load();
    auto state = supervisor_.state();
    m.channel = state.status;
    m.last_pong_age_ms = state.last_pong < 0 ? -1 : clock_.now_ms() - state.last_pong;
    return m;
  }

  std::string status_json() const {
    auto state = supervisor_.state();
    json services = json::array();
    for (const auto& s : state.service_summary) {
      services.push_back({{"service", s.service}, {"ready", s.ready}, {"desired", s.desired}});
    }
    json out{{"channel", std::string(to_string(state.status))},
             {"consecutive_failures", state.consecutive_failures},
             {"services", services},
             {"in_flight", in_flight_.load()}};
    if (state.last_pong >= 0) {
      out["last_pong_age_ms"] = clock_.now_ms() - state.last_pong;
    } else {
      out["last_pong_age_ms"] = nullptr;
    }
    return out.dump();
  }

  void probe_instance(const std::string& service, httplib::Response& res) {
    if (!wire::is_valid_service_name(service)) {
      reply(res, 400, "invalid service name");
      return;
    }
    try {
      wire::WireRequest wreq{wire::kProtocolVersion, wire::Method::kGet, service, wire::Path::kHealth,
                             0, false};
      auto stream = transport_.open(wire::encode_request(wreq, {}).command_line, {});
      auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
      auto parsed = wire::parse_response(channel::read_all(*stream, deadline));
      if (auto* r = std::get_if<wire::WireResponse>(&parsed)) {
        res.status = r->status == 200 ? 200 : 502;
        res.set_content(json{{"service", service}, {"status", r->status}}.dump(), "application/json");
      } else {
        const auto& e = std::get<wire::ErrorFrame>(parsed);
        reply(res, 502, "upstream error " + std::to_string(e.code) + ": " + e.reason);
      }
    } catch (const std::exception& e) {
      reply(res, 503, "channel unavailable");
    }
  }

  void install_routes() {
    auto pool = [n = options_.worker_threads] {
      return new httplib::ThreadPool(static_cast<std::size_t>(n));
    };
    ingress_.new_task_queue = pool;
    ingress_.set_payload_max_length(wire::kMaxBodyLength);
    const auto& prefix = options_.routes.url_prefix;
    ingress_.Post(prefix + "/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      serve_completion(req, res, wire::Path::kChatCompletions);
    });
    ingress_.Post(prefix + "/completions", [this](const httplib::Request& req, httplib::Response& res) {
      serve_completion(req, res, wire::Path::kCompletions);
    });
    ingress_.Get(prefix + "/models", [this](const httplib::Request& req, httplib::Response& res) {
      serve_models(req, res);
    });

    operator_.new_task_queue = [] { return new httplib::ThreadPool(4); };
    operator_.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(format_metrics(metrics()), "text/plain; version=0.0.4");
    });
    operator_.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(status_json(), "application/json");
    });
    operator_.Get("/probe/channel", [this](const httplib::Request&, httplib::Response& res) {
      auto pong = supervisor_.probe();
      if (!pong) {
        reply(res, 503, "channel unavailable");
        return;
      }
      res.set_content(json{{"services", pong->size()}}.dump(), "application/json");
    });
    operator_.Get(R"(/probe/instance/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      probe_instance(req.matches[1], res);
    });
  }
};

Proxy::Proxy(ProxyOptions options, channel::Transport& transport, ChannelSupervisor& supervisor,
             Clock& clock)
    : impl_(std::make_unique<Impl>(std::move(options), transport, supervisor, clock)) {
  impl_->install_routes();
}

Proxy::~Proxy() { stop(); }

namespace {

int bind(httplib::Server& server, const std::string& host, int port) {
  // httplib defaults to SO_REUSEPORT, which lets a second process share the port.
  server.set_tcp_nodelay(true);
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  if (port == 0) return server.bind_to_any_port(host);
  return server.bind_to_port(host, port) ? port : -1;
}

}  // namespace

bool Proxy::start(const std::string& host, int ingress_port, const std::string& operator_host,
                  int operator_port) {
  ingress_port_ = bind(impl_->ingress_, host, ingress_port);
  if (ingress_port_ <= 0) return false;
  operator_port_ = bind(impl_->operator_, operator_host, operator_port);
  if (operator_port_ <= 0) {
    impl_->ingress_.stop();
    return false;
  }
  impl_->ingress_thread_ = std::thread([this] { impl_->ingress_.listen_after_bind(); });
  impl_->operator_thread_ = std::thread([this] { impl_->operator_.listen_after_bind(); });
  impl_->ingress_.wait_until_ready();
  impl_->operator_.wait_until_ready();
  return true;
}

void Proxy::stop() {
  if (!impl_) return;
  impl_->ingress_.stop();
  impl_->operator_.stop();
  if (impl_->ingress_thread_.joinable()) impl_->ingress_thread_.join();
  if (impl_->operator_thread_.joinable()) impl_->operator_thread_.join();
}

MetricsSnapshot Proxy::metrics() const { return impl_->metrics(); }
std::string Proxy::models_json() const { return impl_->models_json(); }
std::string Proxy::status_json() const { return impl_->status_json(); }
std::optional<std::string> Proxy::authenticate(const std::string& authorization) const {
  return impl_->authenticate(authorization);
}

}  // namespace hpcserve::proxy

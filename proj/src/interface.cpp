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

#include "hpcserve/interface.hpp"

#include <httplib.h>

#include <algorithm>
#include <set>

#include "hpcserve/files.hpp"
#include "hpcserve/log.hpp"
#include "hpcserve/process.hpp"
#include "hpcserve/workload.hpp"

namespace hpcserve::interface {
namespace {

bool write_error(ByteSink& out, int code, std::string_view reason) {
  return out.write(wire::frame_error(code, reason));
}

bool read_body(ByteSource& source, std::uint64_t length, std::string& body) {
  body.resize(static_cast<std::size_t>(length));
  std::size_t got = 0;
  while (got < body.size()) {
    std::size_t n = source.read(std::span<char>(body.data() + got, body.size() - got));
    if (n == 0) return false;
    got += n;
  }
  return true;
}

// Appends +1 on construction and -1 on every exit path.
class LoadGuard {
 public:
  LoadGuard(const InterfaceEnv& env, std::string service) : env_(env), service_(std::move(service)) {
    append(+1);
  }
  ~LoadGuard() { append(-1); }
  LoadGuard(const LoadGuard&) = delete;
  LoadGuard& operator=(const LoadGuard&) = delete;

 private:
  void append(int delta) {
    try {
      append_load_event(env_.load_dir, service_, LoadEvent{env_.clock->now_ms(), delta});
    } catch (const files::IoError& e) {
      HPC_LOG_WARN("load log append failed: " << e.what());
    }
  }

  const InterfaceEnv& env_;
  std::string service_;
};

std::uint64_t invocation_seed(const InterfaceEnv& env) {
  if (env.next_seed) return env.next_seed();
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

int handle_ping(ByteSink& out, const InterfaceEnv& env) {
  if (env.trigger != nullptr) {
    try {
      env.trigger->trigger();
    } catch (const std::exception& e) {
      HPC_LOG_WARN("scheduler trigger failed: " << e.what());
    }
  }
  RoutingTable table;
  std::vector<ServiceStatus> desired;
  try {
    table = RoutingTable::load(env.table_path);
    desired = load_desired_state(env.state_path);
  } catch (const std::exception& e) {
    HPC_LOG_WARN("pong without service summary: " << e.what());
  }
  out.write(wire::format_pong(service_summary(table, desired)));
  return 0;
}

int handle_request(const wire::WireRequest& req, ByteSource& body_source, ByteSink& out,
                   const InterfaceEnv& env) {
  std::string body;
  if (!read_body(body_source, req.content_length, body)) {
    write_error(out, 400, "short body");
    return 0;
  }

  RoutingTable table;
  std::vector<ServiceStatus> desired;
  try {
    table = RoutingTable::load(env.table_path);
    desired = load_desired_state(env.state_path);
  } catch (const std::exception& e) {
    HPC_LOG_ERROR("routing table unreadable: " << e.what());
    write_error(out, 502, "routing table unreadable");
    return 0;
  }

  bool known = std::any_of(desired.begin(), desired.end(),
                           [&](const ServiceStatus& s) { return s.service == req.service; }) ||
               std::any_of(table.entries().begin(), table.entries().end(),
                           [&](const RouteEntry& e) { return e.service == req.service; });
  if (!known) {
    write_error(out, 404, "no ready instance");
    return 0;
  }

  LoadGuard load(env, req.service);
  std::mt19937_64 rng(invocation_seed(env));
  RouteEntry target;
  try {
    target = pick_instance(table, req.service, rng);
  } catch (const NoReadyInstance&) {
    write_error(out, 404, "no ready instance");
    return 0;
  }

  auto outcome = env.upstream->forward(resolve_node(env.node_addresses, target.node), target.port,
                                       req, body, out);
  if (outcome == Upstream::Outcome::kConnectFailed) {
    HPC_LOG_WARN("upstream " << target.node << ":" << target.port << " refused; retrying");
    RoutingTable others;
    for (const auto& e : table.entries()) {
      if (e.job_id != target.job_id) others.mutable_entries().push_back(e);
    }
    try {
      auto second = pick_instance(others, req.service, rng);
      outcome = env.upstream->forward(resolve_node(env.node_addresses, second.node), second.port,
                                      req, body, out);
    } catch (const NoReadyInstance&) {
    }
    if (outcome == Upstream::Outcome::kConnectFailed) {
      write_error(out, 502, "upstream connection failed");
    }
  }
  return 0;
}

}  // namespace

void CommandTrigger::trigger() { process::spawn_detached(argv_); }

RouteEntry pick_instance(const RoutingTable& table, std::string_view service, std::mt19937_64& rng) {
  auto eligible = table.routable(service);
  if (eligible.empty()) throw NoReadyInstance("no ready instance of " + std::string(service));
  std::uniform_int_distribution<std::size_t> dist(0, eligible.size() - 1);
  return eligible[dist(rng)];
}

std::vector<wire::ServiceSummary> service_summary(const RoutingTable& table,
                                                  const std::vector<ServiceStatus>& desired) {
  std::vector<wire::ServiceSummary> out;
  std::set<std::string> seen;
  auto ready_count = [&](const std::string& service) {
    return static_cast<int>(table.routable(service).size());
  };
  for (const auto& s : desired) {
    if (!seen.insert(s.service).second) continue;
    out.push_back({s.service, ready_count(s.service), s.desired});
  }
  for (const auto& e : table.entries()) {
    if (!seen.insert(e.service).second) continue;
    out.push_back({e.service, ready_count(e.service), 0});
  }
  return out;
}

int handle_invocation(std::string_view command, ByteSource& body, ByteSink& out,
                      const InterfaceEnv& env) {
  auto parsed = wire::parse_command(command);
  if (auto* err = std::get_if<wire::ParseError>(&parsed)) {
    // The command itself is never logged.
    HPC_LOG_WARN("rejected command (" << wire::to_string(err->code) << ": " << err->detail
                                      << ", " << command.size() << " octets)");
    write_error(out, 400, wire::to_string(err->code));
    return 0;
  }
  if (std::holds_alternative<wire::KeepAlivePing>(parsed)) return handle_ping(out, env);
  return handle_request(std::get<wire::WireRequest>(parsed), body, out, env);
}

Upstream::Outcome HttpUpstream::forward(const std::string& host, int port,
                                        const wire::WireRequest& req, const std::string& body,
                                        ByteSink& out) {
  httplib::Client client(host, port);
  client.set_connection_timeout(connect_timeout_ms_ / 1000, (connect_timeout_ms_ % 1000) * 1000);
  client.set_read_timeout(read_timeout_s_, 0);
  client.set_keep_alive(false);
  client.set_tcp_nodelay(true);

  httplib::Request request;
  request.method = std::string(wire::to_string(req.method));
  request.path = std::string(wire::to_string(req.path));
  if (req.method == wire::Method::kPost) {
    request.body = body;
    request.set_header("Content-Type", "application/json");
  }

  bool started = false;
  bool sink_open = true;
  request.response_handler = [&](const httplib::Response& res) {
    started = true;
    std::string head = wire::frame_status(res.status);
    if (res.has_header("Content-Type")) {
      auto value = res.get_header_value("Content-Type");
      bool printable = std::all_of(value.begin(), value.end(), [](char c) {
        return static_cast<unsigned char>(c) >= 0x20 && static_cast<unsigned char>(c) < 0x7f;
      });
      if (printable) head += wire::frame_header(wire::kContentTypeHeader, value);
    }
    head += wire::frame_body_start();
    sink_open = out.write(head);
    return sink_open;
  };
  request.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
    std::string_view rest(data, len);
    while (sink_open && !rest.empty()) {
      auto piece = rest.substr(0, wire::kMaxChunkLength);
      sink_open = out.write(wire::frame_chunk(piece));
      rest.remove_prefix(piece.size());
    }
    return sink_open;
  };

  auto result = client.send(request);
  if (!result) {
    if (!started) return Outcome::kConnectFailed;
    return Outcome::kAborted;
  }
  out.write(wire::frame_end());
  return Outcome::kCompleted;
}

}  // namespace hpcserve::interface

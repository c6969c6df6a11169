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

#include "hpcserve/wire.hpp"

#include <algorithm>
#include <charconv>

namespace hpcserve::wire {
namespace {

constexpr std::size_t kMaxControlLine = 8192;

bool is_service_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
}

// Printable ASCII plus space, no control characters.
bool is_text(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x20 && u < 0x7f;
  });
}

// Canonical unsigned decimal: digits only, no sign, no leading zeros.
// Returns nullopt on syntax error; saturates values that do not fit.
std::optional<std::uint64_t> parse_decimal(std::string_view token) {
  if (token.empty()) return std::nullopt;
  if (!std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  if (token.size() > 1 && token[0] == '0') return std::nullopt;
  if (token.size() > 19) return UINT64_MAX;
  std::uint64_t value = 0;
  std::from_chars(token.data(), token.data() + token.size(), value);
  return value;
}

std::vector<std::string_view> split_single_space(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(' ', start);
    if (pos == std::string_view::npos) {
      tokens.push_back(line.substr(start));
      break;
    }
    tokens.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return tokens;
}

ParseError malformed(std::string detail) {
  return ParseError{ParseErrc::kMalformedCommand, std::move(detail)};
}

[[noreturn]] void framing(const std::string& what) {
  throw FrameError(FrameErrc::kFramingError, what);
}

int parse_status_code(std::string_view token) {
  auto value = parse_decimal(token);
  if (!value || *value < 100 || *value > 599) framing("bad status code");
  return static_cast<int>(*value);
}

}  // namespace

std::string_view to_string(Method method) {
  return method == Method::kGet ? "GET" : "POST";
}

std::string_view to_string(Path path) {
  switch (path) {
    case Path::kChatCompletions:
      return "/v1/chat/completions";
    case Path::kCompletions:
      return "/v1/completions";
    case Path::kModels:
      return "/v1/models";
    case Path::kHealth:
      return "/health";
  }
  return "/health";
}

std::optional<Method> method_from_string(std::string_view token) {
  if (token == "GET") return Method::kGet;
  if (token == "POST") return Method::kPost;
  return std::nullopt;
}

std::optional<Path> path_from_string(std::string_view token) {
  for (Path p : kAllPaths) {
    if (to_string(p) == token) return p;
  }
  return std::nullopt;
}

bool is_valid_service_name(std::string_view name) {
  return !name.empty() && name.size() <= kMaxServiceLength &&
         std::all_of(name.begin(), name.end(), is_service_char);
}

std::string validate(const WireRequest& req) {
  if (req.version != kProtocolVersion) return "unsupported version";
  if (!is_valid_service_name(req.service)) return "service name fails [a-z0-9-]{1,64}";
  if (!path_from_string(to_string(req.path))) return "path not allowed";
  if (req.content_length > kMaxBodyLength) return "content length over cap";
  if (req.method == Method::kGet && req.content_length != 0) return "GET with body";
  return {};
}

EncodedRequest encode_request(const WireRequest& req, std::string_view body) {
  if (auto err = validate(req); !err.empty()) throw InvalidRequest(err);
  if (body.size() != req.content_length) {
    throw InvalidRequest("body size differs from content length");
  }
  std::string line = "REQ ";
  line += std::to_string(req.version);
  line += ' ';
  line += to_string(req.method);
  line += ' ';
  line += req.service;
  line += ' ';
  line += to_string(req.path);
  line += ' ';
  line += std::to_string(req.content_length);
  line += req.stream ? " S" : " N";
  return EncodedRequest{std::move(line), std::string(body)};
}

std::string encode_ping() { return std::string(kPingCommand); }

std::string_view to_string(ParseErrc errc) {
  switch (errc) {
    case ParseErrc::kMalformedCommand:
      return "MalformedCommand";
    case ParseErrc::kPathNotAllowed:
      return "PathNotAllowed";
    case ParseErrc::kBodyTooLarge:
      return "BodyTooLarge";
  }
  return "MalformedCommand";
}

ParsedCommand parse_command(std::string_view line) {
  if (line.size() > kMaxCommandLength) return malformed("command too long");
  if (line == kPingCommand) return KeepAlivePing{};

  auto tokens = split_single_space(line);
  if (tokens.size() != 7) return malformed("wrong arity");
  if (tokens[0] != "REQ") return malformed("unknown verb");

  WireRequest req;
  auto version = parse_decimal(tokens[1]);
  if (!version || *version != static_cast<std::uint64_t>(kProtocolVersion)) {
    return malformed("bad version");
  }
  auto method = method_from_string(tokens[2]);
  if (!method) return malformed("bad method");
  req.method = *method;
  if (!is_valid_service_name(tokens[3])) return malformed("bad service token");
  req.service = std::string(tokens[3]);

  auto path = path_from_string(tokens[4]);
  if (!path) return ParseError{ParseErrc::kPathNotAllowed, "path not in allowlist"};
  req.path = *path;

  auto length = parse_decimal(tokens[5]);
  if (!length) return malformed("bad content length");
  if (*length > kMaxBodyLength) {
    return ParseError{ParseErrc::kBodyTooLarge, "content length over cap"};
  }
  req.content_length = *length;
  if (req.method == Method::kGet && req.content_length != 0) {
    return malformed("GET with body");
  }

  if (tokens[6] == "S") {
    req.stream = true;
  } else if (tokens[6] == "N") {
    req.stream = false;
  } else {
    return malformed("bad stream flag");
  }
  return req;
}

bool is_allowed_header(std::string_view lowercase_name) {
  return lowercase_name == kContentTypeHeader;
}

std::string frame_status(int status) { return "STATUS " + std::to_string(status) + "\n"; }

std::string frame_header(std::string_view name, std::string_view value) {
  std::string out = "HDR ";
  out += name;
  out += ": ";
  out += value;
  out += '\n';
  return out;
}

std::string frame_body_start() { return "BODY\n"; }

std::string frame_chunk(std::string_view octets) {
  std::string out = "CHUNK " + std::to_string(octets.size()) + "\n";
  out += octets;
  return out;
}

std::string frame_end() { return "END\n"; }

std::string frame_error(int code, std::string_view reason) {
  return "ERR " + std::to_string(code) + " " + std::string(reason) + "\n";
}

std::string frame_response(const WireResponse& resp) {
  if (resp.status < 100 || resp.status > 599) throw InvalidRequest("status out of range");
  std::string out = frame_status(resp.status);
  for (const auto& [name, value] : resp.headers) {
    if (!is_allowed_header(name)) throw InvalidRequest("header not in allowlist");
    if (!is_text(value)) throw InvalidRequest("header value not printable");
    out += frame_header(name, value);
  }
  out += frame_body_start();
  for (const auto& chunk : resp.chunks) {
    if (chunk.empty() || chunk.size() > kMaxChunkLength) {
      throw InvalidRequest("chunk length out of range");
    }
    out += frame_chunk(chunk);
  }
  out += frame_end();
  return out;
}

void ResponseDecoder::feed(std::string_view bytes) {
  std::size_t i = 0;
  while (i < bytes.size()) {
    if (phase_ == Phase::kDone) framing("data after end of response");
    if (phase_ == Phase::kPayload) {
      std::size_t take = std::min(payload_remaining_, bytes.size() - i);
      payload_.append(bytes.substr(i, take));
      payload_remaining_ -= take;
      i += take;
      if (payload_remaining_ == 0) {
        pending_.emplace_back(Chunk{std::move(payload_)});
        payload_.clear();
        phase_ = Phase::kChunks;
      }
      continue;
    }
    auto nl = bytes.find('\n', i);
    std::size_t end = nl == std::string_view::npos ? bytes.size() : nl;
    line_.append(bytes.substr(i, end - i));
    if (line_.size() > kMaxControlLine) framing("control line too long");
    if (nl == std::string_view::npos) break;
    i = nl + 1;
    std::string line = std::move(line_);
    line_.clear();
    handle_line(line);
  }
}

void ResponseDecoder::handle_line(std::string_view line) {
  auto starts = [&](std::string_view prefix) { return line.substr(0, prefix.size()) == prefix; };
  switch (phase_) {
    case Phase::kStart: {
      if (starts("STATUS ")) {
        pending_.emplace_back(Status{parse_status_code(line.substr(7))});
        phase_ = Phase::kHeaders;
        return;
      }
      if (starts("ERR ")) {
        auto rest = line.substr(4);
        auto sp = rest.find(' ');
        if (sp == std::string_view::npos) framing("ERR without reason");
        int code = parse_status_code(rest.substr(0, sp));
        auto reason = rest.substr(sp + 1);
        if (!is_text(reason)) framing("ERR reason not printable");
        pending_.emplace_back(Error{ErrorFrame{code, std::string(reason)}});
        phase_ = Phase::kDone;
        return;
      }
      framing("expected STATUS or ERR");
    }
    case Phase::kHeaders: {
      if (line == "BODY") {
        pending_.emplace_back(BodyStart{});
        phase_ = Phase::kChunks;
        return;
      }
      if (starts("HDR ")) {
        auto rest = line.substr(4);
        auto sep = rest.find(": ");
        if (sep == std::string_view::npos) framing("HDR without separator");
        auto name = rest.substr(0, sep);
        auto value = rest.substr(sep + 2);
        if (!is_allowed_header(name)) framing("header not in allowlist");
        if (!is_text(value)) framing("header value not printable");
        pending_.emplace_back(Header{std::string(name), std::string(value)});
        return;
      }
      framing("expected HDR or BODY");
    }
    case Phase::kChunks: {
      if (line == "END") {
        pending_.emplace_back(End{});
        phase_ = Phase::kDone;
        return;
      }
      if (starts("CHUNK ")) {
        auto len = parse_decimal(line.substr(6));
        if (!len || *len == 0 || *len > kMaxChunkLength) framing("bad chunk length");
        payload_remaining_ = static_cast<std::size_t>(*len);
        payload_.reserve(payload_remaining_);
        phase_ = Phase::kPayload;
        return;
      }
      framing("expected CHUNK or END");
    }
    case Phase::kPayload:
    case Phase::kDone:
      break;
  }
  framing("unexpected control line");
}

void ResponseDecoder::finish() const {
  if (phase_ != Phase::kDone) {
    throw FrameError(FrameErrc::kTruncatedStream, "stream ended before END or ERR");
  }
}

std::optional<ResponseDecoder::Event> ResponseDecoder::next() {
  if (pending_head_ >= pending_.size()) {
    pending_.clear();
    pending_head_ = 0;
    return std::nullopt;
  }
  return std::move(pending_[pending_head_++]);
}

ParsedResponse parse_response(std::string_view stream) {
  ResponseDecoder decoder;
  decoder.feed(stream);
  decoder.finish();
  WireResponse resp;
  while (auto event = decoder.next()) {
    if (auto* s = std::get_if<ResponseDecoder::Status>(&*event)) {
      resp.status = s->code;
    } else if (auto* h = std::get_if<ResponseDecoder::Header>(&*event)) {
      resp.headers.emplace_back(std::move(h->name), std::move(h->value));
    } else if (auto* c = std::get_if<ResponseDecoder::Chunk>(&*event)) {
      resp.chunks.push_back(std::move(c->octets));
    } else if (auto* e = std::get_if<ResponseDecoder::Error>(&*event)) {
      return e->frame;
    }
  }
  return resp;
}

std::string format_pong(const std::vector<ServiceSummary>& services) {
  std::string out = "PONG\n";
  for (const auto& s : services) {
    out += "SVC " + s.service + " " + std::to_string(s.ready) + " " + std::to_string(s.desired) + "\n";
  }
  out += "END\n";
  return out;
}

std::optional<std::vector<ServiceSummary>> parse_pong(std::string_view text) {
  if (text.substr(0, 5) != "PONG\n") return std::nullopt;
  text.remove_prefix(5);
  std::vector<ServiceSummary> out;
  while (true) {
    auto nl = text.find('\n');
    if (nl == std::string_view::npos) return std::nullopt;
    auto line = text.substr(0, nl);
    text.remove_prefix(nl + 1);
    if (line == "END") return text.empty() ? std::optional(out) : std::nullopt;
    auto tokens = split_single_space(line);
    if (tokens.size() != 4 || tokens[0] != "SVC" || !is_valid_service_name(tokens[1])) {
      return std::nullopt;
    }
    auto ready = parse_decimal(tokens[2]);
    auto desired = parse_decimal(tokens[3]);
    if (!ready || !desired || *ready > 1'000'000 || *desired > 1'000'000) return std::nullopt;
    out.push_back({std::string(tokens[1]), static_cast<int>(*ready), static_cast<int>(*desired)});
  }
}

}  // namespace hpcserve::wire

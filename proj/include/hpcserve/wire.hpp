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

#pragma once

// Command-channel protocol.
//
// A request crosses the trust boundary as one command line
//
//   REQ <version> <method> <service> <path> <content_length> <S|N>
//
// plus exactly content_length body octets on the channel's input stream.
// The reply comes back framed as
//
//   STATUS <code>\n  (HDR <name>: <value>\n)*  BODY\n  (CHUNK <len>\n <octets>)*  END\n
//
// or as a single `ERR <code> <reason>\n` line. The keep-alive command is the
// literal `PING`. Everything here is a pure codec with no side effects.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace hpcserve::wire {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxCommandLength = 4096;
inline constexpr std::uint64_t kMaxBodyLength = 10'485'760;
inline constexpr std::size_t kMaxChunkLength = 65'536;
inline constexpr std::size_t kMaxServiceLength = 64;
inline constexpr std::string_view kPingCommand = "PING";

enum class Method { kGet, kPost };

enum class Path { kChatCompletions, kCompletions, kModels, kHealth };

inline constexpr std::array<Path, 4> kAllPaths = {
    Path::kChatCompletions, Path::kCompletions, Path::kModels, Path::kHealth};

std::string_view to_string(Method method);
std::string_view to_string(Path path);
std::optional<Method> method_from_string(std::string_view token);
// Exact match against the closed allowlist; nothing else maps to a Path.
std::optional<Path> path_from_string(std::string_view token);

// True iff name matches [a-z0-9-]{1,64}.
bool is_valid_service_name(std::string_view name);

struct WireRequest {
  int version = kProtocolVersion;
  Method method = Method::kGet;
  std::string service;
  Path path = Path::kHealth;
  std::uint64_t content_length = 0;
  bool stream = false;

  friend bool operator==(const WireRequest&, const WireRequest&) = default;
};

struct KeepAlivePing {
  friend bool operator==(const KeepAlivePing&, const KeepAlivePing&) = default;
};

// Thrown by the encoders when handed a value that violates its invariants.
class InvalidRequest : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Returns an empty string when req is valid, otherwise a description of the
// first violated invariant.
std::string validate(const WireRequest& req);

struct EncodedRequest {
  std::string command_line;
  std::string body;
};

// body must be exactly req.content_length octets.
EncodedRequest encode_request(const WireRequest& req, std::string_view body);
std::string encode_ping();

enum class ParseErrc { kMalformedCommand, kPathNotAllowed, kBodyTooLarge };

std::string_view to_string(ParseErrc errc);

struct ParseError {
  ParseErrc code;
  // Describes which rule failed. Never echoes the offending input.
  std::string detail;
};

using ParsedCommand = std::variant<WireRequest, KeepAlivePing, ParseError>;

// Total: every input yields a request, a ping, or a rejection.
ParsedCommand parse_command(std::string_view line);

// ---------------------------------------------------------------------------
// Response framing.

inline constexpr std::string_view kContentTypeHeader = "content-type";

struct WireResponse {
  int status = 200;
  std::vector<std::pair<std::string, std::string>> headers;
  std::vector<std::string> chunks;

  friend bool operator==(const WireResponse&, const WireResponse&) = default;
};

struct ErrorFrame {
  int code = 502;
  std::string reason;

  friend bool operator==(const ErrorFrame&, const ErrorFrame&) = default;
};

using ParsedResponse = std::variant<WireResponse, ErrorFrame>;

enum class FrameErrc { kFramingError, kTruncatedStream };

class FrameError : public std::runtime_error {
 public:
  FrameError(FrameErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  FrameErrc code() const noexcept { return code_; }

 private:
  FrameErrc code_;
};

bool is_allowed_header(std::string_view lowercase_name);

std::string frame_status(int status);
std::string frame_header(std::string_view name, std::string_view value);
std::string frame_body_start();
std::string frame_chunk(std::string_view octets);
std::string frame_end();
std::string frame_error(int code, std::string_view reason);

// Throws InvalidRequest when resp violates its invariants.
std::string frame_response(const WireResponse& resp);

// Incremental decoder. Bytes are fed as they arrive; decoded events are
// appended to an internal queue and drained by next(). Chunk payloads are
// surfaced as soon as they are complete, before END is seen.
class ResponseDecoder {
 public:
  struct Status {
    int code;
  };
  struct Header {
    std::string name;
    std::string value;
  };
  struct BodyStart {};
  struct Chunk {
    std::string octets;
  };
  struct End {};
  struct Error {
    ErrorFrame frame;
  };
  using Event = std::variant<Status, Header, BodyStart, Chunk, End, Error>;

  // Throws FrameError(kFramingError) on any control-line violation.
  void feed(std::string_view bytes);
  // Throws FrameError(kTruncatedStream) unless END or ERR was decoded.
  void finish() const;

  std::optional<Event> next();
  bool done() const noexcept { return phase_ == Phase::kDone; }

 private:
  enum class Phase { kStart, kHeaders, kChunks, kPayload, kDone };

  void handle_line(std::string_view line);

  Phase phase_ = Phase::kStart;
  std::string line_;
  std::string payload_;
  std::size_t payload_remaining_ = 0;
  std::vector<Event> pending_;
  std::size_t pending_head_ = 0;
};

// Decodes a complete stream. Throws FrameError.
ParsedResponse parse_response(std::string_view stream);

// ---------------------------------------------------------------------------
// Keep-alive reply: `PONG\n`, one `SVC <name> <ready> <desired>\n` per
// service, `END\n`.

struct ServiceSummary {
  std::string service;
  int ready = 0;
  int desired = 0;

  friend bool operator==(const ServiceSummary&, const ServiceSummary&) = default;
};

std::string format_pong(const std::vector<ServiceSummary>& services);
// nullopt unless text is a complete, well-formed pong.
std::optional<std::vector<ServiceSummary>> parse_pong(std::string_view text);

}  // namespace hpcserve::wire

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

#include <random>

#include "hpcserve/wire.hpp"

namespace hpcserve::wire {
namespace {

ParseErrc error_of(const ParsedCommand& p) {
  EXPECT_TRUE(std::holds_alternative<ParseError>(p));
  return std::get<ParseError>(p).code;
}

TEST(ParseCommand, AcceptsCanonicalRequest) {
  auto p = parse_command("REQ 1 POST qwen2-72b /v1/chat/completions 512 S");
  ASSERT_TRUE(std::holds_alternative<WireRequest>(p));
  auto req = std::get<WireRequest>(p);
  EXPECT_EQ(req.method, Method::kPost);
  EXPECT_EQ(req.service, "qwen2-72b");
  EXPECT_EQ(req.path, Path::kChatCompletions);
  EXPECT_EQ(req.content_length, 512u);
  EXPECT_TRUE(req.stream);
}

TEST(ParseCommand, Ping) {
  EXPECT_TRUE(std::holds_alternative<KeepAlivePing>(parse_command("PING")));
  EXPECT_EQ(error_of(parse_command("PING ")), ParseErrc::kMalformedCommand);
  EXPECT_EQ(error_of(parse_command("ping")), ParseErrc::kMalformedCommand);
}

TEST(ParseCommand, ShellMetacharactersAreMalformed) {
  EXPECT_EQ(error_of(parse_command("REQ 1 POST qwen;rm -rf / /v1/chat/completions 10 N")),
            ParseErrc::kMalformedCommand);
  EXPECT_EQ(error_of(parse_command("REQ 1 POST qwen$(id) /v1/completions 1 N")),
            ParseErrc::kMalformedCommand);
  EXPECT_EQ(error_of(parse_command("REQ 1 POST qwen /v1/completions 1 N\nrm x")),
            ParseErrc::kMalformedCommand);
}

TEST(ParseCommand, PathOutsideAllowlist) {
  EXPECT_EQ(error_of(parse_command("REQ 1 GET qwen /admin 0 N")), ParseErrc::kPathNotAllowed);
  EXPECT_EQ(error_of(parse_command("REQ 1 GET qwen /v1/models/../admin 0 N")), ParseErrc::kPathNotAllowed);
  EXPECT_EQ(error_of(parse_command("REQ 1 GET qwen /health?x=1 0 N")), ParseErrc::kPathNotAllowed);
}

TEST(ParseCommand, BodyCap) {
  EXPECT_EQ(error_of(parse_command("REQ 1 POST qwen /v1/completions 10485761 N")), ParseErrc::kBodyTooLarge);
  EXPECT_TRUE(std::holds_alternative<WireRequest>(parse_command("REQ 1 POST qwen /v1/completions 10485760 N")));
  EXPECT_EQ(error_of(parse_command("REQ 1 POST qwen /v1/completions 99999999999999999999999 N")),
            ParseErrc::kBodyTooLarge);
}

TEST(ParseCommand, RejectsEachFieldViolation) {
  const char* bad[] = {
      "",
      "REQ",
      "REQ 1 POST qwen /v1/completions 1",
      "REQ 1 POST qwen /v1/completions 1 N extra",
      "REQ  1 POST qwen /v1/completions 1 N",
      "REQ 1 POST qwen /v1/completions 1 N ",
      "RUN 1 POST qwen /v1/completions 1 N",
      "REQ 2 POST qwen /v1/completions 1 N",
      "REQ 01 POST qwen /v1/completions 1 N",
      "REQ 1 PUT qwen /v1/completions 1 N",
      "REQ 1 post qwen /v1/completions 1 N",
      "REQ 1 POST Qwen /v1/completions 1 N",
      "REQ 1 POST qwen_2 /v1/completions 1 N",
      "REQ 1 POST qwen /v1/completions 01 N",
      "REQ 1 POST qwen /v1/completions -1 N",
      "REQ 1 POST qwen /v1/completions +1 N",
      "REQ 1 POST qwen /v1/completions 1 Y",
      "REQ 1 GET qwen /health 5 N",
      "REQ\t1 POST qwen /v1/completions 1 N",
  };
  for (const char* line : bad) {
    EXPECT_EQ(error_of(parse_command(line)), ParseErrc::kMalformedCommand) << line;
  }
  std::string long_service(65, 'a');
  EXPECT_EQ(error_of(parse_command("REQ 1 POST " + long_service + " /v1/completions 1 N")),
            ParseErrc::kMalformedCommand);
  std::string too_long = "REQ 1 POST qwen /v1/completions 1 N" + std::string(4096, ' ');
  EXPECT_EQ(error_of(parse_command(too_long)), ParseErrc::kMalformedCommand);
}

TEST(ParseCommand, ErrorDetailNeverEchoesInput) {
  auto p = parse_command("REQ 1 POST secretprompt /nope 1 N");
  EXPECT_EQ(std::get<ParseError>(p).detail.find("secretprompt"), std::string::npos);
}

WireRequest random_request(std::mt19937_64& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789-";
  WireRequest r;
  r.method = rng() % 2 ? Method::kGet : Method::kPost;
  std::size_t len = 1 + rng() % kMaxServiceLength;
  for (std::size_t i = 0; i < len; ++i) r.service += alphabet[rng() % alphabet.size()];
  r.path = kAllPaths[rng() % kAllPaths.size()];
  r.content_length = r.method == Method::kGet ? 0 : rng() % (kMaxBodyLength + 1);
  r.stream = rng() % 2;
  return r;
}

TEST(ParseCommand, EncodeParseRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20000; ++i) {
    auto req = random_request(rng);
    std::string body(static_cast<std::size_t>(req.content_length), 'x');
    auto encoded = encode_request(req, body);
    auto parsed = parse_command(encoded.command_line);
    ASSERT_TRUE(std::holds_alternative<WireRequest>(parsed)) << encoded.command_line;
    EXPECT_EQ(std::get<WireRequest>(parsed), req);
  }
}

TEST(ParseCommand, EncoderRejectsInvalid) {
  WireRequest r;
  r.service = "Bad";
  EXPECT_THROW(encode_request(r, ""), InvalidRequest);
  r.service = "ok";
  r.method = Method::kGet;
  r.content_length = 3;
  EXPECT_THROW(encode_request(r, "abc"), InvalidRequest);
  r.method = Method::kPost;
  EXPECT_THROW(encode_request(r, "ab"), InvalidRequest);
}

// Every accepted command is canonical: re-encoding reproduces it octet for
// octet, so nothing outside the grammar can ride along.
TEST(ParseCommand, FuzzIsTotalAndCanonical) {
  std::mt19937_64 rng(20240611);
  const std::string seeds[] = {"REQ 1 POST qwen /v1/chat/completions 12 S", "REQ 1 GET a /health 0 N", "PING"};
  std::size_t accepted = 0;
  for (int i = 0; i < 1'000'000; ++i) {
    std::string s;
    if (i % 2 == 0) {
      s = seeds[rng() % 3];
      int edits = 1 + static_cast<int>(rng() % 4);
      for (int e = 0; e < edits; ++e) {
        std::size_t pos = s.empty() ? 0 : rng() % (s.size() + 1);
        char c = static_cast<char>(rng() % 256);
        switch (rng() % 3) {
          case 0:
            s.insert(s.begin() + static_cast<std::ptrdiff_t>(pos), c);
            break;
          case 1:
            if (pos < s.size()) s.erase(pos, 1);
            break;
          default:
            if (pos < s.size()) s[pos] = c;
        }
      }
    } else {
      s.resize(rng() % 64);
      for (auto& c : s) c = static_cast<char>(rng() % 256);
    }
    ParsedCommand p;
    ASSERT_NO_THROW(p = parse_command(s));
    if (auto* req = std::get_if<WireRequest>(&p)) {
      ++accepted;
      ASSERT_TRUE(validate(*req).empty());
      ASSERT_EQ(encode_request(*req, std::string(req->content_length, 'x')).command_line, s);
    } else if (std::holds_alternative<KeepAlivePing>(p)) {
      ASSERT_EQ(s, "PING");
    }
  }
  EXPECT_GT(accepted, 0u);
}

TEST(ResponseFraming, RoundTrip) {
  WireResponse r{200, {{"content-type", "text/event-stream"}}, {"data: 1\n\n", std::string(70000 % 65536, 'z')}};
  auto framed = frame_response(r);
  auto parsed = parse_response(framed);
  ASSERT_TRUE(std::holds_alternative<WireResponse>(parsed));
  EXPECT_EQ(std::get<WireResponse>(parsed), r);
}

TEST(ResponseFraming, ChunkPayloadMayContainControlWords) {
  WireResponse r{200, {}, {"END\nERR 500 x\nCHUNK 3\n"}};
  EXPECT_EQ(std::get<WireResponse>(parse_response(frame_response(r))), r);
}

TEST(ResponseFraming, ByteAtATimeDecoding) {
  WireResponse r{201, {{"content-type", "application/json"}}, {"{\"a\":1}", "tail"}};
  auto framed = frame_response(r);
  ResponseDecoder d;
  std::vector<std::string> chunks;
  for (char c : framed) {
    d.feed(std::string_view(&c, 1));
    while (auto e = d.next()) {
      if (auto* ch = std::get_if<ResponseDecoder::Chunk>(&*e)) chunks.push_back(ch->octets);
    }
  }
  d.finish();
  EXPECT_EQ(chunks, r.chunks);
}

TEST(ResponseFraming, ErrorFrame) {
  auto parsed = parse_response(frame_error(404, "no ready instance"));
  EXPECT_EQ(std::get<ErrorFrame>(parsed), (ErrorFrame{404, "no ready instance"}));
}

TEST(ResponseFraming, Rejections) {
  EXPECT_THROW(frame_response(WireResponse{200, {{"x-evil", "1"}}, {}}), InvalidRequest);
  EXPECT_THROW(frame_response(WireResponse{200, {}, {""}}), InvalidRequest);
  EXPECT_THROW(frame_response(WireResponse{200, {}, {std::string(kMaxChunkLength + 1, 'a')}}), InvalidRequest);

  auto framing_error = [](std::string_view s) -> std::optional<FrameErrc> {
    try {
      parse_response(s);
    } catch (const FrameError& e) {
      return e.code();
    }
    return std::nullopt;
  };
  EXPECT_EQ(framing_error("HELLO\n"), FrameErrc::kFramingError);
  EXPECT_EQ(framing_error("STATUS 200\nHDR set-cookie: a\nBODY\nEND\n"), FrameErrc::kFramingError);
  EXPECT_EQ(framing_error("STATUS 200\nBODY\nCHUNK 0\nEND\n"), FrameErrc::kFramingError);
  EXPECT_EQ(framing_error("STATUS 200\nBODY\nCHUNK 65537\n"), FrameErrc::kFramingError);
  EXPECT_EQ(framing_error("STATUS 99\nBODY\nEND\n"), FrameErrc::kFramingError);
  EXPECT_EQ(framing_error("STATUS 200\nBODY\nEND\nSTATUS 200\n"), FrameErrc::kFramingError);
  EXPECT_EQ(framing_error("STATUS 200\nBODY\nCHUNK 5\nab"), FrameErrc::kTruncatedStream);
  EXPECT_EQ(framing_error("STATUS 200\nBODY\n"), FrameErrc::kTruncatedStream);
  EXPECT_EQ(framing_error(""), FrameErrc::kTruncatedStream);
}

TEST(ResponseFraming, DecoderFuzzNeverCrashes) {
  std::mt19937_64 rng(99);
  auto base = frame_response(WireResponse{200, {{"content-type", "a/b"}}, {"hello", "world"}});
  for (int i = 0; i < 100000; ++i) {
    std::string s = base;
    for (int e = 0; e < 3; ++e) s[rng() % s.size()] = static_cast<char>(rng() % 256);
    try {
      parse_response(s);
    } catch (const FrameError&) {
    }
  }
}

TEST(Pong, RoundTripAndRejects) {
  std::vector<ServiceSummary> s = {{"qwen2-72b", 2, 2}, {"llama3-8b", 1, 1}};
  EXPECT_EQ(parse_pong(format_pong(s)), s);
  EXPECT_EQ(parse_pong(format_pong({})), std::vector<ServiceSummary>{});
  EXPECT_FALSE(parse_pong("PONG\n"));
  EXPECT_FALSE(parse_pong("PONG\nSVC Q 1 1\nEND\n"));
  EXPECT_FALSE(parse_pong("PONG\nEND\nextra"));
  EXPECT_FALSE(parse_pong("ERR 502 x\n"));
}

}  // namespace
}  // namespace hpcserve::wire

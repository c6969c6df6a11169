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

#include "hpcserve/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>

namespace hpcserve::log {
namespace {

std::atomic<Level> g_level{Level::kWarn};
std::mutex g_mutex;
std::FILE* g_file = nullptr;

const char* tag(Level level) {
  switch (level) {
    case Level::kDebug:
      return "D";
    case Level::kInfo:
      return "I";
    case Level::kWarn:
      return "W";
    case Level::kError:
      return "E";
  }
  return "?";
}

}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void set_file(const std::string& path) {
  std::lock_guard lock(g_mutex);
  if (g_file != nullptr) {
    std::fclose(g_file);
    g_file = nullptr;
  }
  if (!path.empty()) g_file = std::fopen(path.c_str(), "a");
}

void write(Level level, std::string_view message) {
  auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::system_clock::now().time_since_epoch())
                 .count();
  std::lock_guard lock(g_mutex);
  std::FILE* out = g_file != nullptr ? g_file : stderr;
  std::fprintf(out, "%s %lld.%03lld %.*s\n", tag(level), static_cast<long long>(now / 1000),
               static_cast<long long>(now % 1000), static_cast<int>(message.size()),
               message.data());
  std::fflush(out);
}

}  // namespace hpcserve::log

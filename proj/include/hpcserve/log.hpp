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

#include <sstream>
#include <string>
#include <string_view>

namespace hpcserve::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

void set_level(Level level);
Level level();
// Empty path restores stderr. Lines are appended, never rewritten.
void set_file(const std::string& path);
void write(Level level, std::string_view message);

}  // namespace hpcserve::log

#define HPC_LOG_AT(lvl, expr)                                          \
  do {                                                                 \
    if (static_cast<int>(lvl) >= static_cast<int>(::hpcserve::log::level())) { \
      std::ostringstream hpc_log_os_;                                  \
      hpc_log_os_ << expr;                                             \
      ::hpcserve::log::write(lvl, hpc_log_os_.str());                  \
    }                                                                  \
  } while (0)

#define HPC_LOG_DEBUG(expr) HPC_LOG_AT(::hpcserve::log::Level::kDebug, expr)
#define HPC_LOG_INFO(expr) HPC_LOG_AT(::hpcserve::log::Level::kInfo, expr)
#define HPC_LOG_WARN(expr) HPC_LOG_AT(::hpcserve::log::Level::kWarn, expr)
#define HPC_LOG_ERROR(expr) HPC_LOG_AT(::hpcserve::log::Level::kError, expr)

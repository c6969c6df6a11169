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

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hpcserve::files {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// nullopt when the file does not exist; throws IoError on other failures.
std::optional<std::string> read_file(const std::string& path);

// Writes to a unique temporary sibling and renames it over path, so readers
// observe either the old or the new content.
void write_file_atomic(const std::string& path, std::string_view content);

// One write(2) on an O_APPEND descriptor while holding flock(LOCK_EX).
void append_locked(const std::string& path, std::string_view data);

// Runs fn(content) under flock(LOCK_EX) and replaces the file content with
// the returned string (in place). Missing files are created empty.
void rewrite_locked(const std::string& path,
                    const std::function<std::string(const std::string&)>& fn);

void ensure_directory(const std::string& path);

}  // namespace hpcserve::files

// SPDX-License-Identifier: Apache-2.0
//
// JSON parsing with duplicate-key detection plus small file I/O helpers.

#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rarecov::jsonio {

using json = nlohmann::json;

struct DuplicateKey : std::runtime_error {
  std::string key;
  explicit DuplicateKey(std::string k)
      : std::runtime_error("duplicate JSON key: " + k), key(std::move(k)) {}
};

struct FileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parse rejecting duplicate object keys (nlohmann silently keeps the last
/// one otherwise, which would mask id collisions in persisted databases).
inline json parse_checked(const std::string& text) {
  std::vector<std::vector<std::string>> key_stack;
  auto cb = [&](int /*depth*/, json::parse_event_t event, json& parsed) -> bool {
    switch (event) {
      case json::parse_event_t::object_start:
        key_stack.emplace_back();
        break;
      case json::parse_event_t::key: {
        std::string k = parsed.get<std::string>();
        auto& keys = key_stack.back();
        for (const auto& existing : keys)
          if (existing == k) throw DuplicateKey(k);
        keys.push_back(std::move(k));
        break;
      }
      case json::parse_event_t::object_end:
        key_stack.pop_back();
        break;
      default:
        break;
    }
    return true;
  };
  return json::parse(text, cb);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open for writing: " + path);
  out << content;
  if (!out) throw FileError("write failed: " + path);
}

inline bool file_exists(const std::string& path) {
  std::ifstream in(path);
  return in.good();
}

}  // namespace rarecov::jsonio

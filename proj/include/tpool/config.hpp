// SPDX-License-Identifier: Apache-2.0
//
// Flat "key = value" configuration text. '#' starts a comment, blank lines
// are ignored, keys are unique. Readers consume keys by name; anything left
// unconsumed is reported as an unknown key.
#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tpool/error.hpp"

namespace tpool {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      std::string key(trim(line.substr(0, eq)));
      std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      if (cfg.contains(key)) throw ConfigError("config key '" + key + "' given twice");
      cfg.entries_.emplace_back(std::move(key), std::move(value));
    }
    return cfg;
  }

  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(std::move(key), std::move(value));
  }

  [[nodiscard]] bool contains(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
      if (k == key) return true;
    }
    return false;
  }

  /// Raw value, marking the key consumed. Empty optional if absent.
  const std::string* raw(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
      if (k == key) {
        consumed_.insert(k);
        return &v;
      }
    }
    return nullptr;
  }

  void read(std::string_view key, std::string& out) const {
    if (const auto* v = raw(key)) out = *v;
  }

  void read(std::string_view key, double& out) const {
    if (const auto* v = raw(key)) out = number<double>(key, *v);
  }

  void read(std::string_view key, int& out) const {
    if (const auto* v = raw(key)) out = number<int>(key, *v);
  }

  void read(std::string_view key, std::uint64_t& out) const {
    if (const auto* v = raw(key)) out = number<std::uint64_t>(key, *v);
  }

  void read(std::string_view key, bool& out) const {
    if (const auto* v = raw(key)) {
      if (*v == "true" || *v == "1") {
        out = true;
      } else if (*v == "false" || *v == "0") {
        out = false;
      } else {
        throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + *v + "'");
      }
    }
  }

  void read(std::string_view key, std::vector<int>& out) const {
    const auto* v = raw(key);
    if (!v) return;
    out.clear();
    std::string_view rest = *v;
    while (true) {
      const auto comma = rest.find(',');
      out.push_back(number<int>(key, std::string(trim(rest.substr(0, comma)))));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }

  /// Throws ConfigError naming the first key no reader asked for.
  void reject_unknown() const {
    for (const auto& [k, v] : entries_) {
      if (!consumed_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  [[nodiscard]] std::string format() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
  }

  [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  /// Shortest text that parses back to the same double.
  static std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
  }

 private:
  template <typename T>
  static T number(std::string_view key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty()) {
      throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + text + "'");
    }
    return value;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
  mutable std::set<std::string, std::less<>> consumed_;
};

}  // namespace tpool

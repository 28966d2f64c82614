#pragma once

// Plain-text configuration: UTF-8 lines of `key = value`, `#` starts a
// comment, blank lines are ignored, no sections.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mwn {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::size_t line = 0)
      : std::runtime_error(line ? "config line " + std::to_string(line) + ": " + message : message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class Config {
 public:
  struct Entry {
    std::string key;
    std::string value;
    std::size_t line = 0;
    friend bool operator==(const Entry& a, const Entry& b) { return a.key == b.key && a.value == b.value; }
  };

  static Config parse(std::string_view text) {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected `key = value`, got '" + std::string(line) + "'", line_no);
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError("missing key before '='", line_no);
      if (key.find_first_of(" \t") != std::string::npos) throw ConfigError("key '" + key + "' contains whitespace", line_no);
      if (value.empty()) throw ConfigError("missing value for key '" + key + "'", line_no);
      if (cfg.find(key)) throw ConfigError("duplicate key '" + key + "'", line_no);
      cfg.entries_.push_back({key, value, line_no});
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
  }

  std::string to_string() const {
    std::string out;
    for (const auto& e : entries_) out += e.key + " = " + e.value + "\n";
    return out;
  }

  /// Sets or replaces a key.
  void set(const std::string& key, std::string value) {
    if (auto* e = find_mut(key)) {
      e->value = std::move(value);
    } else {
      entries_.push_back({key, std::move(value), 0});
    }
  }

  const Entry* find(std::string_view key) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
    return it == entries_.end() ? nullptr : &*it;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  /// Throws for the first key not in `known`.
  void require_known(const std::vector<std::string_view>& known) const {
    for (const auto& e : entries_) {
      if (std::find(known.begin(), known.end(), e.key) == known.end()) {
        throw ConfigError("unknown key '" + e.key + "'", e.line);
      }
    }
  }

  std::string get_string(std::string_view key, std::string fallback) const {
    const Entry* e = find(key);
    return e ? e->value : fallback;
  }

  double get_double(std::string_view key, double fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(e->value, &used);
      if (used != e->value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + e->key + "' expects a number, got '" + e->value + "'", e->line);
    }
  }

  std::uint64_t get_uint(std::string_view key, std::uint64_t fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    std::uint64_t v = 0;
    const auto* first = e->value.data();
    const auto* last = first + e->value.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw ConfigError("key '" + e->key + "' expects a non-negative integer, got '" + e->value + "'", e->line);
    }
    return v;
  }

  bool get_bool(std::string_view key, bool fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw ConfigError("key '" + e->key + "' expects true/false, got '" + e->value + "'", e->line);
  }

  /// Line number of `key`, or 0 when absent or set programmatically.
  std::size_t line_of(std::string_view key) const {
    const Entry* e = find(key);
    return e ? e->line : 0;
  }

  friend bool operator==(const Config& a, const Config& b) { return a.entries_ == b.entries_; }

 private:
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  Entry* find_mut(std::string_view key) {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
    return it == entries_.end() ? nullptr : &*it;
  }

  std::vector<Entry> entries_;
};

/// Shortest decimal text that reads back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace mwn

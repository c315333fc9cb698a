#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rbs/common.hpp"

namespace rbs {

/// Flat key=value configuration. Lines are `key=value`; blank lines and lines
/// starting with '#' are skipped. Every key present in the file must be read
/// by the consumer, otherwise reject_unknown() reports it; this is how typos
/// in config files surface as errors instead of silently using defaults.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse_text(std::string_view text, std::string source_name) {
    KvConfig cfg;
    cfg.source_ = std::move(source_name);
    std::istringstream lines{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError(cfg.source_ + ":" + std::to_string(lineno) + ": malformed line '" + t +
                          "' (expected key=value)");
      }
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (!value.empty() && value[0] == '=') {
        throw ConfigError(cfg.source_ + ":" + std::to_string(lineno) + ": malformed line '" + t +
                          "'");
      }
      if (cfg.entries_.count(key) != 0) {
        throw ConfigError(cfg.source_ + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                          "'");
      }
      cfg.entries_[key] = Entry{value, lineno};
    }
    return cfg;
  }

  static KvConfig parse_file(const std::filesystem::path& path) {
    return parse_text(read_file(path), path.string());
  }

  /// Command-line overrides take precedence over file values.
  void set(const std::string& key, std::string value) {
    entries_[key] = Entry{std::move(value), 0};
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, std::string fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    read_.insert(key);
    return it->second.value;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    read_.insert(key);
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(describe(key, it->second) + ": expected an unsigned integer, got '" +
                        it->second.value + "'");
    }
  }

  double get_double(const std::string& key, double fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    read_.insert(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(describe(key, it->second) + ": expected a number, got '" +
                        it->second.value + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    read_.insert(key);
    const std::string& v = it->second.value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(describe(key, it->second) + ": expected a boolean, got '" + v + "'");
  }

  /// Throws if the file contained keys nobody consumed.
  void reject_unknown() const {
    std::vector<std::string> unknown;
    for (const auto& [key, entry] : entries_) {
      if (read_.count(key) == 0) unknown.push_back(key);
    }
    if (!unknown.empty()) {
      std::string msg = source_.empty() ? std::string("config") : source_;
      msg += ": unknown key";
      if (unknown.size() > 1) msg += 's';
      for (std::size_t i = 0; i < unknown.size(); ++i) {
        msg += (i == 0 ? " '" : ", '") + unknown[i] + "'";
      }
      throw ConfigError(msg);
    }
  }

  /// Resolved key=value text, sorted by key, for the run directory echo.
  std::string to_text() const {
    std::string out;
    for (const auto& [key, entry] : entries_) {
      out += key + '=' + entry.value + '\n';
    }
    return out;
  }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;  // 0: set programmatically
  };

  static std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
  }

  std::string describe(const std::string& key, const Entry& entry) const {
    std::string where = source_.empty() ? std::string("config") : source_;
    if (entry.line > 0) where += ":" + std::to_string(entry.line);
    return where + ": key '" + key + "'";
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::set<std::string> read_;
};

}  // namespace rbs

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spamguard/error.hpp"
#include "spamguard/message.hpp"

namespace spamguard {

// Sectioned "key = value" text:
//
//   # comment
//   [section]
//   key = value
//
// Every key must be read by the consumer; check_consumed() reports leftovers so that
// misspelled keys fail loudly instead of silently reverting to defaults.
class KeyValueFile {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    mutable bool consumed = false;
  };

  static KeyValueFile parse(std::istream& in, std::string source = "<config>") {
    KeyValueFile file;
    file.source_ = std::move(source);
    std::string raw;
    std::size_t line_no = 0;
    std::string current;
    bool in_section = false;
    while (std::getline(in, raw)) {
      ++line_no;
      auto line = detail::trim(raw);
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') file.fail("unterminated section header", line_no);
        current = detail::lowercase(detail::trim(line.substr(1, line.size() - 2)));
        if (current.empty()) file.fail("empty section name", line_no);
        if (!file.sections_.emplace(current, std::map<std::string, Entry>{}).second)
          file.fail("duplicate section [" + current + "]", line_no);
        file.order_.push_back(current);
        in_section = true;
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string_view::npos) file.fail("expected 'key = value'", line_no);
      if (!in_section) file.fail("key outside of any section", line_no);
      auto key = detail::lowercase(detail::trim(line.substr(0, eq)));
      if (key.empty()) file.fail("empty key", line_no);
      auto value = std::string(detail::trim(line.substr(eq + 1)));
      if (!file.sections_[current].emplace(key, Entry{value, line_no}).second)
        file.fail("duplicate key '" + key + "'", line_no);
    }
    return file;
  }

  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open config file: " + path.string());
    return parse(in, path.string());
  }

  const std::string& source() const { return source_; }
  bool has_section(std::string_view name) const { return sections_.contains(std::string(name)); }
  const std::vector<std::string>& sections() const { return order_; }

  const Entry* find(std::string_view section, std::string_view key) const {
    auto s = sections_.find(std::string(section));
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(std::string(key));
    if (k == s->second.end()) return nullptr;
    k->second.consumed = true;
    return &k->second;
  }

  std::optional<std::string> get(std::string_view section, std::string_view key) const {
    auto e = find(section, key);
    return e ? std::optional<std::string>(e->value) : std::nullopt;
  }

  // Typed accessors assign to `out` only when the key is present.
  void read(std::string_view section, std::string_view key, std::string& out) const {
    if (auto e = find(section, key)) out = e->value;
  }
  void read(std::string_view section, std::string_view key, bool& out) const {
    if (auto e = find(section, key)) out = parse_bool(e->value, *e);
  }
  void read(std::string_view section, std::string_view key, double& out) const {
    if (auto e = find(section, key)) {
      std::istringstream ss(e->value);
      double v;
      if (!(ss >> v) || !ss.eof()) fail("'" + std::string(key) + "' must be a number", e->line);
      out = v;
    }
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void read(std::string_view section, std::string_view key, Int& out) const {
    if (auto e = find(section, key)) {
      auto v = detail::parse_int<Int>(e->value);
      if (!v) fail("'" + std::string(key) + "' must be an integer", e->line);
      out = *v;
    }
  }
  void read(std::string_view section, std::string_view key, Duration& out) const {
    if (auto e = find(section, key)) out = parse_duration(e->value, *e);
  }
  void read(std::string_view section, std::string_view key, std::vector<std::string>& out) const {
    if (auto e = find(section, key)) out = detail::split_list(e->value);
  }
  void read_size(std::string_view section, std::string_view key, std::optional<std::uint64_t>& out) const {
    if (auto e = find(section, key)) {
      if (e->value.empty() || e->value == "off") {
        out.reset();
        return;
      }
      out = parse_size(e->value, *e);
    }
  }

  // Throws on the first key or section nobody read.
  void check_consumed() const {
    for (const auto& name : order_)
      for (const auto& [key, entry] : sections_.at(name))
        if (!entry.consumed) fail("unknown key '" + key + "' in [" + name + "]", entry.line);
  }

  [[noreturn]] void fail(const std::string& what, std::size_t line) const {
    throw parse_error(source_ + ": " + what, line);
  }

 private:
  bool parse_bool(const std::string& v, const Entry& e) const {
    if (v == "on") return true;
    if (v == "off") return false;
    fail("boolean must be 'on' or 'off'", e.line);
  }

  // Integer with an s, m or h suffix; a bare integer means seconds.
  Duration parse_duration(const std::string& v, const Entry& e) const {
    std::string_view s(v);
    std::int64_t scale = 1;
    if (!s.empty()) {
      switch (s.back()) {
        case 's': s.remove_suffix(1); break;
        case 'm': scale = 60; s.remove_suffix(1); break;
        case 'h': scale = 3600; s.remove_suffix(1); break;
        default: break;
      }
    }
    auto n = detail::parse_int<std::int64_t>(s);
    if (!n || *n < 0) fail("duration must be a non-negative integer with s/m/h suffix", e.line);
    return Duration{*n * scale};
  }

  // Bytes, optionally with a KB or MB suffix (powers of 1024).
  std::uint64_t parse_size(const std::string& v, const Entry& e) const {
    std::string s = detail::lowercase(v);
    std::uint64_t scale = 1;
    auto strip = [&](std::string_view suffix, std::uint64_t mult) {
      if (s.size() > suffix.size() && s.ends_with(suffix)) {
        s.resize(s.size() - suffix.size());
        scale = mult;
        return true;
      }
      return false;
    };
    strip("kb", 1024) || strip("mb", 1024 * 1024) || strip("k", 1024) || strip("m", 1024 * 1024);
    auto n = detail::parse_int<std::uint64_t>(detail::trim(s));
    if (!n) fail("size must be an integer byte count, optionally with KB/MB", e.line);
    return *n * scale;
  }

  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::vector<std::string> order_;
};

}  // namespace spamguard

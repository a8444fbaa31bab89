#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spamguard {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. line() is 1-based, or 0 when the problem is not tied to a line.
class parse_error : public error {
 public:
  explicit parse_error(const std::string& what, std::size_t line = 0)
      : error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A configuration violates its invariants.
class config_error : public error {
 public:
  using error::error;
};

}  // namespace spamguard

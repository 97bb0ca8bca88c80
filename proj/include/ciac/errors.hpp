#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ciac {

// Invalid parameters, shapes, or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input files. Carries the 1-based data row where parsing failed (0 = header).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : std::runtime_error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Non-finite values produced during numeric work (loss, gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ciac

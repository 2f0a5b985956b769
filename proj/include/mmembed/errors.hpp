// SPDX-License-Identifier: Apache-2.0
#ifndef MMEMBED_ERRORS_HPP_
#define MMEMBED_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmembed {

/// Operand dimensions disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity showed up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data is missing or inconsistent (e.g. no feature for an image).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input file. Carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Triplet mining could not complete (e.g. negative sampling exhausted).
class MiningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmembed

#endif  // MMEMBED_ERRORS_HPP_

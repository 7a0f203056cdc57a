#pragma once

#include <stdexcept>
#include <string>

namespace stkd {

// Invalid arguments use std::invalid_argument and bad indices use
// std::out_of_range. Everything else that the pipeline can reject has its own
// type so callers (and the CLI) can tell the failure classes apart.

class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string op, const std::string& what)
      : std::runtime_error("numerical error in '" + op + "': " + what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DataQualityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (position " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class InvalidSampleError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stkd

#pragma once

#include <stdexcept>
#include <string>

namespace ctxtune {

// Process exit codes used by the CLI. Library code signals failure through
// the exception types below; the CLI maps them to these codes.
enum class ExitCode : int {
  Ok = 0,
  InvalidConfig = 2,
  Io = 3,
  Numeric = 4,
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration (bad env/algorithm pairing, population < 2, ...).
class invalid_config : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file; carries the 1-based line the parser choked on.
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, long line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace ctxtune

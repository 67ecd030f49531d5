#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bispike {

// Error codes double as process exit codes at the CLI boundary.
enum class ErrCode : int {
  internal = 1,   // contract violations: bad shapes, stale tape, misuse
  config = 2,     // unusable configuration or input data
  numeric = 3,    // non-finite values, divergence
  io = 4,         // filesystem and serialization failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrCode code() const { return code_; }
  int exit_code() const { return static_cast<int>(code_); }

 private:
  ErrCode code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrCode::internal, m) {}
};
struct StateError : Error {
  explicit StateError(const std::string& m) : Error(ErrCode::internal, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrCode::config, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrCode::numeric, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrCode::io, m) {}
};

}  // namespace bispike

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kvdrive {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kInfeasible,
  kFormat,
  kIo,
  kNotFound,
  kTimeout,
};

const char* to_string(ErrorCode code);

// All library failures surface as Error. The code lets callers (the CLI in
// particular) map failures onto exit codes without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DimensionError : public Error {
 public:
  DimensionError(std::size_t index, std::size_t expected, std::size_t actual);

  std::size_t index() const noexcept { return index_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t index_;
  std::size_t expected_;
  std::size_t actual_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace kvdrive

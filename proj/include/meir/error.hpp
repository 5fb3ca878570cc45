#pragma once

#include <stdexcept>
#include <string>

namespace meir {

enum class ErrorCode {
  validation = 1,
  format,
  not_found,
  io,
  empty_index,
  diverged,
  invalid_argument,
  usage,
};

/// Base exception for every failure raised by the toolkit. The code maps
/// one-to-one onto the status values of the C API.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace meir

#pragma once

#include <stdexcept>
#include <string>

namespace bright {

// Numeric values double as CLI exit codes and C API status codes.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  non_finite = 4,
  format = 5,
  shape = 6,
  io = 7,
  argument = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const char* what) {
  if (!cond) fail(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace bright

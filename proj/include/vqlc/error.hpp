#pragma once

#include <stdexcept>
#include <string>

namespace vqlc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, shape mismatches, out-of-range configuration.
/// The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Failures during an otherwise valid computation (non-finite loss, I/O).
class RuntimeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an allocation would exceed a configured memory guard.
class MemoryGuardError : public RuntimeError {
 public:
  MemoryGuardError(const std::string& what, std::size_t requested, std::size_t limit)
      : RuntimeError(what), requested_(requested), limit_(limit) {}

  std::size_t requested() const noexcept { return requested_; }
  std::size_t limit() const noexcept { return limit_; }

 private:
  std::size_t requested_;
  std::size_t limit_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace detail
}  // namespace vqlc

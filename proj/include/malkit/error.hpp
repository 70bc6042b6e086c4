#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace malkit {

/// Machine-readable error class. The CLI prints it as the first token of
/// its one-line failure message.
enum class ErrorKind {
  shape,
  precondition,
  io,
  not_found,
  bad_magic,
  truncated,
  version,
  format,
  config,
  numeric,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::io: return "io";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::version: return "version";
    case ErrorKind::format: return "format";
    case ErrorKind::config: return "config";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

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

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace malkit

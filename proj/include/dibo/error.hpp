#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dibo {

enum class ErrorKind {
  shape,
  capacity,
  degeneracy,
  range,
  parse,
  encoding,
  template_slot,
  numeric,
  io,
  config,
  harvest_exhausted,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::degeneracy: return "degeneracy";
    case ErrorKind::range: return "range";
    case ErrorKind::parse: return "parse";
    case ErrorKind::encoding: return "encoding";
    case ErrorKind::template_slot: return "template";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::harvest_exhausted: return "harvest_exhausted";
  }
  return "unknown";
}

/// Base error for everything the library throws. `kind()` is stable and is
/// what the CLI writes into failure records.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dibo

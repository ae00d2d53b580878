#pragma once

#include <stdexcept>
#include <string>

namespace granp {

// Error categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  shape,    // tensor/layer shape contract violated
  value,    // argument outside its domain
  format,   // malformed file or record
  usage,    // bad command-line usage
  numeric,  // NaN/Inf or failed numerical check
  state,    // operation called in the wrong state (e.g. apply before fit)
  io,       // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};
struct ValueError : Error {
  explicit ValueError(const std::string& what) : Error(ErrorKind::value, what) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};
struct StateError : Error {
  explicit StateError(const std::string& what) : Error(ErrorKind::state, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::value: return "value";
    case ErrorKind::format: return "format";
    case ErrorKind::usage: return "usage";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace granp

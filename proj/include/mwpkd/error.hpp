#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mwpkd {

enum class ErrorKind {
  Schema,
  Validation,
  Format,
  Param,
  Numerical,
  Neighbor,
  Graph,
  Shape,
  Unsupported,
  Config,
  TokenRange,
  Length,
  NonFinite,
  DimMismatch,
  Index,
  EmptyQuantity,
  Decode,
  Label,
  DivZero,
  Domain,
  Alignment,
  ZeroVector,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Numerical failures are reported separately from data/usage errors by the CLI.
bool is_numerical(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mwpkd

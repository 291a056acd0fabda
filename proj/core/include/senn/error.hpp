#pragma once

#include <stdexcept>
#include <string>

namespace senn {

enum class ErrorKind {
  ShapeMismatch,
  IndexOutOfRange,
  NotPositiveDefinite,
  NumericalBreakdown,
  SingularMatrix,
  TooLarge,
  LastNeuron,
  BadMagic,
  TruncatedFile,
  MissingFile,
  Config,
  Theorem1ViolationBug,
  FunctionPreservationBug,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace senn

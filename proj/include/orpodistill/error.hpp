#pragma once

#include <stdexcept>
#include <string>

namespace orpod {

// Error kinds used across the project. The CLI maps these to the
// machine-readable error JSON it prints on failure.
enum class ErrorKind {
  UnknownSymbol,
  SpecInfeasible,
  ContextOverflow,
  EmptyResponse,
  NonFiniteLoss,
  ShapeMismatch,
  DegenerateProbability,
  EmptyPool,
  IoError,
  VersionMismatch,
  CorruptFile,
  InvalidConfig,
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::UnknownSymbol: return "UnknownSymbol";
    case ErrorKind::SpecInfeasible: return "SpecInfeasible";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::EmptyResponse: return "EmptyResponse";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateProbability: return "DegenerateProbability";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace orpod

#pragma once

#include <stdexcept>
#include <string>

namespace drl {

// Machine-readable category carried by every library error. The CLI maps
// these onto process exit codes.
enum class ErrorCode {
  kInvalidArgument,
  kUnsupportedOperation,
  kResourceLimit,
  kFitInfeasible,
  kTrainingDiverged,
  kIo,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kUnsupportedOperation: return "unsupported_operation";
    case ErrorCode::kResourceLimit: return "resource_limit";
    case ErrorCode::kFitInfeasible: return "fit_infeasible";
    case ErrorCode::kTrainingDiverged: return "training_diverged";
    case ErrorCode::kIo: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorCode::kInvalidArgument, what) {}
};

struct UnsupportedOperation : Error {
  explicit UnsupportedOperation(const std::string& what)
      : Error(ErrorCode::kUnsupportedOperation, what) {}
};

struct ResourceLimit : Error {
  explicit ResourceLimit(const std::string& what)
      : Error(ErrorCode::kResourceLimit, what) {}
};

struct FitInfeasible : Error {
  explicit FitInfeasible(const std::string& what)
      : Error(ErrorCode::kFitInfeasible, what) {}
};

struct TrainingDiverged : Error {
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : Error(ErrorCode::kTrainingDiverged, what), epoch(epoch) {}
  std::size_t epoch;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace detail

}  // namespace drl

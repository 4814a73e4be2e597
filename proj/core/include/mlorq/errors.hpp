#ifndef MLORQ_ERRORS_HPP
#define MLORQ_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mlorq {

enum class ErrorCode {
  // input / format
  BadMagic,
  UnsupportedVersion,
  TruncatedBuffer,
  DuplicateName,
  IoFailure,
  ShapeMismatch,
  MissingTensor,
  BrokenChain,
  IndexOutOfRange,
  EmptyCalibration,
  EmptyInput,
  NoFeasibleBit,
  InvalidArgument,
  // search
  Infeasible,
  // numerical
  SvdNoConvergence,
  ZeroSignal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

  // Process exit codes: 2 input error, 3 infeasible budget, 4 numerical failure.
  int exit_code() const {
    switch (code_) {
      case ErrorCode::Infeasible:
        return 3;
      case ErrorCode::SvdNoConvergence:
      case ErrorCode::ZeroSignal:
        return 4;
      default:
        return 2;
    }
  }

 private:
  ErrorCode code_;
};

const char* error_code_name(ErrorCode code);

}  // namespace mlorq

#endif  // MLORQ_ERRORS_HPP

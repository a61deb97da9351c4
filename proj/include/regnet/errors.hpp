#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regnet {

/// Failure categories raised by the library. The CLI maps every code to an
/// exit status, so new codes must also be classified in `is_usage_error`.
enum class ErrorCode {
  InvalidArgument,
  ParseError,
  DisconnectedGraph,
  NotATree,
  OverlappingLoops,
  UnbalancedInjection,
  NumericalFailure,
  InfeasibleBaseline,
  InfeasibleAtConfidence,
  InfeasibleOperatingPoint,
  EpsilonOutOfRange,
  RegulationOutOfRange,
  Infeasible,
  ZeroCapacity,
  InsufficientCapacity,
  AllMileagesZero,
  GraphHypothesisViolated,
  NonFiniteState,
  ValueOutOfRange,
  MismatchedScenarios,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::NotATree: return "NotATree";
    case ErrorCode::OverlappingLoops: return "OverlappingLoops";
    case ErrorCode::UnbalancedInjection: return "UnbalancedInjection";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::InfeasibleBaseline: return "InfeasibleBaseline";
    case ErrorCode::InfeasibleAtConfidence: return "InfeasibleAtConfidence";
    case ErrorCode::InfeasibleOperatingPoint: return "InfeasibleOperatingPoint";
    case ErrorCode::EpsilonOutOfRange: return "EpsilonOutOfRange";
    case ErrorCode::RegulationOutOfRange: return "RegulationOutOfRange";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::ZeroCapacity: return "ZeroCapacity";
    case ErrorCode::InsufficientCapacity: return "InsufficientCapacity";
    case ErrorCode::AllMileagesZero: return "AllMileagesZero";
    case ErrorCode::GraphHypothesisViolated: return "GraphHypothesisViolated";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::MismatchedScenarios: return "MismatchedScenarios";
  }
  return "Unknown";
}

// Malformed input rather than a property of the model.
inline bool is_usage_error(ErrorCode code) {
  return code == ErrorCode::ParseError || code == ErrorCode::InvalidArgument;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace regnet

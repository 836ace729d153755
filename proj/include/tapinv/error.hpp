#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tapinv {

enum class ErrorCode {
    DisconnectedGraph,
    DuplicateLink,
    NonpositiveParameter,
    UnknownNode,
    NoPath,
    DimensionMismatch,
    NegativeRatio,
    DegreeTooSmall,
    InvalidArgument,
    NotConverged,
    InfeasibleDemand,
    RouteEnumerationExceeded,
    EmptySnapshot,
    InconsistentDimensions,
    Infeasible,
    SolverStalled,
    InfeasibleDual,
    SubproblemInfeasible,
    CertificationMismatch,
    ParseError,
    ConfigError,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::DuplicateLink: return "DuplicateLink";
    case ErrorCode::NonpositiveParameter: return "NonpositiveParameter";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::NoPath: return "NoPath";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NegativeRatio: return "NegativeRatio";
    case ErrorCode::DegreeTooSmall: return "DegreeTooSmall";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::InfeasibleDemand: return "InfeasibleDemand";
    case ErrorCode::RouteEnumerationExceeded: return "RouteEnumerationExceeded";
    case ErrorCode::EmptySnapshot: return "EmptySnapshot";
    case ErrorCode::InconsistentDimensions: return "InconsistentDimensions";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::SolverStalled: return "SolverStalled";
    case ErrorCode::InfeasibleDual: return "InfeasibleDual";
    case ErrorCode::SubproblemInfeasible: return "SubproblemInfeasible";
    case ErrorCode::CertificationMismatch: return "CertificationMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace tapinv

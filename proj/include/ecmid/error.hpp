#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecmid {

enum class ErrorCode {
    // ingestion
    MissingColumn,
    NonMonotonicTime,
    NonUniformSampling,
    EmptyFile,
    ParseError,
    InvalidRecord,
    SocOutOfRange,
    MissingSoc,
    // simulation
    InvalidParams,
    SocRangeExceeded,
    NonFiniteOcv,
    DomainError,
    // filters
    PoleEvaluation,
    DegenerateBank,
    EmptyInput,
    InvalidArgument,
    // splines
    OutOfSupport,
    BadOrder,
    UnsortedInput,
    TooSmall,
    // regression / solver
    DegenerateColumn,
    MaxItersExceeded,
    NumericalFailure,
    SvdFailure,
    DegenerateP,
    // recovery
    SingularSystem,
    ComplexTimeConstants,
    NonPhysical,
    // metrics
    LengthMismatch,
    ZeroVariance,
    AllSolvesFailed,
    // configuration
    ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::NonUniformSampling: return "NonUniformSampling";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::SocOutOfRange: return "SocOutOfRange";
    case ErrorCode::MissingSoc: return "MissingSoc";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::SocRangeExceeded: return "SocRangeExceeded";
    case ErrorCode::NonFiniteOcv: return "NonFiniteOcv";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::PoleEvaluation: return "PoleEvaluation";
    case ErrorCode::DegenerateBank: return "DegenerateBank";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfSupport: return "OutOfSupport";
    case ErrorCode::BadOrder: return "BadOrder";
    case ErrorCode::UnsortedInput: return "UnsortedInput";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::MaxItersExceeded: return "MaxItersExceeded";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::SvdFailure: return "SvdFailure";
    case ErrorCode::DegenerateP: return "DegenerateP";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ComplexTimeConstants: return "ComplexTimeConstants";
    case ErrorCode::NonPhysical: return "NonPhysical";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::AllSolvesFailed: return "AllSolvesFailed";
    case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Exception carrying a machine-readable code. Every failure raised by the
/// library is an `Error`; callers branch on `code()`.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what)
{
    if (!condition) {
        fail(code, what);
    }
}

} // namespace ecmid

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stprev {

enum class ErrorKind {
    // input validation
    MissingColumn,
    NonNumericCell,
    InvalidCount,
    PoleProximity,
    AgeOrder,
    InvalidParam,
    InvalidArgument,
    ModeMismatch,
    GridMismatch,
    SketchOnly,
    Io,
    // numerical failures
    DomainError,
    NotPositiveDefinite,
    OptimFailed,
    Separation,
    NonConvergence,
    EmptyBins,
    DegenerateWeights,
    SingularHessian,
    NonFiniteDensity,
    TooManyFailures,
};

constexpr std::string_view to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::InvalidCount: return "InvalidCount";
    case ErrorKind::PoleProximity: return "PoleProximity";
    case ErrorKind::AgeOrder: return "AgeOrder";
    case ErrorKind::InvalidParam: return "InvalidParam";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ModeMismatch: return "ModeMismatch";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::SketchOnly: return "SketchOnly";
    case ErrorKind::Io: return "Io";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::OptimFailed: return "OptimFailed";
    case ErrorKind::Separation: return "Separation";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::EmptyBins: return "EmptyBins";
    case ErrorKind::DegenerateWeights: return "DegenerateWeights";
    case ErrorKind::SingularHessian: return "SingularHessian";
    case ErrorKind::NonFiniteDensity: return "NonFiniteDensity";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a kind so that callers (the CLI
/// in particular) can map it onto an exit status without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    bool is_validation() const noexcept {
        switch (kind_) {
        case ErrorKind::MissingColumn:
        case ErrorKind::NonNumericCell:
        case ErrorKind::InvalidCount:
        case ErrorKind::PoleProximity:
        case ErrorKind::AgeOrder:
        case ErrorKind::InvalidParam:
        case ErrorKind::InvalidArgument:
        case ErrorKind::ModeMismatch:
        case ErrorKind::GridMismatch:
        case ErrorKind::SketchOnly:
        case ErrorKind::Io:
            return true;
        default:
            return false;
        }
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace stprev

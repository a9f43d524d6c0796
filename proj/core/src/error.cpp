#include "slicerecon/error.hpp"

namespace slicerecon {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyVolume: return "EmptyVolume";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::InvalidTransform: return "InvalidTransform";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NoPeaks: return "NoPeaks";
    case ErrorCode::InsufficientGrid: return "InsufficientGrid";
    case ErrorCode::InsufficientSlices: return "InsufficientSlices";
    case ErrorCode::UncalibratedStack: return "UncalibratedStack";
    case ErrorCode::UndefinedCorrelation: return "UndefinedCorrelation";
    case ErrorCode::NumericalDivergence: return "NumericalDivergence";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

} // namespace slicerecon

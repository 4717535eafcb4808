#include "focusgate/error.hpp"

namespace focusgate {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::TruncatedPayload: return "TruncatedPayload";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::RowSumOutOfTolerance: return "RowSumOutOfTolerance";
        case ErrorCode::InvalidHeader: return "InvalidHeader";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::Io: return "Io";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DegenerateKernel: return "DegenerateKernel";
        case ErrorCode::KernelNotPsd: return "KernelNotPsd";
        case ErrorCode::AllSuppressed: return "AllSuppressed";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::UnknownImageId: return "UnknownImageId";
    }
    return "Unknown";
}

}  // namespace focusgate

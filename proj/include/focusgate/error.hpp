#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace focusgate {

enum class ErrorCode {
    BadMagic,
    UnsupportedVersion,
    TruncatedPayload,
    NonFiniteValue,
    RowSumOutOfTolerance,
    InvalidHeader,
    ShapeMismatch,
    Io,
    InvalidArgument,
    DegenerateKernel,
    KernelNotPsd,
    AllSuppressed,
    EmptyInput,
    UnknownImageId,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the library is reported as focusgate::Error.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace focusgate

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace alseg {

enum class ErrorCode {
    InvalidArgument,
    OutOfRange,
    SizeMismatch,
    UnknownDType,
    Io,
    Corrupt,
    VersionMismatch,
    SingleClass,
    Infeasible,
    NotConverged,
    NotTrained,
    NotComputed,
    Busy,
    NotFound,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace alseg

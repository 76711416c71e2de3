#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace critmap {

enum class ErrorKind {
    shape,
    parameter,
    config,
    lookup,
    target,
    alignment,
    degenerate,
    training,
    io,
    bad_magic,
    truncated,
    version_mismatch,
    shape_mismatch,
    validation,
    misaligned,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so that
/// callers (and tests) can branch on the category instead of the message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool cond, ErrorKind kind, const std::string& message) {
    if (!cond) fail(kind, message);
}

}  // namespace critmap

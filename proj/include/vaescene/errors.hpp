#pragma once

#include <stdexcept>
#include <string>

namespace vaescene {

// Shape/contract violations: mismatched operand shapes, bad config values.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where the contract requires finite ones.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// On-disk format problems: bad magic, truncated payload, version mismatch.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failures (open/read/write).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vaescene

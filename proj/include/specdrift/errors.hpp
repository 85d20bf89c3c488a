#pragma once

#include <stdexcept>
#include <string>

namespace specdrift {

// Shape/axis mismatches between operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration (band counts, ratios, JSON schema...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed binary files; carries the byte offset where parsing failed.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace specdrift

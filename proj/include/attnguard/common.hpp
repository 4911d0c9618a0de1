// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attnguard {

inline constexpr std::string_view kToolVersion = "attnguard 0.1.0";

// Finite stand-in for -inf in attention logits; keeps every kernel total.
inline constexpr double kNegSentinel = -1e9;
// A softmax row whose entries all sit at or below this is considered degenerate.
inline constexpr double kDegenerateRowThreshold = -1e8;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct DegenerateRowError : Error { using Error::Error; };
struct ProvenanceError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct LayoutError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct CorruptionError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct TraceError : Error { using Error::Error; };
struct CalibrationError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct UndefinedRateError : Error { using Error::Error; };
struct OnsetNotFoundError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace attnguard

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mixq {

// Error taxonomy. The CLI maps these onto process exit codes, so new
// failure modes should reuse one of the existing categories.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgument : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by dataset ingestion; carries file and line context in the message.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AccumulatorOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, int64_t epoch_index)
        : std::runtime_error(msg), epoch(epoch_index) {}
    int64_t epoch;
};

// All randomness in the library flows through explicitly seeded engines.
using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

}  // namespace mixq

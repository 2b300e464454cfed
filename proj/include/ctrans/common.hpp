#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ctrans {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map library failures to exit codes in one place.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes that cannot be combined (matmul inner dims, norm residuals, ...).
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Inputs that are structurally too small for the requested operation
// (pooling window larger than the input, empty key sets, short streams).
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration values or combinations.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed external data (bad encodings, out-of-range token ids, corrupt files).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// API misuse (e.g. backward on a non-scalar).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Runtime faults during optimisation (non-finite losses or gradients).
struct TrainingFault : Error {
    explicit TrainingFault(const std::string& msg) : Error(msg) {}
};

// Numeric precision of a graph. The whole numeric stack is templated on the
// element type; this enum only exists so configs and tools can talk about it.
enum class Precision { Single, Double };

template <class T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "only float and double element types are supported");
    return std::is_same_v<T, float> ? Precision::Single : Precision::Double;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic per-(seed, stream, step) generator. Every stochastic choice in
// the project draws from one of these, so a run can be reproduced or resumed
// from a checkpoint without serialising engine state.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream, uint64_t step = 0) {
    uint64_t s = splitmix64(seed ^ splitmix64(stream ^ splitmix64(step)));
    return std::mt19937_64(s);
}

}  // namespace ctrans

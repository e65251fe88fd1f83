#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace djsr {

// ===== Error taxonomy =====
// Every failure surfaces as one of these; callers can catch the base class.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/size mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// An operation produced NaN/Inf, or consumed one where finiteness is required.
struct NumericError : Error {
    using Error::Error;
};

// API misuse (non-scalar loss, missing gradient, tape misuse, ...).
struct ContractError : Error {
    using Error::Error;
};

// Invalid argument value (negative sigma, zero stride, ...).
struct ArgumentError : Error {
    using Error::Error;
};

// Inconsistent model/training configuration.
struct ConfigError : Error {
    using Error::Error;
};

// I/O failure or damaged file contents.
struct IoError : Error {
    using Error::Error;
};
struct CorruptFileError : IoError {
    using IoError::IoError;
};
struct VersionError : IoError {
    using IoError::IoError;
};

// Training loop abort (non-finite loss/gradient) carrying the offending step.
struct TrainingAborted : Error {
    TrainingAborted(const std::string& what, uint64_t step) : Error(what), step_(step) {}
    uint64_t step() const { return step_; }

  private:
    uint64_t step_;
};

// ===== Deterministic RNG helpers =====
// std::mt19937_64 is bit-specified by the standard; the distributions are not,
// so uniform/normal draws are built here from raw engine output.

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mixes (seed, index) into an independent stream seed; pure function.
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
    return splitmix64(s);
}

// Uniform double in [0, 1) from 53 random bits.
template <typename Engine>
double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n); n must be positive. Modulo bias is < 2^-53 for
// the sizes used here.
template <typename Engine>
uint64_t uniform_below(Engine& eng, uint64_t n) {
    return eng() % n;
}

// Box-Muller normal draw; identical sequence on every platform.
template <typename Engine>
double normal01(Engine& eng) {
    double u1 = 0.0;
    do {
        u1 = uniform01(eng);
    } while (u1 <= 0.0);
    double u2 = uniform01(eng);
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

// ===== Thread pool =====
// Work is split into contiguous index chunks; every index is processed by
// exactly one worker with a fixed per-index execution order, so results do
// not depend on the number of threads. DJSR_THREADS caps the pool size.

int max_threads();

// fn(begin, end, worker) over a partition of [0, n); worker in [0, max_threads()).
void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn);

// Per-worker scratch buffer, persistent across calls.
std::vector<float>& worker_scratch(int worker);

}  // namespace djsr

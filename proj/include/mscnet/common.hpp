#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mscnet {

// Tensor scalar type. Verification builds use 64-bit so finite-difference
// checks have headroom; define MSCNET_REAL32 for 32-bit training builds.
#ifdef MSCNET_REAL32
using real = float;
#else
using real = double;
#endif

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed/corrupt file contents (bad magic, truncation, CRC mismatch).
struct FormatError : IoError {
    using IoError::IoError;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// When enabled, every primitive op scans its output for NaN/Inf and throws
// NumericalError naming the op. Off by default (it is a debugging aid).
bool finite_checks_enabled();
void set_finite_checks(bool on);

// Deterministic random source. Distribution objects are created per call so
// results depend only on the engine state, never on call interleaving.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    // Uniform integer in [0, n).
    uint64_t integer(uint64_t n) {
        return std::uniform_int_distribution<uint64_t>(0, n - 1)(gen_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }
    uint64_t raw() { return gen_(); }

    // Independent stream derived from this one (splitmix-style), so consumers
    // cannot perturb each other's draw sequences.
    Rng fork() {
        uint64_t z = gen_() + 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace mscnet

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace crdt {

// Deterministic splittable RNG. Streams are derived by hashing the parent
// seed with a label (or index), so independent modules can draw from
// independent streams that never interleave. The generator itself is
// xoshiro256** with explicit uniform/normal constructions, keeping the
// byte-for-byte sequence independent of the standard library
// implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01();

    // Uniform in [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller (caches the spare draw).
    double normal();
    double normal(double mean, double stddev);

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Bernoulli(p).
    bool bernoulli(double p);

    // Child stream derived from this stream's seed and a label/index.
    Rng split(std::string_view label) const;
    Rng split(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace crdt

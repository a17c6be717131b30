#pragma once

#include <array>
#include <cstdint>

namespace diwa {

/// Deterministic 64-bit PRNG: xoshiro256++ state expanded from a seed via
/// splitmix64. All stochastic draws in the pipeline come from instances of
/// this class, so runs are bit-reproducible given (seed, draw order).
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    /// Uniform double in [0, 1).
    double uniform();

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n);

    /// Standard normal via Box-Muller. Each call consumes two uniform
    /// draws and returns one value; no cached spare, so the stream state
    /// is exactly the four xoshiro words.
    double normal();

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

    /// Decorrelated sub-seed for item `index` under a corpus seed.
    static uint64_t derive(uint64_t seed, uint64_t index);

private:
    std::array<uint64_t, 4> s_{};
};

}  // namespace diwa

#pragma once

#include <cstdint>
#include <string_view>

namespace msfpt {

/// FNV-1a 64-bit hash, used to derive independent RNG streams from names.
std::uint64_t hash_name(std::string_view name) noexcept;

/// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Counter-based generator: draw i of stream (seed, key) is
/// splitmix64(seed_mix(seed, key) + i * golden_gamma). Any draw can be
/// recomputed from (seed, key, i) alone, so results never depend on the
/// order in which streams are consumed. Distribution sampling is done here
/// rather than through <random> so values are identical on every platform.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t key) noexcept;
    CounterRng(std::uint64_t seed, std::string_view stream) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    /// Box-Muller; consumes two draws per call.
    double normal(double mean, double stddev) noexcept;
    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

}  // namespace msfpt

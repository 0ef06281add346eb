#include "msfpt/rng.hpp"

#include <cmath>
#include <numbers>

namespace msfpt {

namespace {
constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += kGoldenGamma;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t key) noexcept
    : base_(splitmix64(splitmix64(seed) ^ key)) {}

CounterRng::CounterRng(std::uint64_t seed, std::string_view stream) noexcept
    : CounterRng(seed, hash_name(stream)) {}

std::uint64_t CounterRng::next_u64() noexcept {
    return splitmix64(base_ + (counter_++) * kGoldenGamma);
}

double CounterRng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
}

double CounterRng::normal(double mean, double stddev) noexcept {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) noexcept {
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

}  // namespace msfpt

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace spcnn {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

/// Seed for sub-stream `stream` of `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

/// Deterministic random source. Only the raw mt19937_64 output is used (its
/// sequence is fixed by the standard); every distribution is implemented here
/// so results do not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); rejection sampling, unbiased.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace spcnn

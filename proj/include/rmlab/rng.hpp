#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace rmlab {

// Deterministic pseudo-random generator (xoshiro256++) with explicit seeding.
//
// Everything stochastic in this project flows through this class so that a run
// is reproducible from a single 64-bit master seed, independent of platform,
// standard library, and thread count. Distribution code (normal draws,
// shuffles, rejection bounds) is implemented here instead of via <random>
// because libstdc++/libc++ do not guarantee identical streams for their
// distribution adapters.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01();

    // Uniform in [lo, hi).
    double uniform(double lo, double hi);

    // Unbiased integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; draws are cached in pairs.
    double normal();
    double normal(double mean, double stddev);

    // Gumbel(0, 1) draw, used for top-k sampling without replacement.
    double gumbel();

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            if (i != j) std::swap(v[i], v[j]);
        }
    }

    // k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::uint64_t state_[4];
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

// 64-bit mix of a master seed and a purpose tag. Independent subsystems draw
// from independent streams: stream(seed, "prompts"), stream(seed, "gold"), ...
std::uint64_t derive_stream_seed(std::uint64_t master, std::string_view tag);

Rng stream(std::uint64_t master, std::string_view tag);

}  // namespace rmlab

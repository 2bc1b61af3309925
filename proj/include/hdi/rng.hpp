#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "hdi/stats.hpp"

namespace hdi {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Philox4x32-10 counter-based generator (Salmon et al., 2011).
// The draw sequence is a pure function of (base_seed, rep_index,
// substream_label): the key mixes seed and label, the counter's high
// lanes hold rep_index, and the low lanes advance per block. No state
// is shared between streams, so draws are identical under any thread
// schedule.
class RngStream {
public:
    RngStream(std::uint64_t base_seed, std::uint64_t rep_index, std::string_view substream_label)
        : base_seed_(base_seed), rep_index_(rep_index), label_(substream_label) {
        const std::uint64_t k = detail::splitmix64(base_seed ^ detail::splitmix64(detail::fnv1a64(substream_label)));
        key_[0] = static_cast<std::uint32_t>(k);
        key_[1] = static_cast<std::uint32_t>(k >> 32);
    }

    std::uint64_t base_seed() const { return base_seed_; }
    std::uint64_t rep_index() const { return rep_index_; }
    const std::string& substream_label() const { return label_; }

    std::uint32_t next_u32() {
        if (lane_ == 4) {
            block_ = philox_block(counter_);
            ++counter_;
            lane_ = 0;
        }
        return block_[lane_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t lo = next_u32();
        const std::uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Strictly inside (0,1): 53 mantissa bits offset by half an ulp,
    // safe to feed the inverse normal CDF.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return inv_normal_cdf(uniform()); }

    // t(5)/sqrt(5/3): unit-variance Student-t(5). Consumes a fixed six
    // normals per draw: Z * sqrt(3 / chi2_5).
    double t5_scaled() {
        const double z = normal();
        double w = 0.0;
        for (int i = 0; i < 5; ++i) {
            const double g = normal();
            w += g * g;
        }
        return z * std::sqrt(3.0 / w);
    }

    double bernoulli(double prob) { return uniform() < prob ? 1.0 : 0.0; }

private:
    std::array<std::uint32_t, 4> philox_block(std::uint64_t block_index) const {
        std::uint32_t c0 = static_cast<std::uint32_t>(block_index);
        std::uint32_t c1 = static_cast<std::uint32_t>(block_index >> 32);
        std::uint32_t c2 = static_cast<std::uint32_t>(rep_index_);
        std::uint32_t c3 = static_cast<std::uint32_t>(rep_index_ >> 32);
        std::uint32_t k0 = key_[0], k1 = key_[1];
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = 0xD2511F53ULL * c0;
            const std::uint64_t p1 = 0xCD9E8D57ULL * c2;
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            const std::uint32_t n0 = hi1 ^ c1 ^ k0;
            const std::uint32_t n1 = lo1;
            const std::uint32_t n2 = hi0 ^ c3 ^ k1;
            const std::uint32_t n3 = lo0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return {c0, c1, c2, c3};
    }

    std::uint64_t base_seed_;
    std::uint64_t rep_index_;
    std::string label_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int lane_ = 4;
};

}  // namespace hdi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace attnguard {

// PCG-XSH-RR 64/32 (pcg32). One instance per (seed, stream) pair; streams keep
// the pipeline stages (dataset, init, shuffle, ...) decoupled.
class Pcg32 {
public:
    Pcg32(uint64_t seed, uint64_t stream) {
        inc_ = (stream << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ull + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // [0, 1) with 53 bits of entropy.
    double next_double() {
        uint64_t hi = next_u32() >> 5;   // 27 bits
        uint64_t lo = next_u32() >> 6;   // 26 bits
        return static_cast<double>((hi << 26) | lo) * (1.0 / 9007199254740992.0);
    }

    // Unbiased integer in [0, bound) via rejection.
    uint32_t next_below(uint32_t bound) {
        uint32_t threshold = (-bound) % bound;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 1e-300);
        u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_below(static_cast<uint32_t>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fixed stream ids; adding new stages must not renumber existing ones or
// previously recorded runs stop reproducing.
namespace rng_stream {
inline constexpr uint64_t kInit = 0;
inline constexpr uint64_t kTrainData = 1;
inline constexpr uint64_t kTrainShuffle = 2;
inline constexpr uint64_t kValData = 3;
inline constexpr uint64_t kTestClean = 4;
inline constexpr uint64_t kTestPoison = 5;
inline constexpr uint64_t kPoisonSelect = 6;
inline constexpr uint64_t kRandomPrune = 7;
inline constexpr uint64_t kTokenNoise = 8;
inline constexpr uint64_t kGradCheck = 9;
inline constexpr uint64_t kPretrainData = 10;
} // namespace rng_stream

} // namespace attnguard

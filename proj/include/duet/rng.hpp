#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is drawn from a Philox4x32-10 stream
// identified by a 64-bit key (the run seed) and a 64-bit stream id (what is
// being drawn). Variates are produced by fully specified transforms so other
// implementations can reproduce the exact streams:
//
//   uniform01   : (u64 >> 11) * 2^-53, u64 = (word0 << 32) | word1
//   open01      : ((u64 >> 11) + 0.5) * 2^-53
//   normal      : Box-Muller, cos branch first then the cached sin branch
//   gamma(a, 1) : Marsaglia-Tsang; for a < 1, gamma(a + 1) * open01^(1/a)

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace duet {

class Philox4x32 {
public:
    using result_type = std::uint64_t;

    Philox4x32(std::uint64_t key, std::uint64_t stream) noexcept
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          stream_(stream) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (pos_ >= 4) {
            block_ = generate(counter_++);
            pos_ = 0;
        }
        const std::uint64_t hi = block_[pos_];
        const std::uint64_t lo = block_[pos_ + 1];
        pos_ += 2;
        return (hi << 32) | lo;
    }

    double uniform01() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double open01() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = open01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Gamma(shape, 1) variate.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(open01(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double z;
            double v;
            do {
                z = normal();
                v = 1.0 + c * z;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = open01();
            if (u < 1.0 - 0.0331 * z * z * z * z) return d * v;
            if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do {
            x = (*this)();
        } while (x >= limit);
        return x % n;
    }

private:
    static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
        const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        hi = static_cast<std::uint32_t>(p >> 32);
        lo = static_cast<std::uint32_t>(p);
    }

    std::array<std::uint32_t, 4> generate(std::uint64_t counter) const noexcept {
        std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(counter),
                                       static_cast<std::uint32_t>(counter >> 32),
                                       static_cast<std::uint32_t>(stream_),
                                       static_cast<std::uint32_t>(stream_ >> 32)};
        std::array<std::uint32_t, 2> k = key_;
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                k[0] += 0x9E3779B9u;
                k[1] += 0xBB67AE85u;
            }
            std::uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, c[0], hi0, lo0);
            mulhilo(0xCD9E8D57u, c[2], hi1, lo1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        }
        return c;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int pos_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// SplitMix64 finalizer; used to combine identifiers into keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) noexcept { return mix64(a ^ mix64(b)); }

/// FNV-1a, for turning names into stream components.
constexpr std::uint64_t hash_name(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Stream ids for the different random quantities drawn from one seed.
namespace stream {
constexpr std::uint64_t graph = 1;
constexpr std::uint64_t mechanism = 2;
constexpr std::uint64_t source_params = 3;
constexpr std::uint64_t rescalings = 4;
constexpr std::uint64_t sources(int env_index) noexcept {
    return (std::uint64_t{0x5eed} << 32) | static_cast<std::uint32_t>(env_index);
}
} // namespace stream

} // namespace duet

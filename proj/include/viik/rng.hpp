#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace viik::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Derives an independent stream seed from a master seed, a stream tag and up
/// to two counters. Every stochastic stage keys its stream this way, so runs
/// are reproducible regardless of scheduling.
inline std::uint64_t derive(std::uint64_t master, std::string_view tag,
                            std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = master ^ fnv1a(tag);
    splitmix64(s);
    s ^= 0x9e3779b97f4a7c15ull * (a + 1);
    splitmix64(s);
    s ^= 0xc2b2ae3d27d4eb4full * (b + 1);
    return splitmix64(s);
}

/// Deterministic random stream. The engine is the standardized mt19937_64 and
/// all distributions are implemented here (stdlib distributions are not
/// bit-portable across implementations).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive. Unbiased (Lemire rejection).
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        std::uint64_t span = hi - lo + 1;
        if (span == 0) return next_u64();  // full range
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * span;
        auto low = static_cast<std::uint64_t>(m);
        if (low < span) {
            std::uint64_t t = (0 - span) % span;
            while (low < t) {
                m = static_cast<unsigned __int128>(next_u64()) * span;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return lo + static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller; the second draw of each pair is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace viik::rng

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "scribblediff/grid.hpp"

namespace scribblediff {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Key derivation for named, order-independent rng streams. Every stream in
// the project is keyed as derive_seed(parent, tag, index...) so results do
// not depend on scheduling or worker count.
inline uint64_t derive_seed(uint64_t a) { return splitmix64(a); }
template <class... Rest>
inline uint64_t derive_seed(uint64_t a, uint64_t b, Rest... rest) {
    return derive_seed(splitmix64(a ^ splitmix64(b + 0x165667b19e3779f9ULL)), rest...);
}

inline uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}
inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// xoshiro256++ with splitmix64 seeding. std::normal_distribution is
// implementation-defined, so normal draws use an explicit Box-Muller form.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) {
            x = splitmix64(x + 0x9e3779b97f4a7c15ULL);
            si = x;
        }
    }

    uint64_t next() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0,1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // inclusive range; modulo bias negligible for the small ranges used here
    // but use rejection anyway to keep draws exact.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586477 * u2);
    }

    void fill_normal(Grid& g) {
        for (auto& x : g.v) x = static_cast<float>(normal());
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

inline Grid normal_grid(int c, int h, int w, Rng& rng) {
    Grid g(c, h, w);
    rng.fill_normal(g);
    return g;
}

}  // namespace scribblediff

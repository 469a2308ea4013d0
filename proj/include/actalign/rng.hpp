#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "actalign/error.hpp"

namespace actalign {

// Deterministic across compilers and platforms, unlike <random> distributions.
// Every stochastic choice in the project goes through this file so that a
// (seed, inputs) pair pins the output bytes.

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Mixes a base seed with salts (step counters, ids) into an independent stream seed.
inline uint64_t derive_seed(uint64_t base, uint64_t salt_a, uint64_t salt_b = 0) {
    uint64_t s = base ^ (salt_a * 0xd1342543de82ef95ULL) ^ (salt_b * 0xaf251af3b0f025b5ULL);
    splitmix64(s);
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1) with 53 bits of entropy.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [0, n). Rejection-free Lemire reduction; bias is negligible at desk scale.
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw value_error("Rng::bounded: n must be positive");
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (stateful pair cache).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        if (v.empty()) throw value_error("Rng::pick: empty choice set");
        return v[static_cast<size_t>(bounded(v.size()))];
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace actalign

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "attnmd/linalg.hpp"

namespace attnmd {

struct RngSeed {
    std::uint64_t seed = 0;
};

/// Deterministic splitmix64 generator, threaded by value. No global state;
/// identical seed gives an identical stream on every platform.
class Rng {
public:
    explicit Rng(RngSeed s) : state_(s.seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller (explicit formula for portability).
    double next_gaussian() {
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// -1 or +1 with equal probability.
    int next_sign() { return (next_u64() & 1u) ? 1 : -1; }

private:
    std::uint64_t state_;
};

/// Uniform draw from the unit sphere in R^d (Gaussian direction, normalized).
inline Vector unit_sphere_vector(std::size_t d, Rng& rng) {
    require(d >= 1, "unit_sphere_vector: d must be at least 1");
    Vector v(d);
    double norm = 0.0;
    do {
        for (std::size_t i = 0; i < d; ++i) v[i] = rng.next_gaussian();
        norm = euclidean_norm(v);
    } while (norm < 1e-12);
    for (std::size_t i = 0; i < d; ++i) v[i] /= norm;
    return v;
}

}  // namespace attnmd

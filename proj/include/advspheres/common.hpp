#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace advspheres {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Error hierarchy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed, missing or degenerate data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Divergence, non-finite values, failed factorizations (exit code 4).
class NumericalError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Stable scalar primitives. Every log-probability in the library goes through
// these; log(sigmoid(a)) is never formed directly.

/// log(1 + exp(t)) without overflow or loss of the small tail.
inline double softplus(double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double log_sigmoid(double a) { return -softplus(-a); }

/// Logistic function written so that sigmoid(a) + sigmoid(-a) rounds to 1.
inline double sigmoid(double a) {
    const double e = std::exp(-std::abs(a));
    const double small = e / (1.0 + e);
    return a >= 0.0 ? 1.0 - small : small;
}

/// Elementwise sigmoid with the same rounding behaviour as sigmoid().
inline Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& a) {
    const Eigen::ArrayXd e = (-a.abs()).exp();
    const Eigen::ArrayXd small = e / (1.0 + e);
    return (a >= 0.0).select(1.0 - small, small);
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log N(x; mean, sd^2), normalization included.
inline double log_normal(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

/// Sum of -softplus(-m) over a margin vector, vectorized through Eigen.
inline double sum_log_sigmoid(const Eigen::ArrayXd& margins) {
    return -((-margins).max(0.0) + (-margins.abs()).exp().log1p()).sum();
}

// ---------------------------------------------------------------------------
// Seed derivation. All randomness descends from one top-level seed.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a; stable across platforms, used for tag hashing and config fingerprints.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) + index);
}

/// Standard-normal vector of length n.
inline Vector standard_normal(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out[i] = normal(rng);
    }
    return out;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace advspheres

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace reclm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ColdItemError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingProfileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProviderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for artifact hashing and the hashed bag-of-tokens encoder.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), seed);
}

// Derives a per-subject RNG from a global seed so work parallelizes per subject.
inline Rng sub_rng(std::uint64_t global_seed, std::uint64_t subject) {
    std::uint64_t mix = global_seed;
    mix = fnv1a(&subject, sizeof(subject), mix ^ 0x9e3779b97f4a7c15ull);
    return Rng(mix);
}

inline void require_finite(const Eigen::Ref<const Mat>& m, const std::string& what) {
    if (!m.allFinite()) throw DimensionError(what + ": non-finite entries");
}

inline void xavier_init(Mat& w, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
}

}  // namespace reclm

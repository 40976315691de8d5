#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace qpat {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline constexpr double two_pi = 6.283185307179586476925286766559;

/// Instrumentation counters for the cost contracts (single-threaded).
struct Counters {
    std::uint64_t rte_solves = 0;
    std::uint64_t rte_adjoint_solves = 0;
    std::uint64_t transport_applies = 0;
    std::uint64_t transport_transpose_applies = 0;
    std::uint64_t wave_applies = 0;
    std::uint64_t wave_adjoint_applies = 0;

    void reset() { *this = Counters{}; }
};

inline Counters& counters() {
    static Counters c;
    return c;
}

/// FNV-1a 64-bit over raw bytes; used for content digests and coefficient
/// fingerprints (cache invalidation keys).
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fingerprint(const Vec& a) {
    return fnv1a64(a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
}

inline std::uint64_t fingerprint(const Vec& a, const Vec& b) {
    std::uint64_t h = fnv1a64(a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
    return fnv1a64(b.data(), sizeof(double) * static_cast<std::size_t>(b.size()), h);
}

/// Seeded RNG with a platform-independent normal sampler (Box-Muller on
/// mt19937_64), so seeded runs are bit-reproducible across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform integer in [0, n).
    int uniform_index(int n) {
        return static_cast<int>(next_unit() * n) % n;
    }

    /// Uniform double in [0, 1).
    double next_unit() {
        return (engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_unit();
        } while (u1 <= 1e-300);
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(two_pi * u2);
        has_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace qpat

#pragma once

#include <cmath>

#include "qpat/core.hpp"
#include "qpat/grid.hpp"

namespace qpat {

/// Two-dimensional Henyey-Greenstein phase function. The argument of the
/// kernel is the cosine of the enclosed angle, i.e. theta . theta' for unit
/// vectors. Normalized so that the integral over the circle equals one.
inline double hg_value(const Vec2& theta, const Vec2& theta_prime, double g) {
    require(std::abs(g) < 1.0, "hg_value: anisotropy factor must satisfy |g| < 1");
    const double c = theta.dot(theta_prime);
    return (1.0 / two_pi) * (1.0 - g * g) / (1.0 + g * g - 2.0 * g * c);
}

/// Discretized scattering operator: matrix(j,l) ~ k(theta_j, theta_l) * w with
/// rows renormalized to sum to one, so (I - K) annihilates direction-constant
/// fields exactly.
struct ScatteringKernel {
    double g = 0.0;
    Mat matrix; // n_theta x n_theta, row-stochastic

    int n_theta() const { return static_cast<int>(matrix.rows()); }

    /// Applies K along the direction index of a node x direction field.
    Mat apply(const Mat& phi) const {
        require(phi.cols() == matrix.rows(),
                "ScatteringKernel::apply: direction count mismatch");
        return phi * matrix.transpose();
    }
};

inline ScatteringKernel build_kernel(const AngularGrid& angles, double g) {
    require(std::abs(g) < 1.0, "build_kernel: anisotropy factor must satisfy |g| < 1");
    ScatteringKernel k;
    k.g = g;
    const int n = angles.n_theta;
    k.matrix.resize(n, n);
    for (int j = 0; j < n; ++j)
        for (int l = 0; l < n; ++l)
            k.matrix(j, l) = hg_value(angles.directions[j], angles.directions[l], g) * angles.weight;
    for (int j = 0; j < n; ++j) k.matrix.row(j) /= k.matrix.row(j).sum();
    return k;
}

} // namespace qpat

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "qpat/core.hpp"
#include "qpat/fields.hpp"
#include "qpat/grid.hpp"

namespace qpat {

/// Gauss-Legendre nodes/weights on [a,b] (Newton on the Legendre recurrence).
inline void gauss_legendre(int n, double a, double b, std::vector<double>& x,
                           std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        const double xm = 0.5 * (b + a), xl = 0.5 * (b - a);
        x[i] = xm - xl * z;
        x[n - 1 - i] = xm + xl * z;
        w[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
}

/// Detectors on the circle of radius R with a uniform time grid; arcs are the
/// half-circles facing each side of the square.
struct DetectorGeometry {
    double radius = 1.8;
    int n_detectors = 128;
    double dt = 0.025;
    int n_t = 161; // samples at t = 0, dt, ..., (n_t-1) dt
    std::vector<Vec2> positions;
    std::vector<double> angles;

    double t_max() const { return (n_t - 1) * dt; }
    double arc_weight() const { return two_pi * radius / n_detectors; }
    double time(int k) const { return k * dt; }

    std::vector<int> arc(Side side) const {
        const Vec2 nu = outward_normal(side);
        std::vector<int> out;
        for (int d = 0; d < n_detectors; ++d)
            if (positions[d].dot(nu) > 0.0) out.push_back(d);
        return out;
    }
};

inline DetectorGeometry make_geometry(double radius, int n_detectors, double dt, double t_max) {
    require(radius > std::sqrt(2.0), "make_geometry: need R > sqrt(2) so that B_R contains Omega");
    require(n_detectors >= 4 && n_detectors % 2 == 0, "make_geometry: need an even detector count");
    require(dt > 0.0, "make_geometry: dt must be positive");
    require(t_max >= 2.0 * radius, "make_geometry: need T >= 2R so waves exit the ball");
    DetectorGeometry g;
    g.radius = radius;
    g.n_detectors = n_detectors;
    g.dt = dt;
    g.n_t = static_cast<int>(std::floor(t_max / dt + 1e-9)) + 1;
    g.positions.reserve(n_detectors);
    g.angles.reserve(n_detectors);
    for (int d = 0; d < n_detectors; ++d) {
        const double a = two_pi * (d + 0.5) / n_detectors;
        g.angles.push_back(a);
        g.positions.push_back(Vec2{radius * std::cos(a), radius * std::sin(a)});
    }
    return g;
}

/// Active (detector, time) window Lambda_i x (0, T_i).
struct ArcMask {
    std::vector<int> detectors;
    int n_t_active = 0; // samples with t <= T_i

    std::vector<bool> detector_flags(int n_detectors) const {
        std::vector<bool> f(n_detectors, false);
        for (int d : detectors) f[d] = true;
        return f;
    }
};

/// Detector x time pressure samples, optionally restricted to a mask
/// (entries outside the mask are exactly zero).
struct PressureData {
    Mat values; // n_detectors x n_t
    std::optional<ArcMask> mask;
};

/// t-weighted data-space inner product.
inline double dot_Y(const DetectorGeometry& g, const Mat& u, const Mat& v) {
    double s = 0.0;
    for (int k = 0; k < g.n_t; ++k) s += g.time(k) * u.col(k).dot(v.col(k));
    return s * g.dt * g.arc_weight();
}

inline double dot_Y(const DetectorGeometry& g, const PressureData& u, const PressureData& v) {
    return dot_Y(g, u.values, v.values);
}

inline double norm_Y(const DetectorGeometry& g, const PressureData& u) {
    return std::sqrt(dot_Y(g, u.values, u.values));
}

/// Restriction chi_{Lambda_i x (0,T_i)}: zero outside, identity inside.
inline PressureData restrict_data(const PressureData& v, const DetectorGeometry& g,
                                  const std::vector<int>& arc, double horizon) {
    PressureData out;
    out.values = Mat::Zero(v.values.rows(), v.values.cols());
    ArcMask m;
    m.detectors = arc;
    m.n_t_active = std::min<int>(g.n_t, static_cast<int>(std::floor(horizon / g.dt + 1e-9)) + 1);
    for (int d : arc) out.values.row(d).head(m.n_t_active) = v.values.row(d).head(m.n_t_active);
    out.mask = m;
    return out;
}

inline void apply_mask(Mat& values, const ArcMask& m) {
    Mat kept = Mat::Zero(values.rows(), values.cols());
    for (int d : m.detectors) kept.row(d).head(m.n_t_active) = values.row(d).head(m.n_t_active);
    values.swap(kept);
}

/// Quadrature resolution for the spherical-means integral. Nonpositive
/// counts are resolved from the mesh ("auto"): node spacing along the rings
/// and in radius of about `spacing * h`, which keeps the error of integrating
/// the piecewise-linear interpolant at the percent level and halves with the
/// spacing factor.
struct WaveQuadrature {
    int n_radial = 0;    // Gauss-Legendre nodes in the r = t sin(s) substitution
    int n_angular = 0;   // uniform nodes on the ring
    double spacing = 0.5;

    WaveQuadrature() = default;
    WaveQuadrature(int nr, int na, double sp = 0.5) : n_radial(nr), n_angular(na), spacing(sp) {}

    WaveQuadrature resolved(double h, double reach) const {
        WaveQuadrature q = *this;
        const double target = spacing * h;
        if (q.n_radial <= 0)
            q.n_radial = std::max(16, static_cast<int>(std::ceil(0.5 * M_PI * reach / target)));
        if (q.n_angular <= 0) {
            int n = std::max(64, static_cast<int>(std::ceil(two_pi * reach / target)));
            q.n_angular = ((n + 7) / 8) * 8; // keep the ring set symmetric under the mesh group
        }
        return q;
    }
};

/**
 * Trace operator U of the 2-D free-space wave equation,
 *
 *   (U p0)(x,t) = (1/2pi) d/dt integral_{|y-x|<t} p0(y) / sqrt(t^2-|y-x|^2) dy.
 *
 * The r = t sin(s) substitution removes the inverse-square-root singularity
 * and fixes the integration domain, so the time derivative is taken under
 * the integral:
 *
 *   (U p0)(x,t) = (1/2pi) intint [ sin(s) p0(y) + t sin(s)^2 e(a) . grad p0(y) ] da ds,
 *   y = x + t sin(s) e(a),
 *
 * evaluated by Gauss-Legendre x uniform-ring quadrature on the P1 interpolant
 * (whose gradient is constant per triangle). Differentiating the quadrature
 * rather than finite-differencing neighboring times keeps the kinks of the
 * interpolant from being amplified by 1/dt. The operator can either stream
 * (no storage) or precompute the dense matrix; both paths evaluate the
 * identical quadrature and the adjoint is the exact weighted transpose.
 */
class WaveOperator {
  public:
    WaveOperator(const SpatialMesh& mesh, DetectorGeometry geometry,
                 WaveQuadrature quad = {}, bool store_matrix = false)
        : mesh_(mesh), geom_(std::move(geometry)) {
        quad_ = quad.resolved(mesh_.h, geom_.radius + std::sqrt(2.0));
        gauss_legendre(quad_.n_radial, 0.0, M_PI / 2.0, s_nodes_, s_weights_);
        sin_s_.resize(quad_.n_radial);
        for (int i = 0; i < quad_.n_radial; ++i) sin_s_[i] = std::sin(s_nodes_[i]);
        cos_a_.resize(quad_.n_angular);
        sin_a_.resize(quad_.n_angular);
        for (int i = 0; i < quad_.n_angular; ++i) {
            const double a = two_pi * i / quad_.n_angular;
            cos_a_[i] = std::cos(a);
            sin_a_[i] = std::sin(a);
        }
        alpha_weight_ = two_pi / quad_.n_angular;

        // the square subtends an angular cone (< pi) from every detector;
        // ring samples outside it cannot hit the domain
        cone_start_.resize(geom_.n_detectors);
        cone_count_.resize(geom_.n_detectors);
        for (int d = 0; d < geom_.n_detectors; ++d) {
            const Vec2& xd = geom_.positions[d];
            const double anchor = std::atan2(-xd.y(), -xd.x());
            double lo = 0.0, hi = 0.0;
            for (double cx : {-1.0, 1.0})
                for (double cy : {-1.0, 1.0}) {
                    double b = std::atan2(cy - xd.y(), cx - xd.x()) - anchor;
                    while (b > M_PI) b -= two_pi;
                    while (b < -M_PI) b += two_pi;
                    lo = std::min(lo, b);
                    hi = std::max(hi, b);
                }
            const double a0 = anchor + lo, a1 = anchor + hi;
            const int k0 = static_cast<int>(std::floor(a0 / alpha_weight_)) - 1;
            const int k1 = static_cast<int>(std::ceil(a1 / alpha_weight_)) + 1;
            cone_start_[d] = k0;
            cone_count_[d] = std::min(k1 - k0 + 1, quad_.n_angular);
        }

        if (store_matrix) build_matrix();
    }

    const DetectorGeometry& geometry() const { return geom_; }
    const SpatialMesh& mesh() const { return mesh_; }
    bool has_matrix() const { return matrix_.size() > 0; }
    const Mat& matrix() const { return matrix_; }

    /// Full-boundary trace of the initial pressure p0 (nodal field).
    Mat apply(const Vec& p0) const {
        require(p0.size() == mesh_.n_nodes(), "WaveOperator::apply: field size mismatch");
        ++counters().wave_applies;
        if (has_matrix()) {
            Vec flat = matrix_ * p0;
            return Eigen::Map<const Mat>(flat.data(), geom_.n_t, geom_.n_detectors).transpose();
        }
        Mat out(geom_.n_detectors, geom_.n_t);
        for (int d = 0; d < geom_.n_detectors; ++d)
            for (int k = 0; k < geom_.n_t; ++k)
                out(d, k) = pressure_value(d, geom_.time(k), p0);
        return out;
    }

    PressureData trace(const Vec& p0) const { return PressureData{apply(p0), std::nullopt}; }

    /// Adjoint with respect to the Y product and the discrete L2(Omega)
    /// product: <U p0, v>_Y = <p0, U* v>_{L2}. Respects the mask of v.
    Vec adjoint(const PressureData& v) const {
        require(v.values.rows() == geom_.n_detectors && v.values.cols() == geom_.n_t,
                "WaveOperator::adjoint: data shape mismatch");
        ++counters().wave_adjoint_applies;
        Mat vals = v.values;
        if (v.mask) apply_mask(vals, *v.mask);
        // Y-weights
        for (int k = 0; k < geom_.n_t; ++k)
            vals.col(k) *= geom_.time(k) * geom_.dt * geom_.arc_weight();
        const double inv_h2 = 1.0 / (mesh_.h * mesh_.h);
        if (has_matrix()) {
            Mat vt = vals.transpose(); // n_t x n_det, matches row layout d*n_t + k
            Vec flat = Eigen::Map<const Vec>(vt.data(), vt.size());
            return inv_h2 * (matrix_.transpose() * flat);
        }
        Vec acc = Vec::Zero(mesh_.n_nodes());
        for (int d = 0; d < geom_.n_detectors; ++d)
            for (int k = 0; k < geom_.n_t; ++k)
                if (vals(d, k) != 0.0)
                    pressure_accumulate(d, geom_.time(k), vals(d, k), acc);
        return inv_h2 * acc;
    }

    /// Energy ratio ||U p0||_Y^2 / ||p0||^2 of the trace map; NaN for p0 = 0.
    double isometry_ratio(const Vec& p0) const {
        const double denom = mesh_.h * mesh_.h * p0.squaredNorm();
        if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
        Mat tr = apply(p0);
        double num = 0.0;
        for (int k = 0; k < geom_.n_t; ++k) num += geom_.time(k) * tr.col(k).squaredNorm();
        num *= geom_.dt * geom_.arc_weight();
        return num / denom;
    }

  private:
    void build_matrix() {
        const int rows = geom_.n_detectors * geom_.n_t;
        matrix_ = Mat::Zero(rows, mesh_.n_nodes());
        Vec row = Vec::Zero(mesh_.n_nodes());
        for (int d = 0; d < geom_.n_detectors; ++d) {
            for (int k = 0; k < geom_.n_t; ++k) {
                row.setZero();
                pressure_accumulate(d, geom_.time(k), 1.0, row);
                matrix_.row(d * geom_.n_t + k) = row.transpose();
            }
        }
    }

    // distance range from a point to the square [-1,1]^2
    static void square_distance_range(const Vec2& p, double& dmin, double& dmax) {
        const double dx = std::max({-1.0 - p.x(), 0.0, p.x() - 1.0});
        const double dy = std::max({-1.0 - p.y(), 0.0, p.y() - 1.0});
        dmin = std::hypot(dx, dy);
        const double cx = std::max(std::abs(p.x() - 1.0), std::abs(p.x() + 1.0));
        const double cy = std::max(std::abs(p.y() - 1.0), std::abs(p.y() + 1.0));
        dmax = std::hypot(cx, cy);
    }

    double pressure_value(int d, double t, const Vec& p0) const {
        if (t <= 0.0) return 0.0;
        const Vec2& xd = geom_.positions[d];
        double dmin, dmax;
        square_distance_range(xd, dmin, dmax);
        double acc = 0.0;
        std::array<int, 3> idx;
        std::array<double, 3> bw, bgx, bgy;
        const int n = quad_.n_angular;
        for (int is = 0; is < quad_.n_radial; ++is) {
            const double ss = sin_s_[is];
            const double r = t * ss;
            if (r < dmin || r > dmax) continue;
            double ring = 0.0;
            for (int kk = 0; kk < cone_count_[d]; ++kk) {
                const int ia = ((cone_start_[d] + kk) % n + n) % n;
                const Vec2 p{xd.x() + r * cos_a_[ia], xd.y() + r * sin_a_[ia]};
                if (!mesh_.interpolate_with_gradient(p, idx, bw, bgx, bgy)) continue;
                double val = 0.0, gdot = 0.0;
                for (int v = 0; v < 3; ++v) {
                    val += bw[v] * p0[idx[v]];
                    gdot += (cos_a_[ia] * bgx[v] + sin_a_[ia] * bgy[v]) * p0[idx[v]];
                }
                ring += val + t * ss * gdot;
            }
            acc += s_weights_[is] * ss * ring;
        }
        return acc * alpha_weight_ / two_pi;
    }

    void pressure_accumulate(int d, double t, double coeff, Vec& acc) const {
        if (t <= 0.0 || coeff == 0.0) return;
        const Vec2& xd = geom_.positions[d];
        double dmin, dmax;
        square_distance_range(xd, dmin, dmax);
        std::array<int, 3> idx;
        std::array<double, 3> bw, bgx, bgy;
        const int n = quad_.n_angular;
        for (int is = 0; is < quad_.n_radial; ++is) {
            const double ss = sin_s_[is];
            const double r = t * ss;
            if (r < dmin || r > dmax) continue;
            const double cs = coeff * (alpha_weight_ / two_pi) * s_weights_[is] * ss;
            for (int kk = 0; kk < cone_count_[d]; ++kk) {
                const int ia = ((cone_start_[d] + kk) % n + n) % n;
                const Vec2 p{xd.x() + r * cos_a_[ia], xd.y() + r * sin_a_[ia]};
                if (!mesh_.interpolate_with_gradient(p, idx, bw, bgx, bgy)) continue;
                for (int v = 0; v < 3; ++v)
                    acc[idx[v]] +=
                        cs * (bw[v] + t * ss * (cos_a_[ia] * bgx[v] + sin_a_[ia] * bgy[v]));
            }
        }
    }

    SpatialMesh mesh_;
    DetectorGeometry geom_;
    WaveQuadrature quad_;
    std::vector<double> s_nodes_, s_weights_, sin_s_, cos_a_, sin_a_;
    std::vector<int> cone_start_, cone_count_;
    double alpha_weight_ = 0.0;
    Mat matrix_;
};

} // namespace qpat

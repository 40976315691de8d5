#pragma once

#include <utility>

#include "qpat/core.hpp"
#include "qpat/fields.hpp"
#include "qpat/grid.hpp"
#include "qpat/krylov.hpp"

namespace qpat {

/// Componentwise regularization operator L mu = (L_a mu_a, L_s mu_s). The
/// default is the 5-point Laplacian on interior nodes (rows of boundary nodes
/// are zero; interior rows reference the known Dirichlet values through their
/// neighbor columns), with L_s = c * L_a.
struct RegOperator {
    SpMat L_a;
    SpMat L_s;

    static RegOperator laplacian(const SpatialMesh& mesh, double c_s = 100.0) {
        const int n = mesh.n_nodes();
        std::vector<Triplet> trip;
        const double inv_h2 = 1.0 / (mesh.h * mesh.h);
        for (int iy = 1; iy < mesh.cells; ++iy) {
            for (int ix = 1; ix < mesh.cells; ++ix) {
                const int c = mesh.node_index(ix, iy);
                trip.emplace_back(c, c, -4.0 * inv_h2);
                trip.emplace_back(c, mesh.node_index(ix - 1, iy), inv_h2);
                trip.emplace_back(c, mesh.node_index(ix + 1, iy), inv_h2);
                trip.emplace_back(c, mesh.node_index(ix, iy - 1), inv_h2);
                trip.emplace_back(c, mesh.node_index(ix, iy + 1), inv_h2);
            }
        }
        RegOperator r;
        r.L_a.resize(n, n);
        r.L_a.setFromTriplets(trip.begin(), trip.end());
        r.L_a.makeCompressed();
        r.L_s = c_s * r.L_a;
        return r;
    }

    /// Test hook: L = identity on both components.
    static RegOperator identity(int n) {
        RegOperator r;
        r.L_a.resize(n, n);
        r.L_a.setIdentity();
        r.L_s = r.L_a;
        return r;
    }

    std::pair<Vec, Vec> apply(const ParameterPair& mu) const {
        return {L_a * mu.mu_a, L_s * mu.mu_s};
    }

    /// (1/2)||L mu||^2, the Tikhonov penalty without the lambda factor.
    double penalty(const ParameterPair& mu, double h) const {
        const double h2 = h * h;
        return 0.5 * h2 * ((L_a * mu.mu_a).squaredNorm() + (L_s * mu.mu_s).squaredNorm());
    }
};

/// Projection onto the feasible set: clamp to the box, then reset the known
/// boundary values.
inline ParameterPair project_D(const ParameterPair& mu, const FeasibleSet& dom) {
    ParameterPair out = mu;
    out.mu_a = out.mu_a.cwiseMax(0.0).cwiseMin(dom.mu_a_max);
    out.mu_s = out.mu_s.cwiseMax(0.0).cwiseMin(dom.mu_s_max);
    if (dom.enforce_boundary) {
        for (std::size_t p = 0; p < dom.boundary_nodes.size(); ++p) {
            out.mu_a[dom.boundary_nodes[p]] = dom.boundary_a[static_cast<Eigen::Index>(p)];
            out.mu_s[dom.boundary_nodes[p]] = dom.boundary_s[static_cast<Eigen::Index>(p)];
        }
    }
    return out;
}

/// prox of g = (s lambda / 2)||L .||^2: solves (I + s lambda L^T L) y = x by
/// conjugate gradients, componentwise.
inline ParameterPair prox_quad(const ParameterPair& x, const RegOperator& reg, double s_lambda,
                               double tol = 1e-10) {
    require(s_lambda >= 0.0, "prox_quad: s*lambda must be nonnegative");
    if (s_lambda == 0.0) return x;
    auto solve_component = [&](const SpMat& L, const Vec& rhs) {
        Vec y = rhs; // warm start at the unregularized point
        auto apply = [&](const Vec& v, Vec& out) {
            out = v + s_lambda * (L.transpose() * (L * v));
        };
        SolveReport rep = conjugate_gradient(apply, rhs, y, tol);
        if (!rep.converged)
            throw std::runtime_error("prox_quad: CG did not converge, residual " +
                                     std::to_string(rep.residual));
        return y;
    };
    return {solve_component(reg.L_a, x.mu_a), solve_component(reg.L_s, x.mu_s)};
}

struct DykstraResult {
    ParameterPair value;
    bool converged = false;
    int iterations = 0;
};

/// Dykstra's algorithm for prox of (s lambda / 2)||L .||^2 + indicator of the
/// feasible set. Returns the last iterate with a convergence flag.
inline DykstraResult dykstra(const ParameterPair& x0, const RegOperator& reg,
                             const FeasibleSet& dom, double s_lambda, int max_iter = 50,
                             double tol = 1e-8, double cg_tol = 1e-10) {
    DykstraResult res;
    ParameterPair x = x0;
    Vec pa = Vec::Zero(x0.mu_a.size()), ps = Vec::Zero(x0.mu_s.size());
    Vec qa = pa, qs = ps;
    for (int m = 0; m < max_iter; ++m) {
        ParameterPair y = prox_quad({x.mu_a + pa, x.mu_s + ps}, reg, s_lambda, cg_tol);
        ParameterPair xn = project_D({y.mu_a + qa, y.mu_s + qs}, dom);
        pa = x.mu_a + pa - y.mu_a;
        ps = x.mu_s + ps - y.mu_s;
        qa = y.mu_a + qa - xn.mu_a;
        qs = y.mu_s + qs - xn.mu_s;
        const double change = (xn.mu_a - x.mu_a).norm() + (xn.mu_s - x.mu_s).norm();
        const double scale = std::max(1e-30, x.mu_a.norm() + x.mu_s.norm());
        x = std::move(xn);
        res.iterations = m + 1;
        if (change / scale < tol) {
            res.converged = true;
            break;
        }
    }
    res.value = std::move(x);
    return res;
}

} // namespace qpat

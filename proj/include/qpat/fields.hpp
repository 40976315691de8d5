#pragma once

#include "qpat/core.hpp"
#include "qpat/grid.hpp"

namespace qpat {

/// Photon density as a node x direction array.
using PhotonField = Mat;

/// The unknown coefficient pair (absorption, scattering), nodal fields in 1/cm.
struct ParameterPair {
    Vec mu_a;
    Vec mu_s;

    ParameterPair() = default;
    ParameterPair(Vec a, Vec s) : mu_a(std::move(a)), mu_s(std::move(s)) {}

    static ParameterPair constant(int n_nodes, double a, double s) {
        return {Vec::Constant(n_nodes, a), Vec::Constant(n_nodes, s)};
    }

    std::uint64_t fingerprint() const { return qpat::fingerprint(mu_a, mu_s); }
};

/// Box bounds plus the known boundary trace of mu; the feasible set of the
/// inverse problem.
struct FeasibleSet {
    double mu_a_max = 3.0;
    double mu_s_max = 6.0;
    bool enforce_boundary = false;
    std::vector<int> boundary_nodes;  // node indices (mesh order)
    Vec boundary_a;                   // values per entry of boundary_nodes
    Vec boundary_s;

    static FeasibleSet boxed(double a_max, double s_max) {
        FeasibleSet d;
        d.mu_a_max = a_max;
        d.mu_s_max = s_max;
        return d;
    }

    static FeasibleSet with_boundary(const SpatialMesh& mesh, double a_max, double s_max,
                                     double boundary_a_value, double boundary_s_value) {
        FeasibleSet d = boxed(a_max, s_max);
        d.enforce_boundary = true;
        d.boundary_nodes = mesh.boundary_nodes;
        d.boundary_a = Vec::Constant(mesh.n_boundary(), boundary_a_value);
        d.boundary_s = Vec::Constant(mesh.n_boundary(), boundary_s_value);
        return d;
    }

    bool feasible(const ParameterPair& mu) const {
        return mu.mu_a.minCoeff() >= 0.0 && mu.mu_a.maxCoeff() <= mu_a_max &&
               mu.mu_s.minCoeff() >= 0.0 && mu.mu_s.maxCoeff() <= mu_s_max;
    }
};

/// Optical sources: an interior field and boundary inflow values. The boundary
/// matrix is indexed by boundary-node position (mesh.boundary_nodes order) and
/// direction; only inflow pairs are meaningful.
struct SourcePair {
    Mat interior; // n_nodes x n_theta, empty means zero
    Mat boundary; // n_boundary x n_theta, empty means zero

    bool has_interior() const { return interior.size() > 0; }
    bool has_boundary() const { return boundary.size() > 0; }
};

/// Discrete L2(Omega) inner product (uniform h^2 weights).
inline double dot_spatial(const SpatialMesh& mesh, const Vec& u, const Vec& v) {
    return mesh.h * mesh.h * u.dot(v);
}

inline double norm_spatial(const SpatialMesh& mesh, const Vec& u) {
    return std::sqrt(dot_spatial(mesh, u, u));
}

/// Discrete L2(Omega x S1) inner product (h^2 * angular weight).
inline double dot_field(const SpatialMesh& mesh, const AngularGrid& angles,
                        const Mat& u, const Mat& v) {
    return mesh.h * mesh.h * angles.weight * u.cwiseProduct(v).sum();
}

inline double norm_field(const SpatialMesh& mesh, const AngularGrid& angles, const Mat& u) {
    return std::sqrt(dot_field(mesh, angles, u, u));
}

/// Relative L2 error ||est - truth|| / ||truth|| (mesh weights cancel).
inline double relative_error(const Vec& est, const Vec& truth) {
    const double denom = truth.norm();
    if (denom == 0.0) return est.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (est - truth).norm() / denom;
}

} // namespace qpat

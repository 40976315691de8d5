#pragma once

#include <vector>

#include "qpat/core.hpp"
#include "qpat/fields.hpp"
#include "qpat/grid.hpp"
#include "qpat/krylov.hpp"
#include "qpat/scattering.hpp"

namespace qpat {

/// Angular average A(Phi) = integral over S1, realized with the uniform
/// quadrature weight of the angular grid.
inline Vec average_A(const AngularGrid& angles, const Mat& phi) {
    return angles.weight * phi.rowwise().sum();
}

/// Adjoint of A with respect to the discrete L2(Omega) and L2(Omega x S1)
/// products: replication across directions.
inline Mat average_A_adjoint(const AngularGrid& angles, const Vec& u) {
    return u.replicate(1, angles.n_theta);
}

/**
 * Streamline-diffusion P1 discretization of the transport operator
 *
 *     M(mu) = theta . grad_x + mu_a + mu_s (I - K)
 *
 * with weakly imposed inflow boundary conditions. Directions are collocated
 * at the angular nodes with uniform weight; the advection term is integrated
 * by parts, leaving an outflow boundary term on the left-hand side and the
 * inflow data on the right-hand side. mu-weighted volume terms use vertex
 * quadrature, so the coefficient pair enters only as diagonal-in-space
 * scalings and a parameter update never touches the geometric blocks.
 *
 * Per direction l the stored pieces are (all scaled by the angular weight w):
 *   adv[l]  = w * (-G_l + O_l + D * S_l)   geometric, mu-independent
 *   sdrw[l] = w * G_l                       with G_l[i][j] = sum_T (|T|/3) theta_l . grad psi_i
 *   lumped  = vertex-quadrature mass (per node)
 * and the full operator acts as
 *   (M Phi)_l = adv[l] Phi_l + (wm + D sdrw[l]) [sigma .* Phi_l - mu_s .* (K Phi)_l].
 */
class TransportSystem {
  public:
    TransportSystem() = default;

    static TransportSystem assemble(const SpatialMesh& mesh, const AngularGrid& angles,
                                    const ScatteringKernel& kernel, const ParameterPair& mu,
                                    double sd_coefficient = -1.0,
                                    const FeasibleSet* domain = nullptr) {
        TransportSystem sys;
        sys.n_nodes_ = mesh.n_nodes();
        sys.n_theta_ = angles.n_theta;
        sys.h_ = mesh.h;
        sys.w_ = angles.weight;
        sys.sd_ = sd_coefficient > 0.0 ? sd_coefficient : mesh.h;
        sys.kernel_ = kernel.matrix;
        sys.kernel_t_ = kernel.matrix.transpose();
        sys.boundary_edges_ = mesh.boundary_edges;
        sys.boundary_index_ = mesh.boundary_index;
        sys.directions_ = angles.directions;

        // lumped (vertex-quadrature) mass
        sys.lumped_ = Vec::Zero(sys.n_nodes_);
        const double third_area = mesh.triangle_area() / 3.0;
        for (const auto& tri : mesh.triangles)
            for (int v = 0; v < 3; ++v) sys.lumped_[tri[v]] += third_area;
        sys.wm_ = sys.w_ * sys.lumped_;

        sys.build_geometric_blocks(mesh, angles);
        sys.update_parameters(mu, domain);
        return sys;
    }

    int n_nodes() const { return n_nodes_; }
    int n_theta() const { return n_theta_; }
    int n_unknowns() const { return n_nodes_ * n_theta_; }
    double h() const { return h_; }
    double angular_weight() const { return w_; }
    double sd_coefficient() const { return sd_; }
    const Vec& lumped_mass() const { return lumped_; }
    const ParameterPair& parameters() const { return mu_; }

    /// Swaps in a new coefficient pair; only the diagonal scalings change.
    /// With validate = false the operator is re-parameterized without the
    /// feasibility check (it is well defined for arbitrary coefficients; the
    /// multilinear functionals evaluate it off the feasible set).
    void update_parameters(const ParameterPair& mu, const FeasibleSet* domain = nullptr,
                           bool validate = true) {
        require(mu.mu_a.size() == n_nodes_ && mu.mu_s.size() == n_nodes_,
                "TransportSystem: coefficient size mismatch");
        require(mu.mu_a.allFinite() && mu.mu_s.allFinite(),
                "TransportSystem: coefficients must be finite");
        if (validate) {
            if (domain) {
                require(domain->feasible(mu), "TransportSystem: infeasible coefficient pair");
            } else {
                require(mu.mu_a.minCoeff() >= 0.0 && mu.mu_s.minCoeff() >= 0.0,
                        "TransportSystem: coefficients must be nonnegative");
            }
        }
        mu_ = mu;
        sigma_ = mu.mu_a + mu.mu_s;
        refresh_diagonal();
    }

    /// Matrix-free application of M(mu); rows are nodes, columns directions.
    Mat apply(const Mat& phi) const {
        require(phi.rows() == n_nodes_ && phi.cols() == n_theta_,
                "TransportSystem::apply: field shape mismatch");
        ++counters().transport_applies;
        Mat out(n_nodes_, n_theta_);
        Mat mixed = phi * kernel_t_; // (K Phi) per node
        Vec t1(n_nodes_);
        for (int l = 0; l < n_theta_; ++l) {
            t1 = sigma_.cwiseProduct(phi.col(l)) - mu_.mu_s.cwiseProduct(mixed.col(l));
            out.col(l) = adv_[l] * phi.col(l) + wm().cwiseProduct(t1) + sd_ * (sdrw_[l] * t1);
        }
        return out;
    }

    /// Application of the transpose of the assembled operator.
    Mat apply_transpose(const Mat& psi) const {
        Mat sdw;
        return apply_transpose_shared(psi, sdw);
    }

    /// Transpose application that also hands back the test weighting
    /// sd_weighted(psi), which the coefficient-gradient pairings reuse.
    Mat apply_transpose_shared(const Mat& psi, Mat& sdw_out) const {
        require(psi.rows() == n_nodes_ && psi.cols() == n_theta_,
                "TransportSystem::apply_transpose: field shape mismatch");
        ++counters().transport_transpose_applies;
        sdw_out = sd_weighted(psi);
        Mat out(n_nodes_, n_theta_);
        Mat z(n_nodes_, n_theta_);
        for (int l = 0; l < n_theta_; ++l) {
            out.col(l) = adv_t_[l] * psi.col(l) + sigma_.cwiseProduct(sdw_out.col(l));
            z.col(l) = mu_.mu_s.cwiseProduct(sdw_out.col(l));
        }
        out.noalias() -= z * kernel_;
        return out;
    }

    /// Coefficient-gradient pairing from a precomputed test weighting.
    std::pair<Vec, Vec> pairing_mu_from_sdw(const Mat& phi, const Mat& sdw) const {
        Mat phik = phi - phi * kernel_t_;
        Vec ga = phi.cwiseProduct(sdw).rowwise().sum();
        Vec gs = phik.cwiseProduct(sdw).rowwise().sum();
        return {std::move(ga), std::move(gs)};
    }

    /// Derivative of M in mu applied to a field: dM[h] Phi, the discrete
    /// counterpart of (h_a + h_s (I - K)) Phi in weak form.
    Mat apply_dM(const Vec& h_a, const Vec& h_s, const Mat& phi) const {
        Mat out(n_nodes_, n_theta_);
        Mat mixed = phi * kernel_t_;
        Vec t1(n_nodes_);
        const Vec hsum = h_a + h_s;
        for (int l = 0; l < n_theta_; ++l) {
            t1 = hsum.cwiseProduct(phi.col(l)) - h_s.cwiseProduct(mixed.col(l));
            out.col(l) = wm().cwiseProduct(t1) + sd_ * (sdrw_[l] * t1);
        }
        return out;
    }

    /// Streamline-diffusion test weighting (wm + D sdrw^T) of a dual field;
    /// the piece shared by every mu-gradient pairing.
    Mat sd_weighted(const Mat& r) const {
        Mat u(n_nodes_, n_theta_);
        for (int l = 0; l < n_theta_; ++l)
            u.col(l) = wm().cwiseProduct(r.col(l)) + sd_ * (sdrw_t_[l] * r.col(l));
        return u;
    }

    /// Plain-Euclidean derivative of <M(mu) Phi, R> with respect to the nodal
    /// coefficients: returns (d/dmu_a, d/dmu_s).
    std::pair<Vec, Vec> pairing_mu(const Mat& phi, const Mat& r) const {
        Mat u = sd_weighted(r);
        Mat phik = phi - phi * kernel_t_;
        Vec ga = phi.cwiseProduct(u).rowwise().sum();
        Vec gs = phik.cwiseProduct(u).rowwise().sum();
        return {std::move(ga), std::move(gs)};
    }

    /// Assembles the right-hand side for a source pair (mu-independent).
    Mat build_rhs(const SourcePair& q) const {
        Mat b = Mat::Zero(n_nodes_, n_theta_);
        if (q.has_interior()) {
            require(q.interior.rows() == n_nodes_ && q.interior.cols() == n_theta_,
                    "build_rhs: interior source shape mismatch");
            for (int l = 0; l < n_theta_; ++l)
                b.col(l) = wm().cwiseProduct(q.interior.col(l)) + sd_ * (sdrw_[l] * q.interior.col(l));
        }
        if (q.has_boundary()) {
            require(q.boundary.cols() == n_theta_ &&
                        q.boundary.rows() == static_cast<Eigen::Index>(count_boundary()),
                    "build_rhs: boundary source shape mismatch");
            for (const auto& e : boundary_edges_) {
                const int pa = boundary_index_[e.a];
                const int pb = boundary_index_[e.b];
                const double sixth = e.length / 6.0;
                for (int l = 0; l < n_theta_; ++l) {
                    const double flux = e.normal.dot(directions_[l]);
                    if (flux >= 0.0) continue; // only inflow edges carry data
                    const double c = w_ * (-flux) * sixth;
                    const double qa = q.boundary(pa, l);
                    const double qb = q.boundary(pb, l);
                    b(e.a, l) += c * (2.0 * qa + qb);
                    b(e.b, l) += c * (qa + 2.0 * qb);
                }
            }
        }
        return b;
    }

    /// Iterative solve M c = b (GMRES, Jacobi-preconditioned).
    PhotonField solve(const Mat& rhs, const SolveOptions& opt = {}) const {
        ++counters().rte_solves;
        return solve_impl(rhs, opt, false);
    }

    /// Transpose solve; reversed transport with outflow-trace condition by
    /// construction.
    PhotonField solve_adjoint(const Mat& rhs, const SolveOptions& opt = {}) const {
        ++counters().rte_adjoint_solves;
        return solve_impl(rhs, opt, true);
    }

    /// Explicit sparse matrix over (direction-major) node x direction
    /// unknowns; used by small-scale oracles.
    SpMat assemble_sparse() const {
        std::vector<Triplet> trip;
        const int N = n_nodes_;
        auto emit_block = [&](int l, int lp, const SpMat& sp, double scale) {
            for (int k = 0; k < sp.outerSize(); ++k)
                for (SpMat::InnerIterator it(sp, k); it; ++it)
                    trip.emplace_back(l * N + static_cast<int>(it.row()),
                                      lp * N + static_cast<int>(it.col()),
                                      scale * it.value());
        };
        for (int l = 0; l < n_theta_; ++l) {
            emit_block(l, l, adv_[l], 1.0);
            // reaction: (wm + D sdrw) diag(sigma)
            for (int j = 0; j < N; ++j) trip.emplace_back(l * N + j, l * N + j, wm()[j] * sigma_[j]);
            SpMat scaled = sdrw_[l] * sigma_.asDiagonal();
            emit_block(l, l, scaled, sd_);
            // scattering coupling: -(wm + D sdrw) diag(mu_s) K[l][l']
            SpMat sc = sdrw_[l] * mu_.mu_s.asDiagonal();
            for (int lp = 0; lp < n_theta_; ++lp) {
                const double k = kernel_(l, lp);
                if (k == 0.0) continue;
                for (int j = 0; j < N; ++j)
                    trip.emplace_back(l * N + j, lp * N + j, -k * wm()[j] * mu_.mu_s[j]);
                emit_block(l, lp, sc, -k * sd_);
            }
        }
        SpMat m(n_unknowns(), n_unknowns());
        m.setFromTriplets(trip.begin(), trip.end());
        m.makeCompressed();
        return m;
    }

    SolveReport last_report() const { return last_report_; }

  private:
    const Vec& wm() const { return wm_; }

    void build_geometric_blocks(const SpatialMesh& mesh, const AngularGrid& angles) {
        const int N = n_nodes_;
        adv_.resize(n_theta_);
        adv_t_.resize(n_theta_);
        sdrw_.resize(n_theta_);
        sdrw_t_.resize(n_theta_);
        adv_diag_.resize(n_theta_);
        sdrw_diag_.resize(n_theta_);

        const double area = mesh.triangle_area();
        for (int l = 0; l < n_theta_; ++l) {
            const Vec2 th = angles.directions[l];
            std::vector<Triplet> tg, ta;
            tg.reserve(mesh.triangles.size() * 9);
            ta.reserve(mesh.triangles.size() * 9 + mesh.boundary_edges.size() * 4);
            for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
                const auto& tri = mesh.triangles[t];
                double tg_dir[3];
                for (int v = 0; v < 3; ++v) tg_dir[v] = th.dot(mesh.hat_gradient(static_cast<int>(t), v));
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        // G_l entry: integral of psi_j (theta . grad psi_i)
                        tg.emplace_back(tri[i], tri[j], (area / 3.0) * tg_dir[i]);
                        // SD stiffness: integral of (theta.grad psi_j)(theta.grad psi_i)
                        ta.emplace_back(tri[i], tri[j], sd_ * area * tg_dir[i] * tg_dir[j]);
                    }
                }
            }
            // outflow boundary term
            for (const auto& e : mesh.boundary_edges) {
                const double flux = e.normal.dot(th);
                if (flux <= 0.0) continue;
                const double c = flux * e.length / 6.0;
                ta.emplace_back(e.a, e.a, 2.0 * c);
                ta.emplace_back(e.a, e.b, c);
                ta.emplace_back(e.b, e.a, c);
                ta.emplace_back(e.b, e.b, 2.0 * c);
            }

            SpMat g(N, N);
            g.setFromTriplets(tg.begin(), tg.end());
            SpMat rest(N, N);
            rest.setFromTriplets(ta.begin(), ta.end());

            sdrw_[l] = w_ * g;
            sdrw_[l].makeCompressed();
            sdrw_t_[l] = SpMat(sdrw_[l].transpose());
            adv_[l] = w_ * (rest - g);
            adv_[l].makeCompressed();
            adv_t_[l] = SpMat(adv_[l].transpose());

            adv_diag_[l] = adv_[l].diagonal();
            sdrw_diag_[l] = sdrw_[l].diagonal();
        }
    }

    void refresh_diagonal() {
        diag_ = Vec(n_unknowns());
        const Vec wmv = wm();
        for (int l = 0; l < n_theta_; ++l) {
            const double kll = kernel_(l, l);
            for (int j = 0; j < n_nodes_; ++j) {
                const double rd = wmv[j] + sd_ * sdrw_diag_[l][j];
                diag_[l * n_nodes_ + j] =
                    adv_diag_[l][j] + rd * sigma_[j] - kll * rd * mu_.mu_s[j];
            }
        }
        inv_diag_ = diag_.unaryExpr([](double d) {
            return std::abs(d) > 1e-300 ? 1.0 / d : 1.0;
        });
    }

    PhotonField solve_impl(const Mat& rhs, const SolveOptions& opt, bool transpose) const {
        require(rhs.rows() == n_nodes_ && rhs.cols() == n_theta_,
                "TransportSystem::solve: rhs shape mismatch");
        const Eigen::Index n = n_unknowns();
        Vec x = Vec::Zero(n);
        Eigen::Map<const Vec> b(rhs.data(), n);
        auto apply_fn = [&](const Vec& in, Vec& out) {
            Eigen::Map<const Mat> phi(in.data(), n_nodes_, n_theta_);
            Mat y = transpose ? apply_transpose(phi) : apply(phi);
            out = Eigen::Map<const Vec>(y.data(), n);
        };
        auto precond = [&](const Vec& in, Vec& out) { out = inv_diag_.cwiseProduct(in); };
        SolveOptions o = opt;
        last_report_ = gmres(apply_fn, precond, Vec(b), x, o);
        if (!last_report_.converged) {
            throw std::runtime_error(
                "TransportSystem: linear solver did not converge, final relative residual " +
                std::to_string(last_report_.residual));
        }
        return Eigen::Map<const Mat>(x.data(), n_nodes_, n_theta_);
    }

    std::size_t count_boundary() const {
        std::size_t c = 0;
        for (int v : boundary_index_)
            if (v >= 0) ++c;
        return c;
    }

    int n_nodes_ = 0;
    int n_theta_ = 0;
    double h_ = 0.0;
    double w_ = 0.0;
    double sd_ = 0.0;

    Mat kernel_, kernel_t_;
    Vec lumped_, wm_;
    std::vector<SpMat> adv_, adv_t_, sdrw_, sdrw_t_;
    std::vector<Vec> adv_diag_, sdrw_diag_;
    std::vector<BoundaryEdge> boundary_edges_;
    std::vector<int> boundary_index_;
    std::vector<Vec2> directions_;

    ParameterPair mu_;
    Vec sigma_;
    Vec diag_, inv_diag_;
    mutable SolveReport last_report_;
};

} // namespace qpat

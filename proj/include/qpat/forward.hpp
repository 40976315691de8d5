#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "qpat/acoustic.hpp"
#include "qpat/core.hpp"
#include "qpat/fields.hpp"
#include "qpat/grid.hpp"
#include "qpat/scattering.hpp"
#include "qpat/transport.hpp"

namespace qpat {

/// One experiment: a boundary/interior source with its detector arc and time
/// horizon on the same side of the domain.
struct Illumination {
    int index = 0;
    Side side = Side::Top;
    SourcePair source;
    std::vector<int> arc;
    double horizon = 0.0;
};

/// Checks that mu + eps h stays in the box for some eps > 0.
inline bool feasible_direction(const ParameterPair& mu, const Vec& h_a, const Vec& h_s,
                               const FeasibleSet& dom) {
    for (Eigen::Index i = 0; i < mu.mu_a.size(); ++i) {
        if (mu.mu_a[i] <= 0.0 && h_a[i] < 0.0) return false;
        if (mu.mu_a[i] >= dom.mu_a_max && h_a[i] > 0.0) return false;
        if (mu.mu_s[i] <= 0.0 && h_s[i] < 0.0) return false;
        if (mu.mu_s[i] >= dom.mu_s_max && h_s[i] > 0.0) return false;
    }
    return true;
}

/**
 * Per-illumination forward operators F_i = U_i o H_i with their directional
 * derivatives and adjoints. All adjoints are exact discrete transposes of the
 * forward pipeline (transport solve, angular average, wave trace), so the
 * inner-product identities hold at solver tolerance. Photon fields are cached
 * per (coefficient fingerprint, illumination) so a fidelity value and its
 * gradient share one transport solve.
 */
class ForwardModel {
  public:
    ForwardModel(const SpatialMesh& mesh, const AngularGrid& angles,
                 const ScatteringKernel& kernel, const DetectorGeometry& geometry,
                 FeasibleSet domain, WaveQuadrature wave_quad = {}, bool store_wave_matrix = true,
                 double sd_coefficient = -1.0, SolveOptions solve_options = {})
        : mesh_(mesh),
          angles_(angles),
          kernel_(kernel),
          domain_(std::move(domain)),
          opts_(solve_options),
          wave_(mesh, geometry, wave_quad, store_wave_matrix) {
        ParameterPair zero = ParameterPair::constant(mesh.n_nodes(), 0.0, 0.0);
        system_ = TransportSystem::assemble(mesh_, angles_, kernel_, zero, sd_coefficient);
        current_fp_ = zero.fingerprint();
    }

    const SpatialMesh& mesh() const { return mesh_; }
    const AngularGrid& angles() const { return angles_; }
    const ScatteringKernel& kernel() const { return kernel_; }
    const WaveOperator& wave() const { return wave_; }
    const FeasibleSet& domain() const { return domain_; }
    const TransportSystem& system() const { return system_; }
    const SolveOptions& solve_options() const { return opts_; }
    void set_solve_options(const SolveOptions& o) { opts_ = o; }

    int add_illumination(Illumination illum) {
        illum.index = static_cast<int>(illums_.size());
        rhs_.push_back(system_.build_rhs(illum.source));
        illums_.push_back(std::move(illum));
        return illums_.back().index;
    }

    int n_illuminations() const { return static_cast<int>(illums_.size()); }
    const Illumination& illumination(int i) const { return illums_.at(i); }

    /// Re-parameterizes the transport system; invalidates photon caches.
    /// Solve paths validate feasibility; pure operator evaluation (the
    /// multilinear functionals) may pass validate = false.
    void ensure_parameters(const ParameterPair& mu, bool validate = true) {
        const std::uint64_t fp = mu.fingerprint();
        if (fp == current_fp_) return;
        system_.update_parameters(mu, &domain_, validate);
        current_fp_ = fp;
        cache_.clear();
    }

    /// Photon density T_i(mu), cached per coefficient fingerprint.
    const PhotonField& photon_field(const ParameterPair& mu, int i) {
        ensure_parameters(mu);
        auto it = cache_.find(i);
        if (it == cache_.end()) {
            CacheEntry e;
            e.phi = system_.solve(rhs_.at(i), opts_);
            e.avg = average_A(angles_, e.phi);
            it = cache_.emplace(i, std::move(e)).first;
        }
        return it->second.phi;
    }

    const Vec& averaged_field(const ParameterPair& mu, int i) {
        photon_field(mu, i);
        return cache_.at(i).avg;
    }

    /// Heating H_i(mu) = mu_a . A T_i(mu).
    Vec heating(const ParameterPair& mu, int i) {
        return mu.mu_a.cwiseProduct(averaged_field(mu, i));
    }

    /// F_i(mu): restricted wave trace of the heating field.
    PressureData forward(const ParameterPair& mu, int i) {
        Vec H = heating(mu, i);
        PressureData full = wave_.trace(H);
        const auto& il = illums_.at(i);
        return restrict_data(full, wave_.geometry(), il.arc, il.horizon);
    }

    /// Directional derivative F_i'(mu) h for a feasible direction h.
    PressureData derivative(const ParameterPair& mu, const Vec& h_a, const Vec& h_s, int i) {
        require(feasible_direction(mu, h_a, h_s, domain_),
                "ForwardModel::derivative: direction is not feasible at mu");
        const PhotonField& phi = photon_field(mu, i);
        Mat rhs_d = -system_.apply_dM(h_a, h_s, phi);
        PhotonField dphi = system_.solve(rhs_d, opts_);
        Vec dH = h_a.cwiseProduct(cache_.at(i).avg) + mu.mu_a.cwiseProduct(average_A(angles_, dphi));
        PressureData full = wave_.trace(dH);
        const auto& il = illums_.at(i);
        return restrict_data(full, wave_.geometry(), il.arc, il.horizon);
    }

    /// Adjoint F_i'(mu)* v: returns the gradient pair (w.r.t. the discrete
    /// L2(Omega) products).
    std::pair<Vec, Vec> adjoint(const ParameterPair& mu, const PressureData& v, int i) {
        const PhotonField& phi = photon_field(mu, i);
        const Vec& aphi = cache_.at(i).avg;

        PressureData masked = v;
        if (!masked.mask) masked.mask = arc_mask(i);
        Vec ustar = wave_.adjoint(masked);

        const double h2 = mesh_.h * mesh_.h;
        Vec z = (angles_.weight * h2) * mu.mu_a.cwiseProduct(ustar);
        Mat rhs_adj = (-z).replicate(1, angles_.n_theta);
        PhotonField phistar = system_.solve_adjoint(rhs_adj, opts_);

        auto [pa, ps] = system_.pairing_mu(phi, phistar);
        Vec ga = aphi.cwiseProduct(ustar) + pa / h2;
        Vec gs = ps / h2;
        return {std::move(ga), std::move(gs)};
    }

    /// Half squared Y-distance to the data of illumination i.
    double fidelity(const ParameterPair& mu, int i, const PressureData& data) {
        PressureData r = residual(mu, i, data);
        return 0.5 * dot_Y(wave_.geometry(), r, r);
    }

    PressureData residual(const ParameterPair& mu, int i, const PressureData& data) {
        PressureData f = forward(mu, i);
        f.values -= data.values;
        return f;
    }

    double residual_norm(const ParameterPair& mu, int i, const PressureData& data) {
        PressureData r = residual(mu, i, data);
        return norm_Y(wave_.geometry(), r);
    }

    /// Gradient of the partial data-fidelity F_i, via the adjoint at the
    /// residual. Costs one transport solve (shared with fidelity through the
    /// cache) plus one adjoint transport solve.
    std::pair<Vec, Vec> grad_fidelity(const ParameterPair& mu, int i, const PressureData& data) {
        PressureData r = residual(mu, i, data);
        return adjoint(mu, r, i);
    }

    ArcMask arc_mask(int i) const {
        const auto& il = illums_.at(i);
        ArcMask m;
        m.detectors = il.arc;
        m.n_t_active = std::min<int>(
            wave_.geometry().n_t,
            static_cast<int>(std::floor(il.horizon / wave_.geometry().dt + 1e-9)) + 1);
        return m;
    }

  private:
    struct CacheEntry {
        PhotonField phi;
        Vec avg;
    };

    SpatialMesh mesh_;
    AngularGrid angles_;
    ScatteringKernel kernel_;
    FeasibleSet domain_;
    SolveOptions opts_;
    WaveOperator wave_;
    TransportSystem system_;
    std::vector<Illumination> illums_;
    std::vector<Mat> rhs_;
    std::uint64_t current_fp_ = 0;
    std::map<int, CacheEntry> cache_;
};

} // namespace qpat

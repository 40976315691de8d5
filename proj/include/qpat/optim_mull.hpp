#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "qpat/core.hpp"
#include "qpat/forward.hpp"
#include "qpat/regularizers.hpp"
#include "qpat/trace.hpp"

namespace qpat {

/// Joint variable of the multilinear formulation: the coefficient pair plus a
/// photon field and heating field per illumination.
struct MullState {
    ParameterPair mu;
    std::vector<PhotonField> phi;
    std::vector<Vec> heat;

    int n_illuminations() const { return static_cast<int>(phi.size()); }

    bool all_finite() const {
        if (!mu.mu_a.allFinite() || !mu.mu_s.allFinite()) return false;
        for (const auto& p : phi)
            if (!p.allFinite()) return false;
        for (const auto& H : heat)
            if (!H.allFinite()) return false;
        return true;
    }
};

struct PenaltyWeights {
    double a1 = 1.0;
    double a2 = 1.0;
    double a3 = 1.0;
    double lambda = 2e-8; // also written a4

    void validate() const {
        require(a1 > 0.0 && a2 > 0.0 && a3 > 0.0, "PenaltyWeights: a1..a3 must be positive");
        require(lambda >= 0.0, "PenaltyWeights: lambda must be nonnegative");
    }

    double a(int ell) const {
        switch (ell) {
            case 1: return a1;
            case 2: return a2;
            case 3: return a3;
            case 4: return lambda;
        }
        return 0.0;
    }
};

struct MullConfig {
    long max_iter = 1000;
    double step = 0.5;          // constant step (fallback and non-adaptive mode)
    bool adaptive_step = true;  // exact line search per drawn functional
    std::uint64_t rng_seed = 42;
    int inner_j1 = 40;          // repeats of the transport-residual update
    bool dykstra_in_projected = false;
    int dykstra_max_iter = 50;
    double dykstra_tol = 1e-8;
    double cg_tol = 1e-10;
    double divergence_guard = 1e6;
    double max_step = 1e8; // cap on line-search steps
    bool wall_clock = false;
};

/// Sparse gradient of one J_ell^{(i)}: only the touched blocks are present.
struct MullGrad {
    double value = 0.0; // J_ell^{(i)}(z), a byproduct of the residuals
    int illumination = -1;
    bool has_mu = false;
    bool has_phi = false;
    bool has_heat = false;
    Vec ga, gs;
    Mat gphi;
    Vec gheat;
};

namespace detail {

/// Real roots of a t^3 + b t^2 + c t + d = 0 (a may be zero).
inline std::vector<double> cubic_roots(double a, double b, double c, double d) {
    std::vector<double> roots;
    if (std::abs(a) < 1e-300) {
        if (std::abs(b) < 1e-300) {
            if (std::abs(c) > 1e-300) roots.push_back(-d / c);
            return roots;
        }
        const double disc = c * c - 4.0 * b * d;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            roots.push_back((-c + sq) / (2.0 * b));
            roots.push_back((-c - sq) / (2.0 * b));
        }
        return roots;
    }
    // depressed cubic t = y - b/(3a): y^3 + p y + q = 0
    const double bb = b / a, cc = c / a, dd = d / a;
    const double p = cc - bb * bb / 3.0;
    const double q = 2.0 * bb * bb * bb / 27.0 - bb * cc / 3.0 + dd;
    const double shift = -bb / 3.0;
    const double disc = q * q / 4.0 + p * p * p / 27.0;
    if (disc > 0.0) {
        const double sq = std::sqrt(disc);
        const double u = std::cbrt(-q / 2.0 + sq);
        const double v = std::cbrt(-q / 2.0 - sq);
        roots.push_back(u + v + shift);
    } else if (disc == 0.0) {
        const double u = std::cbrt(-q / 2.0);
        roots.push_back(2.0 * u + shift);
        roots.push_back(-u + shift);
    } else {
        const double r = std::sqrt(-p * p * p / 27.0);
        const double phi = std::acos(std::clamp(-q / (2.0 * r), -1.0, 1.0));
        const double m = 2.0 * std::sqrt(-p / 3.0);
        for (int k = 0; k < 3; ++k)
            roots.push_back(m * std::cos((phi + two_pi * k) / 3.0) + shift);
    }
    return roots;
}

/// Minimizer of the quartic 0.5*||r + t u + t^2 w||^2 over t (weighted inner
/// products are folded into the coefficient evaluations by the caller).
struct QuarticCoeffs {
    double c1, c2, c3, c4; // phi'(t) = c1 + c2 t + 3 c3 t^2 + 2 c4 t^3
    double phi(double t, double c0) const {
        return 0.5 * (c0 + 2.0 * c1 * t + c2 * t * t + 2.0 * c3 * t * t * t + c4 * t * t * t * t);
    }
};

inline double minimize_residual_quartic(double c0, double c1, double c2, double c3, double c4,
                                        double fallback, double cap) {
    QuarticCoeffs q{c1, c2, c3, c4};
    std::vector<double> roots = cubic_roots(2.0 * c4, 3.0 * c3, c2, c1);
    double best_t = 0.0;
    double best_val = q.phi(0.0, c0);
    bool found = false;
    for (double t : roots) {
        if (!std::isfinite(t)) continue;
        const double val = q.phi(t, c0);
        if (!found || val < best_val) {
            best_val = val;
            best_t = t;
            found = true;
        }
    }
    if (!found) return fallback;
    if (std::abs(best_t) > cap) return fallback;
    return best_t;
}

} // namespace detail

/**
 * The penalty functionals of the multilinear formulation and their partial
 * gradients. J1 penalizes the weak-form transport residual M(mu) Phi_i - b_i,
 * J2 the heating consistency, J3 the data misfit, J4 the smoothing penalty.
 * No evaluation or gradient requires a transport solve; J1 costs transport
 * applications only.
 */
class MullProblem {
  public:
    MullProblem(ForwardModel& model, const RegOperator& reg, std::vector<PressureData> data,
                PenaltyWeights weights)
        : model_(model), reg_(reg), data_(std::move(data)), w_(weights) {
        w_.validate();
        require(static_cast<int>(data_.size()) == model_.n_illuminations(),
                "MullProblem: data/illumination mismatch");
        for (int i = 0; i < model_.n_illuminations(); ++i)
            rhs_.push_back(model_.system().build_rhs(model_.illumination(i).source));
        residual_cache_.resize(data_.size());
        const auto& mesh = model_.mesh();
        h2_ = mesh.h * mesh.h;
        h2w_ = h2_ * model_.angles().weight;
    }

    ForwardModel& model() { return model_; }
    const RegOperator& reg() const { return reg_; }
    const PenaltyWeights& weights() const { return w_; }
    const std::vector<PressureData>& data() const { return data_; }
    const Mat& rhs(int i) const { return rhs_.at(i); }

    /// Warm start: one transport solve per illumination at mu0; or all-zero
    /// auxiliary fields when warm = false.
    MullState init_state(const ParameterPair& mu0, bool warm = true) {
        MullState z;
        z.mu = project_D(mu0, model_.domain());
        const int N = model_.n_illuminations();
        z.phi.reserve(N);
        z.heat.reserve(N);
        for (int i = 0; i < N; ++i) {
            if (warm) {
                z.phi.push_back(model_.photon_field(z.mu, i));
                z.heat.push_back(z.mu.mu_a.cwiseProduct(average_A(model_.angles(), z.phi.back())));
            } else {
                z.phi.push_back(Mat::Zero(model_.mesh().n_nodes(), model_.angles().n_theta));
                z.heat.push_back(Vec::Zero(model_.mesh().n_nodes()));
            }
        }
        return z;
    }

    double eval_J(int ell, int i, const MullState& z) const {
        switch (ell) {
            case 1: {
                Mat r = transport_residual(i, z);
                return 0.5 * h2w_ * r.squaredNorm();
            }
            case 2: {
                Vec r = heating_residual(i, z);
                return 0.5 * h2_ * r.squaredNorm();
            }
            case 3: {
                PressureData r = data_residual(i, z);
                return 0.5 * dot_Y(model_.wave().geometry(), r, r);
            }
            case 4: {
                auto [la, ls] = reg_.apply(z.mu);
                return 0.5 * h2_ * (la.squaredNorm() + ls.squaredNorm());
            }
        }
        throw std::invalid_argument("eval_J: functional index must be 1..4");
    }

    /// Partial gradients of J_ell^{(i)} with respect to the weighted discrete
    /// inner products; central finite differences of eval_J are the contract.
    MullGrad grad_J(int ell, int i, const MullState& z) const {
        MullGrad g;
        g.illumination = i;
        switch (ell) {
            case 1: {
                Mat r = transport_residual(i, z);
                g.value = 0.5 * h2w_ * r.squaredNorm();
                g.has_mu = true;
                g.has_phi = true;
                auto [pa, ps] = model_.system().pairing_mu(z.phi[i], r);
                const double w = model_.angles().weight;
                g.ga = w * pa;
                g.gs = w * ps;
                g.gphi = model_.system().apply_transpose(r);
                return g;
            }
            case 2: {
                Vec r = heating_residual(i, z);
                g.value = 0.5 * h2_ * r.squaredNorm();
                g.has_mu = true;
                g.has_phi = true;
                g.has_heat = true;
                const Vec aphi = average_A(model_.angles(), z.phi[i]);
                g.ga = aphi.cwiseProduct(r);
                g.gs = Vec::Zero(r.size());
                g.gphi = average_A_adjoint(model_.angles(), Vec(z.mu.mu_a.cwiseProduct(r)));
                g.gheat = -r;
                return g;
            }
            case 3: {
                PressureData r = data_residual(i, z);
                g.value = 0.5 * dot_Y(model_.wave().geometry(), r, r);
                g.has_heat = true;
                g.gheat = -model_.wave().adjoint(r);
                return g;
            }
            case 4: {
                auto [la, ls] = reg_.apply(z.mu);
                g.value = 0.5 * h2_ * (la.squaredNorm() + ls.squaredNorm());
                g.has_mu = true;
                g.ga = reg_.L_a.transpose() * la;
                g.gs = reg_.L_s.transpose() * ls;
                return g;
            }
        }
        throw std::invalid_argument("grad_J: functional index must be 1..4");
    }

    /**
     * Exact line search min_t J_ell(z - t d) along a gradient direction d.
     * J3 and J4 are quadratic in t; J1 and J2 are quartic because two factors
     * of the residual move; the cubic derivative is solved in closed form and
     * the global minimizer selected. Falls back to the configured constant
     * step when the polynomial degenerates.
     */
    double line_search_exact(int ell, int i, const MullState& z, const MullGrad& d,
                             double fallback, double cap = 1e8) const {
        switch (ell) {
            case 4: {
                if (!d.has_mu) return 0.0;
                auto [la, ls] = reg_.apply(z.mu);
                const Vec lda = reg_.L_a * d.ga;
                const Vec lds = reg_.L_s * d.gs;
                const double denom = lda.squaredNorm() + lds.squaredNorm();
                if (denom <= 0.0) return 0.0;
                return (la.dot(lda) + ls.dot(lds)) / denom;
            }
            case 3: {
                if (!d.has_heat) return 0.0;
                PressureData r = data_residual(i, z);
                PressureData g = masked_trace(i, d.gheat);
                const double denom = dot_Y(model_.wave().geometry(), g, g);
                if (denom <= 0.0) return 0.0;
                return -dot_Y(model_.wave().geometry(), r, g) / denom;
            }
            case 2: {
                Vec r = heating_residual(i, z);
                const Vec aphi = average_A(model_.angles(), z.phi[i]);
                const Vec da = d.has_mu ? d.ga : Vec(Vec::Zero(r.size()));
                const Mat dphi = d.has_phi ? d.gphi : Mat(Mat::Zero(z.phi[i].rows(), z.phi[i].cols()));
                const Vec dh = d.has_heat ? d.gheat : Vec(Vec::Zero(r.size()));
                const Vec adphi = average_A(model_.angles(), dphi);
                Vec u = -(da.cwiseProduct(aphi) + z.mu.mu_a.cwiseProduct(adphi) - dh);
                Vec v = da.cwiseProduct(adphi);
                const double c0 = h2_ * r.squaredNorm();
                const double c1 = h2_ * r.dot(u);
                const double c2 = h2_ * (u.squaredNorm() + 2.0 * r.dot(v));
                const double c3 = h2_ * u.dot(v);
                const double c4 = h2_ * v.squaredNorm();
                return detail::minimize_residual_quartic(c0, c1, c2, c3, c4, fallback, cap);
            }
            case 1: {
                Mat r = transport_residual(i, z);
                const Vec da = d.has_mu ? d.ga : Vec(Vec::Zero(z.mu.mu_a.size()));
                const Vec ds = d.has_mu ? d.gs : Vec(Vec::Zero(z.mu.mu_s.size()));
                const Mat dphi = d.has_phi ? d.gphi : Mat(Mat::Zero(z.phi[i].rows(), z.phi[i].cols()));
                Mat u = -(model_.system().apply_dM(da, ds, z.phi[i]) + model_.system().apply(dphi));
                Mat v = model_.system().apply_dM(da, ds, dphi);
                const double c0 = h2w_ * r.squaredNorm();
                const double c1 = h2w_ * r.cwiseProduct(u).sum();
                const double c2 = h2w_ * (u.squaredNorm() + 2.0 * r.cwiseProduct(v).sum());
                const double c3 = h2w_ * u.cwiseProduct(v).sum();
                const double c4 = h2w_ * v.squaredNorm();
                return detail::minimize_residual_quartic(c0, c1, c2, c3, c4, fallback, cap);
            }
        }
        throw std::invalid_argument("line_search_exact: functional index must be 1..4");
    }

    Mat transport_residual(int i, const MullState& z) const {
        model_.ensure_parameters(z.mu, false);
        return model_.system().apply(z.phi[i]) - rhs_.at(i);
    }

    Vec heating_residual(int i, const MullState& z) const {
        return z.mu.mu_a.cwiseProduct(average_A(model_.angles(), z.phi[i])) - z.heat[i];
    }

    /// v_i - U_i H_i; the wave trace is cached per heating fingerprint so a
    /// gradient and its line search share one operator application.
    PressureData data_residual(int i, const MullState& z) const {
        const std::uint64_t fp = qpat::fingerprint(z.heat[i]);
        auto& slot = residual_cache_[static_cast<std::size_t>(i)];
        if (!slot || slot->first != fp) {
            PressureData uh = masked_trace(i, z.heat[i]);
            uh.values = data_.at(i).values - uh.values;
            slot = {fp, std::move(uh)};
        }
        return slot->second;
    }

    /**
     * The 40-fold transport-residual block: repeated steepest-descent steps
     * on J1 for one illumination with the positivity projection after every
     * step. The coefficient residual is propagated analytically along each
     * exact line-search segment (it is a quadratic polynomial of the step),
     * with a rank-correction when the projection clips the coefficients, so
     * each repeat costs one transpose application, one application of M to
     * the descent direction, and two derivative applications.
     */
    struct BlockResult {
        double last_value = 0.0;
        double last_step = 0.0;
    };

    /// One data-misfit step: steepest descent on J3 in the heating block with
    /// the closed-form exact step; keeps the cached trace residual current so
    /// consecutive draws share wave-operator applications.
    BlockResult j3_step(MullState& z, int i, bool adaptive, double fallback) const {
        PressureData r = data_residual(i, z);
        BlockResult out;
        out.last_value = 0.5 * dot_Y(model_.wave().geometry(), r, r);
        Vec d = -model_.wave().adjoint(r);
        PressureData g = masked_trace(i, d);
        double t = fallback;
        if (adaptive) {
            const double denom = dot_Y(model_.wave().geometry(), g, g);
            t = denom > 0.0 ? -dot_Y(model_.wave().geometry(), r, g) / denom : 0.0;
        }
        out.last_step = t;
        z.heat[i] -= t * d;
        PressureData rn{r.values + t * g.values, r.mask};
        residual_cache_[static_cast<std::size_t>(i)] = {qpat::fingerprint(z.heat[i]),
                                                        std::move(rn)};
        return out;
    }

    BlockResult j1_block(MullState& z, int i, int reps, bool adaptive, double fallback, double cap,
                         const std::function<void(double)>& guard) const {
        model_.ensure_parameters(z.mu, false);
        const TransportSystem& sys = model_.system();
        Mat r = sys.apply(z.phi[i]) - rhs_.at(i);
        BlockResult out;
        const double w = model_.angles().weight;

        Mat sdw;
        for (int rep = 0; rep < reps; ++rep) {
            out.last_value = 0.5 * h2w_ * r.squaredNorm();
            guard(out.last_value);

            Mat dphi = sys.apply_transpose_shared(r, sdw);
            auto [pa, ps] = sys.pairing_mu_from_sdw(z.phi[i], sdw);
            Vec ga = w * pa;
            Vec gs = w * ps;

            Mat u = -(sys.apply_dM(ga, gs, z.phi[i]) + sys.apply(dphi));
            Mat v = sys.apply_dM(ga, gs, dphi);
            double t = fallback;
            if (adaptive) {
                const double c0 = h2w_ * r.squaredNorm();
                const double c1 = h2w_ * r.cwiseProduct(u).sum();
                const double c2 = h2w_ * (u.squaredNorm() + 2.0 * r.cwiseProduct(v).sum());
                const double c3 = h2w_ * u.cwiseProduct(v).sum();
                const double c4 = h2w_ * v.squaredNorm();
                t = detail::minimize_residual_quartic(c0, c1, c2, c3, c4, fallback, cap);
            }
            out.last_step = t;

            z.mu.mu_a -= t * ga;
            z.mu.mu_s -= t * gs;
            z.phi[i] -= t * dphi;
            r += t * u + (t * t) * v;

            ParameterPair projected = project_D(z.mu, model_.domain());
            Vec da = projected.mu_a - z.mu.mu_a;
            Vec ds = projected.mu_s - z.mu.mu_s;
            z.mu = std::move(projected);
            model_.ensure_parameters(z.mu, false);
            if (da.cwiseAbs().maxCoeff() > 0.0 || ds.cwiseAbs().maxCoeff() > 0.0)
                r += sys.apply_dM(da, ds, z.phi[i]);
        }
        return out;
    }

    PressureData masked_trace(int i, const Vec& H) const {
        PressureData full = model_.wave().trace(H);
        const auto& il = model_.illumination(i);
        return restrict_data(full, model_.wave().geometry(), il.arc, il.horizon);
    }

  private:
    ForwardModel& model_;
    const RegOperator& reg_;
    std::vector<PressureData> data_;
    PenaltyWeights w_;
    std::vector<Mat> rhs_;
    double h2_ = 0.0;
    double h2w_ = 0.0;
    mutable std::vector<std::optional<std::pair<std::uint64_t, PressureData>>> residual_cache_;
};

struct MullResult {
    MullState state;
    IterateTrace trace;
    long iterations = 0;
};

namespace detail {

inline void apply_step(MullState& z, const MullGrad& g, double t) {
    if (g.has_mu) {
        z.mu.mu_a -= t * g.ga;
        z.mu.mu_s -= t * g.gs;
    }
    if (g.has_phi) z.phi[g.illumination] -= t * g.gphi;
    if (g.has_heat) z.heat[g.illumination] -= t * g.gheat;
}

struct MullLoopOptions {
    bool proximal = false; // prox (Dykstra) vs cut projection for regularity
};

inline MullResult mull_loop(const MullState& z0, MullProblem& prob, const MullConfig& cfg,
                            const MullLoopOptions& loop, const ParameterPair* truth,
                            const IterCallback& on_iterate) {
    const int N = prob.model().n_illuminations();
    const int n_ell = loop.proximal ? 3 : 4;
    const PenaltyWeights& w = prob.weights();

    MullResult res;
    res.state = z0;
    Rng rng(cfg.rng_seed);
    WallTimer timer(cfg.wall_clock);
    const Counters base = counters();

    // divergence guard baselines; floored at the data scale so consistent
    // starting states (all residuals zero) do not trip the guard
    double data_scale = 1e-12;
    for (int i = 0; i < N; ++i)
        data_scale = std::max(data_scale, 0.5 * dot_Y(prob.model().wave().geometry(),
                                                      prob.data()[i], prob.data()[i]));
    std::array<double, 5> j0{};
    for (int ell = 1; ell <= 4; ++ell) {
        double m = 0.0;
        for (int i = 0; i < N; ++i) m = std::max(m, prob.eval_J(ell, i, res.state));
        j0[ell] = std::max(m, data_scale);
    }

    auto guard = [&](int ell, int i, double value) {
        if (!(value <= cfg.divergence_guard * j0[ell]) || !std::isfinite(value))
            throw std::runtime_error("MULL iteration diverged: J_" + std::to_string(ell) +
                                     " at illumination " + std::to_string(i) + " reached " +
                                     std::to_string(value));
    };

    // exact line search for the residual functionals; the penalty draw keeps
    // the lambda-weighted constant step (a scale-free exact step would make
    // the smoothing independent of lambda)
    auto step_of = [&](int ell, int i, const MullGrad& g) {
        if (cfg.adaptive_step && ell != 4)
            return prob.line_search_exact(ell, i, res.state, g, cfg.step, cfg.max_step);
        return cfg.step * w.a(ell);
    };

    // smoothing prox weight: the nominal step times lambda (the adaptive
    // line-search step is a per-functional scale and can be arbitrarily
    // large, which would turn the prox into an unrelated heavy smoother)
    auto smooth_mu = [&] {
        if (loop.proximal || cfg.dykstra_in_projected) {
            res.state.mu = dykstra(res.state.mu, prob.reg(), prob.model().domain(),
                                   cfg.step * w.lambda, cfg.dykstra_max_iter, cfg.dykstra_tol,
                                   cfg.cg_tol)
                               .value;
        }
    };

    for (long k = 0; k < cfg.max_iter; ++k) {
        const int i = rng.uniform_index(N);
        const int ell = 1 + rng.uniform_index(n_ell);
        double last_value = 0.0;
        double last_t = cfg.step;

        if (ell == 1) {
            auto block = prob.j1_block(res.state, i, cfg.inner_j1, cfg.adaptive_step,
                                       cfg.adaptive_step ? cfg.step : cfg.step * w.a(1),
                                       cfg.max_step, [&](double v) { guard(1, i, v); });
            last_value = block.last_value;
            last_t = block.last_step;
            smooth_mu();
        } else if (ell == 3) {
            auto step = prob.j3_step(res.state, i, cfg.adaptive_step,
                                     cfg.adaptive_step ? cfg.step : cfg.step * w.a(3));
            last_value = step.last_value;
            guard(3, i, last_value);
            last_t = step.last_step;
        } else {
            MullGrad g = prob.grad_J(ell, i, res.state);
            last_value = g.value;
            guard(ell, i, g.value);
            last_t = step_of(ell, i, g);
            apply_step(res.state, g, last_t);
            res.state.mu = project_D(res.state.mu, prob.model().domain());
            if (ell == 2) smooth_mu();
        }
        res.iterations = k + 1;

        TraceRow row;
        row.iter = k + 1;
        row.picked_i = std::to_string(i);
        row.picked_l = ell;
        row.objective = w.a(ell) * last_value;
        if (ell == 3) row.fidelity = last_value;
        if (ell == 4) row.penalty = w.lambda * last_value;
        row.rte_solves = counters().rte_solves + counters().rte_adjoint_solves -
                         base.rte_solves - base.rte_adjoint_solves;
        row.applym = counters().transport_applies + counters().transport_transpose_applies -
                     base.transport_applies - base.transport_transpose_applies;
        row.wall_s = timer.elapsed();
        fill_errors(row, res.state.mu, truth);
        res.trace.push(row);
        if (on_iterate) on_iterate(k + 1, res.state.mu);
    }
    return res;
}

} // namespace detail

/// MULL-projected stochastic gradient: draws ell in {1..4} (the smoothing
/// penalty enters the draw) and projects the coefficient block onto the
/// feasible set after every step.
inline MullResult mull_projected_sgd(const MullState& z0, MullProblem& prob,
                                     const MullConfig& cfg, const ParameterPair* truth = nullptr,
                                     const IterCallback& on_iterate = {}) {
    detail::MullLoopOptions loop;
    loop.proximal = false;
    return detail::mull_loop(z0, prob, cfg, loop, truth, on_iterate);
}

/// MULL-proximal stochastic gradient: draws ell in {1..3}; the smoothing
/// penalty acts through the Dykstra prox on the coefficient block after
/// transport- and heating-residual steps.
inline MullResult mull_proximal_sgd(const MullState& z0, MullProblem& prob, const MullConfig& cfg,
                                    const ParameterPair* truth = nullptr,
                                    const IterCallback& on_iterate = {}) {
    detail::MullLoopOptions loop;
    loop.proximal = true;
    return detail::mull_loop(z0, prob, cfg, loop, truth, on_iterate);
}

} // namespace qpat

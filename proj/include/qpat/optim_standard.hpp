#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "qpat/core.hpp"
#include "qpat/forward.hpp"
#include "qpat/regularizers.hpp"
#include "qpat/trace.hpp"

namespace qpat {

struct StepRule {
    enum class Kind { Constant, SqrtDecay };
    Kind kind = Kind::Constant;
    double s0 = 0.5;

    double at(long k) const {
        return kind == Kind::Constant ? s0 : s0 / std::sqrt(static_cast<double>(k) + 1.0);
    }
};

struct OptimConfig {
    double lambda = 2e-8;
    StepRule step{};
    long max_iter = 10;
    int batch_size = 1;
    std::uint64_t rng_seed = 42;
    double tau = 1.5;
    Vec delta;               // per-illumination noise estimates (empty: tiny)
    bool update_mu_s = false; // scattering treated as known by default
    int dykstra_max_iter = 50;
    double dykstra_tol = 1e-8;
    double cg_tol = 1e-10;
    bool wall_clock = false;

    void validate(int n_illuminations) const {
        require(lambda >= 0.0, "OptimConfig: lambda must be nonnegative");
        require(step.s0 > 0.0, "OptimConfig: step must be positive");
        require(batch_size >= 1 && batch_size <= n_illuminations,
                "OptimConfig: batch size must lie in [1, N]");
        require(tau >= 1.0, "OptimConfig: tau must be at least 1");
        require(max_iter >= 0, "OptimConfig: max_iter must be nonnegative");
    }

    double delta_i(int i) const {
        if (delta.size() == 0) return 1e-300;
        return std::max(delta[i], 1e-300);
    }
};

struct OptimResult {
    ParameterPair mu;
    IterateTrace trace;
    long iterations = 0;
    bool stopped_by_discrepancy = false;
};

namespace detail {

/// Uniform random subset of {0..n-1} of the given size (partial Fisher-Yates),
/// returned sorted so accumulation order is deterministic.
inline std::vector<int> draw_batch(Rng& rng, int n, int size) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < size; ++k) {
        const int j = k + rng.uniform_index(n - k);
        std::swap(idx[k], idx[j]);
    }
    idx.resize(size);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::string join_indices(const std::vector<int>& idx) {
    std::string s;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (k) s += ';';
        s += std::to_string(idx[k]);
    }
    return s;
}

struct BatchGradient {
    Vec ga, gs;
    double mean_fidelity = 0.0;
};

/// Mean gradient and fidelity over a batch; one transport solve and one
/// adjoint solve per member.
inline BatchGradient batch_gradient(ForwardModel& model, const ParameterPair& mu,
                                    const std::vector<int>& batch,
                                    const std::vector<PressureData>& data, bool update_mu_s) {
    const int n = model.mesh().n_nodes();
    BatchGradient g{Vec::Zero(n), Vec::Zero(n), 0.0};
    for (int i : batch) {
        PressureData r = model.residual(mu, i, data[i]);
        g.mean_fidelity += 0.5 * dot_Y(model.wave().geometry(), r, r);
        auto [ga, gs] = model.adjoint(mu, r, i);
        g.ga += ga;
        g.gs += gs;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    g.ga *= inv;
    g.gs *= inv;
    g.mean_fidelity *= inv;
    if (!update_mu_s) g.gs.setZero();
    return g;
}

/// Row describing iterate mu^k; fidelity comes from the gradient evaluation
/// at that iterate (no extra solves). The terminal iterate gets an
/// errors-only row (fidelity NaN). Counters are reported relative to the
/// start of the run so seeded reruns produce identical traces.
inline TraceRow make_row(long iter, const ParameterPair& mu, const ParameterPair* truth,
                         double fid, double pen, const WallTimer& timer, const Counters& base) {
    TraceRow row;
    row.iter = iter;
    row.fidelity = fid;
    row.penalty = pen;
    row.objective = fid + pen;
    row.rte_solves = counters().rte_solves + counters().rte_adjoint_solves - base.rte_solves -
                     base.rte_adjoint_solves;
    row.applym = counters().transport_applies + counters().transport_transpose_applies -
                 base.transport_applies - base.transport_transpose_applies;
    row.wall_s = timer.elapsed();
    fill_errors(row, mu, truth);
    return row;
}

} // namespace detail

/**
 * Proximal gradient iteration on the Tikhonov functional: full (1/N-averaged)
 * gradient step followed by the Dykstra prox of the smoothing penalty plus
 * the feasible-set indicator.
 */
inline OptimResult proximal_gradient(const ParameterPair& mu0, const OptimConfig& cfg,
                                     ForwardModel& model, const std::vector<PressureData>& data,
                                     const RegOperator& reg, const ParameterPair* truth = nullptr,
                                     const IterCallback& on_iterate = {}) {
    const int N = model.n_illuminations();
    cfg.validate(N);
    require(static_cast<int>(data.size()) == N, "proximal_gradient: data/illumination mismatch");

    std::vector<int> all(N);
    std::iota(all.begin(), all.end(), 0);

    OptimResult res;
    res.mu = project_D(mu0, model.domain());
    WallTimer timer(cfg.wall_clock);
    const Counters base = counters();
    const double h = model.mesh().h;

    for (long k = 0; k < cfg.max_iter; ++k) {
        auto g = detail::batch_gradient(model, res.mu, all, data, cfg.update_mu_s);
        TraceRow row = detail::make_row(k, res.mu, truth, g.mean_fidelity,
                                        cfg.lambda * reg.penalty(res.mu, h), timer, base);
        row.picked_i = detail::join_indices(all);
        res.trace.push(row);

        const double s = cfg.step.at(k);
        ParameterPair x{res.mu.mu_a - s * g.ga, res.mu.mu_s - s * g.gs};
        res.mu = dykstra(x, reg, model.domain(), s * cfg.lambda, cfg.dykstra_max_iter,
                         cfg.dykstra_tol, cfg.cg_tol)
                     .value;
        res.iterations = k + 1;
        if (on_iterate) on_iterate(k + 1, res.mu);
    }
    res.trace.push(detail::make_row(cfg.max_iter, res.mu, truth,
                                    std::numeric_limits<double>::quiet_NaN(),
                                    cfg.lambda * reg.penalty(res.mu, h), timer, base));
    return res;
}

/**
 * Proximal stochastic gradient: per iteration a uniformly drawn mini-batch
 * (without replacement within the batch) replaces the full gradient. With
 * batch_size = N the trajectory coincides with the full proximal gradient.
 */
inline OptimResult proximal_stochastic_gradient(const ParameterPair& mu0, const OptimConfig& cfg,
                                                ForwardModel& model,
                                                const std::vector<PressureData>& data,
                                                const RegOperator& reg,
                                                const ParameterPair* truth = nullptr,
                                                const IterCallback& on_iterate = {}) {
    const int N = model.n_illuminations();
    cfg.validate(N);
    require(static_cast<int>(data.size()) == N,
            "proximal_stochastic_gradient: data/illumination mismatch");

    OptimResult res;
    res.mu = project_D(mu0, model.domain());
    Rng rng(cfg.rng_seed);
    WallTimer timer(cfg.wall_clock);
    const Counters base = counters();
    const double h = model.mesh().h;

    for (long k = 0; k < cfg.max_iter; ++k) {
        auto batch = detail::draw_batch(rng, N, cfg.batch_size);
        auto g = detail::batch_gradient(model, res.mu, batch, data, cfg.update_mu_s);
        TraceRow row = detail::make_row(k, res.mu, truth, g.mean_fidelity,
                                        cfg.lambda * reg.penalty(res.mu, h), timer, base);
        row.picked_i = detail::join_indices(batch);
        res.trace.push(row);

        const double s = cfg.step.at(k);
        ParameterPair x{res.mu.mu_a - s * g.ga, res.mu.mu_s - s * g.gs};
        res.mu = dykstra(x, reg, model.domain(), s * cfg.lambda, cfg.dykstra_max_iter,
                         cfg.dykstra_tol, cfg.cg_tol)
                     .value;
        res.iterations = k + 1;
        if (on_iterate) on_iterate(k + 1, res.mu);
    }
    res.trace.push(detail::make_row(cfg.max_iter, res.mu, truth,
                                    std::numeric_limits<double>::quiet_NaN(),
                                    cfg.lambda * reg.penalty(res.mu, h), timer, base));
    return res;
}

/**
 * Projected Landweber iteration (the lambda = 0 proximal gradient) with the
 * discrepancy-principle stop ||v - F(mu)|| <= tau * delta.
 */
inline OptimResult projected_landweber(const ParameterPair& mu0, const OptimConfig& cfg,
                                       ForwardModel& model, const std::vector<PressureData>& data,
                                       const RegOperator& reg, const ParameterPair* truth = nullptr,
                                       const IterCallback& on_iterate = {}) {
    const int N = model.n_illuminations();
    cfg.validate(N);
    require(static_cast<int>(data.size()) == N, "projected_landweber: data/illumination mismatch");

    double delta_sq = 0.0;
    for (int i = 0; i < N; ++i) delta_sq += cfg.delta_i(i) * cfg.delta_i(i);
    const double tau_delta = cfg.tau * std::sqrt(delta_sq);

    OptimResult res;
    res.mu = project_D(mu0, model.domain());
    WallTimer timer(cfg.wall_clock);
    const Counters base = counters();
    const double h = model.mesh().h;
    bool row_is_final = false;

    for (long k = 0; k < cfg.max_iter; ++k) {
        double res_sq = 0.0;
        std::vector<PressureData> residuals;
        residuals.reserve(N);
        for (int i = 0; i < N; ++i) {
            residuals.push_back(model.residual(res.mu, i, data[i]));
            res_sq += dot_Y(model.wave().geometry(), residuals.back(), residuals.back());
        }
        res.trace.push(detail::make_row(k, res.mu, truth, 0.5 * res_sq / N,
                                        cfg.lambda * reg.penalty(res.mu, h), timer, base));
        if (std::sqrt(res_sq) <= tau_delta) {
            res.stopped_by_discrepancy = true;
            row_is_final = true;
            break;
        }

        const int n = model.mesh().n_nodes();
        Vec ga = Vec::Zero(n), gs = Vec::Zero(n);
        for (int i = 0; i < N; ++i) {
            auto [gia, gis] = model.adjoint(res.mu, residuals[i], i);
            ga += gia;
            gs += gis;
        }
        ga /= N;
        gs /= N;
        if (!cfg.update_mu_s) gs.setZero();

        const double s = cfg.step.at(k);
        res.mu = project_D({res.mu.mu_a - s * ga, res.mu.mu_s - s * gs}, model.domain());
        res.iterations = k + 1;
        if (on_iterate) on_iterate(k + 1, res.mu);
    }
    if (!row_is_final)
        res.trace.push(detail::make_row(res.iterations, res.mu, truth,
                                        std::numeric_limits<double>::quiet_NaN(),
                                        cfg.lambda * reg.penalty(res.mu, h), timer, base));
    return res;
}

/**
 * Projected loping Landweber-Kaczmarz: a random equation per step, skipped
 * (omega_k = 0) when its residual is already at noise level. Terminates once
 * every residual evaluated at the current iterate satisfies the discrepancy
 * bound; skips cost one transport solve (the residual check) and no adjoint.
 */
inline OptimResult loping_landweber_kaczmarz(const ParameterPair& mu0, const OptimConfig& cfg,
                                             ForwardModel& model,
                                             const std::vector<PressureData>& data,
                                             const RegOperator& reg,
                                             const ParameterPair* truth = nullptr,
                                             const IterCallback& on_iterate = {}) {
    const int N = model.n_illuminations();
    cfg.validate(N);
    require(static_cast<int>(data.size()) == N,
            "loping_landweber_kaczmarz: data/illumination mismatch");

    OptimResult res;
    res.mu = project_D(mu0, model.domain());
    Rng rng(cfg.rng_seed);
    WallTimer timer(cfg.wall_clock);
    const Counters base = counters();
    const double h = model.mesh().h;

    // residual bookkeeping: value and the mu-version it was evaluated at
    std::vector<double> res_norm(N, std::numeric_limits<double>::infinity());
    std::vector<long> res_version(N, -1);
    long mu_version = 0;
    bool row_is_final = false;

    for (long k = 0; k < cfg.max_iter; ++k) {
        const int i = rng.uniform_index(N);
        PressureData r = model.residual(res.mu, i, data[i]);
        const double rn = norm_Y(model.wave().geometry(), r);
        res_norm[i] = rn;
        res_version[i] = mu_version;

        const int omega = rn > cfg.tau * cfg.delta_i(i) ? 1 : 0;
        TraceRow row = detail::make_row(k, res.mu, truth, 0.5 * rn * rn,
                                        cfg.lambda * reg.penalty(res.mu, h), timer, base);
        row.picked_i = std::to_string(i);
        row.omega = omega;
        res.trace.push(row);
        row_is_final = true;

        if (omega) {
            auto [ga, gs] = model.adjoint(res.mu, r, i);
            if (!cfg.update_mu_s) gs.setZero();
            const double s = cfg.step.at(k);
            res.mu = project_D({res.mu.mu_a - s * ga, res.mu.mu_s - s * gs}, model.domain());
            ++mu_version;
            row_is_final = false;
        }
        res.iterations = k + 1;
        if (on_iterate) on_iterate(k + 1, res.mu);

        if (!omega) {
            bool all_small = true;
            for (int j = 0; j < N; ++j)
                if (res_version[j] != mu_version || res_norm[j] > cfg.tau * cfg.delta_i(j)) {
                    all_small = false;
                    break;
                }
            if (all_small) {
                res.stopped_by_discrepancy = true;
                break;
            }
        }
    }
    if (!row_is_final)
        res.trace.push(detail::make_row(res.iterations, res.mu, truth,
                                        std::numeric_limits<double>::quiet_NaN(),
                                        cfg.lambda * reg.penalty(res.mu, h), timer, base));
    return res;
}

} // namespace qpat

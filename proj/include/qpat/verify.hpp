#pragma once

#include <string>
#include <vector>

#include "qpat/experiment.hpp"

namespace qpat {

struct VerifyCheck {
    std::string name;
    double measured = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

namespace detail_verify {

inline Vec random_vec(int n, Rng& rng) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

inline Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

inline Vec random_interior(const SpatialMesh& mesh, Rng& rng, double amp) {
    Vec f = Vec::Zero(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        if (mesh.node_sides[i] != 0) continue;
        const double bx = 1.0 - mesh.nodes[i].x() * mesh.nodes[i].x();
        const double by = 1.0 - mesh.nodes[i].y() * mesh.nodes[i].y();
        f[i] = amp * bx * by * rng.normal();
    }
    return f;
}

struct VerifyModel {
    SpatialMesh mesh;
    AngularGrid angles;
    ScatteringKernel kern;
    DetectorGeometry geom;
    FeasibleSet dom;
    RegOperator reg;
    std::unique_ptr<ForwardModel> model;
    std::vector<PressureData> data;
    ParameterPair truth;
    ParameterPair mu0;
};

inline VerifyModel make_verify_model(int cells, int n_theta, int n_det, double tol = 1e-11) {
    VerifyModel v;
    v.mesh = build_mesh_cells(cells);
    v.angles = build_angles(n_theta);
    v.kern = build_kernel(v.angles, 0.5);
    v.geom = make_geometry(1.8, n_det, v.mesh.h / 2.0, 4.0);
    v.dom = FeasibleSet::with_boundary(v.mesh, 3.0, 6.0, 0.3, 3.0);
    v.reg = RegOperator::laplacian(v.mesh);
    v.model = std::make_unique<ForwardModel>(v.mesh, v.angles, v.kern, v.geom, v.dom,
                                             WaveQuadrature{12, 64}, true, -1.0,
                                             SolveOptions{tol, 60, -1});
    for (Side s : {Side::Top, Side::Left})
        v.model->add_illumination(build_illumination(v.mesh, v.angles, v.geom, s));
    v.truth = ParameterPair::constant(v.mesh.n_nodes(), 0.3, 3.0);
    for (int i = 0; i < v.mesh.n_nodes(); ++i)
        if ((v.mesh.nodes[i] - Vec2{-0.2, 0.15}).norm() < 0.4) v.truth.mu_a[i] = 0.8;
    v.mu0 = ParameterPair::constant(v.mesh.n_nodes(), 0.3, 3.0);
    for (int i = 0; i < v.model->n_illuminations(); ++i)
        v.data.push_back(v.model->forward(v.truth, i));
    return v;
}

} // namespace detail_verify

/// Transport transpose, wave adjoint, and composed-operator adjoint
/// identities on a small grid.
inline std::vector<VerifyCheck> verify_adjoints(int cells = 8, int n_theta = 8, int trials = 5) {
    using namespace detail_verify;
    auto v = make_verify_model(cells, n_theta, 16);
    Rng rng(101);
    std::vector<VerifyCheck> out;

    ParameterPair mu = ParameterPair::constant(v.mesh.n_nodes(), 0.35, 1.5);
    v.model->ensure_parameters(mu);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        Mat a = random_mat(v.mesh.n_nodes(), v.angles.n_theta, rng);
        Mat b = random_mat(v.mesh.n_nodes(), v.angles.n_theta, rng);
        const double lhs = v.model->system().apply(a).cwiseProduct(b).sum();
        const double rhs = a.cwiseProduct(v.model->system().apply_transpose(b)).sum();
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(1e-300, std::abs(lhs)));
    }
    out.push_back({"transport_transpose_identity", worst, 1e-12, worst <= 1e-12});

    worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        Vec p0 = random_vec(v.mesh.n_nodes(), rng);
        PressureData w{random_mat(v.geom.n_detectors, v.geom.n_t, rng), std::nullopt};
        const double lhs = dot_Y(v.geom, v.model->wave().apply(p0), w.values);
        const double rhs = v.mesh.h * v.mesh.h * p0.dot(v.model->wave().adjoint(w));
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(1e-300, std::abs(lhs)));
    }
    out.push_back({"wave_adjoint_identity", worst, 1e-12, worst <= 1e-12});

    worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int i = t % v.model->n_illuminations();
        Vec ha = random_interior(v.mesh, rng, 0.3);
        Vec hs = random_interior(v.mesh, rng, 0.3);
        PressureData w{random_mat(v.geom.n_detectors, v.geom.n_t, rng), v.model->arc_mask(i)};
        PressureData fh = v.model->derivative(mu, ha, hs, i);
        auto [ga, gs] = v.model->adjoint(mu, w, i);
        Mat masked = w.values;
        apply_mask(masked, *w.mask);
        const double lhs = dot_Y(v.geom, fh.values, masked);
        const double rhs = dot_spatial(v.mesh, ha, ga) + dot_spatial(v.mesh, hs, gs);
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(1e-300, std::abs(lhs)));
    }
    out.push_back({"composed_adjoint_identity", worst, 1e-6, worst <= 1e-6});
    return out;
}

/// Quasi-isometry of the wave trace: the measured Y-to-L2 energy ratio
/// against R/2 for a smooth bump.
inline std::vector<VerifyCheck> verify_isometry(int cells = 80, int n_det = 128) {
    auto mesh = build_mesh_cells(cells);
    auto geom = make_geometry(1.8, n_det, mesh.h / 2.0, 4.0);
    WaveOperator u(mesh, geom, WaveQuadrature{32, 256}, false);
    Vec p0(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        const double r2 = (mesh.nodes[i] - Vec2{0.1, -0.15}).squaredNorm();
        p0[i] = std::exp(-r2 / (2.0 * 0.15 * 0.15));
    }
    const double ratio = u.isometry_ratio(p0);
    const double rel = std::abs(ratio / (geom.radius / 2.0) - 1.0);
    return {{"isometry_ratio_R_over_2 (measured " + std::to_string(ratio) + ")", rel, 0.02,
             rel <= 0.02}};
}

/// Finite-difference checks of all multilinear partial gradients and the
/// composed fidelity gradient.
inline std::vector<VerifyCheck> verify_gradients(int states = 3) {
    using namespace detail_verify;
    auto v = make_verify_model(6, 8, 8);
    MullProblem prob(*v.model, v.reg, v.data, PenaltyWeights{});
    Rng rng(211);
    const double h2 = v.mesh.h * v.mesh.h;
    const double h2w = h2 * v.angles.weight;

    double worst_mull = 0.0;
    for (int s = 0; s < states; ++s) {
        MullState z;
        z.mu = ParameterPair{Vec(v.mesh.n_nodes()), Vec(v.mesh.n_nodes())};
        for (int i = 0; i < v.mesh.n_nodes(); ++i) {
            z.mu.mu_a[i] = 0.2 + 0.5 * rng.next_unit();
            z.mu.mu_s[i] = 1.0 + 1.5 * rng.next_unit();
        }
        for (int i = 0; i < v.model->n_illuminations(); ++i) {
            z.phi.push_back(random_mat(v.mesh.n_nodes(), v.angles.n_theta, rng));
            z.heat.push_back(random_vec(v.mesh.n_nodes(), rng));
        }
        for (int i = 0; i < v.model->n_illuminations(); ++i) {
            for (int ell = 1; ell <= 4; ++ell) {
                Vec da = random_vec(v.mesh.n_nodes(), rng);
                Vec ds = random_vec(v.mesh.n_nodes(), rng);
                Mat dphi = random_mat(v.mesh.n_nodes(), v.angles.n_theta, rng);
                Vec dh = random_vec(v.mesh.n_nodes(), rng);
                MullGrad g = prob.grad_J(ell, i, z);
                double dir = 0.0;
                if (g.has_mu) dir += h2 * (g.ga.dot(da) + g.gs.dot(ds));
                if (g.has_phi) dir += h2w * g.gphi.cwiseProduct(dphi).sum();
                if (g.has_heat) dir += h2 * g.gheat.dot(dh);
                const double eps = 1e-6;
                auto shift = [&](double e) {
                    MullState zz = z;
                    zz.mu.mu_a += e * da;
                    zz.mu.mu_s += e * ds;
                    zz.phi[i] += e * dphi;
                    zz.heat[i] += e * dh;
                    return prob.eval_J(ell, i, zz);
                };
                const double fd = (shift(eps) - shift(-eps)) / (2.0 * eps);
                worst_mull = std::max(worst_mull,
                                      std::abs(dir - fd) / std::max(1e-300, std::abs(fd)));
            }
        }
    }
    std::vector<VerifyCheck> out;
    out.push_back({"mull_gradients_fd", worst_mull, 1e-5, worst_mull <= 1e-5});

    auto vt = make_verify_model(6, 8, 8, 1e-12);
    double worst_f = 0.0;
    Rng rng2(223);
    for (int s = 0; s < states; ++s) {
        ParameterPair mu = ParameterPair::constant(vt.mesh.n_nodes(), 0.4, 1.1);
        auto [ga, gs] = vt.model->grad_fidelity(mu, 0, vt.data[0]);
        Vec ha = random_interior(vt.mesh, rng2, 0.2);
        Vec hs = random_interior(vt.mesh, rng2, 0.2);
        const double dir = dot_spatial(vt.mesh, ha, ga) + dot_spatial(vt.mesh, hs, gs);
        const double eps = 1e-4;
        ParameterPair mup(mu.mu_a + eps * ha, mu.mu_s + eps * hs);
        ParameterPair mum(mu.mu_a - eps * ha, mu.mu_s - eps * hs);
        const double fd =
            (vt.model->fidelity(mup, 0, vt.data[0]) - vt.model->fidelity(mum, 0, vt.data[0])) /
            (2.0 * eps);
        worst_f = std::max(worst_f, std::abs(dir - fd) / std::max(1e-300, std::abs(fd)));
    }
    out.push_back({"fidelity_gradient_fd", worst_f, 1e-4, worst_f <= 1e-4});
    return out;
}

/// Dykstra output against an independent projected-FISTA solution of the
/// constrained quadratic program.
inline std::vector<VerifyCheck> verify_dykstra() {
    auto mesh = build_mesh_cells(6); // 49 nodes
    auto reg = RegOperator::laplacian(mesh);
    FeasibleSet dom = FeasibleSet::with_boundary(mesh, 1.0, 4.0, 0.3, 3.0);
    Rng rng(31);
    ParameterPair x{Vec(mesh.n_nodes()), Vec(mesh.n_nodes())};
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        x.mu_a[i] = 0.5 + rng.normal();
        x.mu_s[i] = 3.0 + rng.normal();
    }
    const double sl = 2e-3;
    auto dyk = dykstra(x, reg, dom, sl, 2000, 1e-14, 1e-13);

    auto H_a = [&](const Vec& v) { return Vec(v + sl * (reg.L_a.transpose() * (reg.L_a * v))); };
    auto H_s = [&](const Vec& v) { return Vec(v + sl * (reg.L_s.transpose() * (reg.L_s * v))); };
    auto lip = [&](auto&& H, Eigen::Index n) {
        Rng r(7);
        Vec v = detail_verify::random_vec(static_cast<int>(n), r);
        double lam = 1.0;
        for (int k = 0; k < 300; ++k) {
            Vec w = H(v);
            lam = w.norm() / v.norm();
            v = w / w.norm();
        }
        return lam * 1.01;
    };
    const double La = lip(H_a, x.mu_a.size());
    const double Ls = lip(H_s, x.mu_s.size());
    ParameterPair y = project_D(x, dom), z = y, prev = y;
    double t = 1.0;
    for (int k = 0; k < 100000; ++k) {
        prev = y;
        ParameterPair grad{H_a(z.mu_a) - x.mu_a, H_s(z.mu_s) - x.mu_s};
        y = project_D({z.mu_a - grad.mu_a / La, z.mu_s - grad.mu_s / Ls}, dom);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        z = {y.mu_a + ((t - 1.0) / tn) * (y.mu_a - prev.mu_a),
             y.mu_s + ((t - 1.0) / tn) * (y.mu_s - prev.mu_s)};
        t = tn;
        if ((y.mu_a - prev.mu_a).norm() + (y.mu_s - prev.mu_s).norm() < 1e-14) break;
    }
    const double err = std::sqrt(mesh.h * mesh.h * ((dyk.value.mu_a - y.mu_a).squaredNorm() +
                                                    (dyk.value.mu_s - y.mu_s).squaredNorm()));
    return {{"dykstra_qp_oracle_L2", err, 1e-6, err <= 1e-6}};
}

/// Trajectory degeneracies: batch-N stochastic vs full proximal gradient and
/// lambda = 0 proximal gradient vs projected Landweber.
inline std::vector<VerifyCheck> verify_degeneracy() {
    using namespace detail_verify;
    auto v = make_verify_model(6, 8, 8);
    std::vector<VerifyCheck> out;

    OptimConfig cfg;
    cfg.lambda = 1e-6;
    cfg.max_iter = 5;

    auto full = proximal_gradient(v.mu0, cfg, *v.model, v.data, v.reg);
    OptimConfig scfg = cfg;
    scfg.batch_size = v.model->n_illuminations();
    auto stoch = proximal_stochastic_gradient(v.mu0, scfg, *v.model, v.data, v.reg);
    const double d1 = (full.mu.mu_a - stoch.mu.mu_a).cwiseAbs().maxCoeff();
    out.push_back({"prox_sgd_batchN_equals_pg", d1, 1e-12, d1 <= 1e-12});

    OptimConfig zcfg = cfg;
    zcfg.lambda = 0.0;
    auto pg = proximal_gradient(v.mu0, zcfg, *v.model, v.data, v.reg);
    auto lw = projected_landweber(v.mu0, zcfg, *v.model, v.data, v.reg);
    const double d2 = (pg.mu.mu_a - lw.mu.mu_a).cwiseAbs().maxCoeff();
    out.push_back({"pg_lambda0_equals_landweber", d2, 1e-12, d2 <= 1e-12});
    return out;
}

inline std::vector<VerifyCheck> verify_suite(const std::string& suite) {
    std::vector<VerifyCheck> out;
    auto append = [&](std::vector<VerifyCheck> v) {
        for (auto& c : v) out.push_back(std::move(c));
    };
    if (suite == "adjoints") append(verify_adjoints());
    else if (suite == "isometry") append(verify_isometry());
    else if (suite == "gradients") append(verify_gradients());
    else if (suite == "dykstra") append(verify_dykstra());
    else if (suite == "degeneracy") append(verify_degeneracy());
    else if (suite == "all") {
        append(verify_adjoints());
        append(verify_isometry());
        append(verify_gradients());
        append(verify_dykstra());
        append(verify_degeneracy());
    } else {
        throw std::invalid_argument(
            "verify: unknown suite '" + suite +
            "' (expected adjoints|isometry|gradients|dykstra|degeneracy|all)");
    }
    return out;
}

} // namespace qpat

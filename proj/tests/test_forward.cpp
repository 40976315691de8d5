#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <qpat/forward.hpp>

using namespace qpat;

namespace {

struct Setup {
    SpatialMesh mesh;
    AngularGrid angles;
    ScatteringKernel kern;
    DetectorGeometry geom;
    FeasibleSet dom;
};

Setup small_setup(int cells = 8, int n_theta = 8, int n_det = 16) {
    Setup s;
    s.mesh = build_mesh_cells(cells);
    s.angles = build_angles(n_theta);
    s.kern = build_kernel(s.angles, 0.5);
    s.geom = make_geometry(1.8, n_det, s.mesh.h / 2.0, 4.0);
    s.dom = FeasibleSet::boxed(3.0, 6.0);
    return s;
}

Illumination side_illumination(const Setup& s, Side side) {
    Illumination il;
    il.side = side;
    il.arc = s.geom.arc(side);
    il.horizon = s.geom.t_max();
    il.source.boundary = Mat::Zero(s.mesh.n_boundary(), s.angles.n_theta);
    const int dir = s.angles.nearest(-outward_normal(side));
    for (int p = 0; p < s.mesh.n_boundary(); ++p)
        if (s.mesh.on_side(s.mesh.boundary_nodes[p], side))
            il.source.boundary(p, dir) = 1.0 / s.angles.weight;
    return il;
}

ForwardModel make_model(const Setup& s, bool tight = false) {
    SolveOptions opt;
    opt.tol = tight ? 1e-11 : 1e-9;
    ForwardModel m(s.mesh, s.angles, s.kern, s.geom, s.dom, WaveQuadrature{12, 64}, true, -1.0, opt);
    return m;
}

Vec random_bump_field(const SpatialMesh& mesh, Rng& rng, double amp) {
    // smooth random interior perturbation, zero at the boundary
    Vec f = Vec::Zero(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        if (mesh.node_sides[i] != 0) continue;
        const double bx = 1.0 - mesh.nodes[i].x() * mesh.nodes[i].x();
        const double by = 1.0 - mesh.nodes[i].y() * mesh.nodes[i].y();
        f[i] = amp * bx * by * rng.normal();
    }
    return f;
}

} // namespace

TEST_CASE("forward basics") {
    auto s = small_setup();
    auto model = make_model(s);
    model.add_illumination(side_illumination(s, Side::Top));

    SUBCASE("zero absorption gives zero data") {
        ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.0, 3.0);
        PressureData v = model.forward(mu, 0);
        CHECK(v.values.cwiseAbs().maxCoeff() < 1e-14);
    }

    SUBCASE("zero source gives zero heating") {
        Illumination empty;
        empty.side = Side::Left;
        empty.arc = s.geom.arc(Side::Left);
        empty.horizon = s.geom.t_max();
        const int i = model.add_illumination(empty);
        ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.3, 3.0);
        CHECK(model.heating(mu, i).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("linearity in the source scale") {
        auto il = side_illumination(s, Side::Top);
        il.source.boundary *= 2.0;
        const int i = model.add_illumination(il);
        ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.3, 3.0);
        PressureData v1 = model.forward(mu, 0);
        PressureData v2 = model.forward(mu, i);
        CHECK((v2.values - 2.0 * v1.values).cwiseAbs().maxCoeff() <
              1e-7 * v1.values.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("heating decays with depth in the vacuum-scattering limit") {
    SpatialMesh mesh = build_mesh_cells(16);
    AngularGrid angles = build_angles(8);
    ScatteringKernel kern = build_kernel(angles, 0.5);
    DetectorGeometry geom = make_geometry(1.8, 8, mesh.h / 2.0, 4.0);
    FeasibleSet dom = FeasibleSet::boxed(3.0, 6.0);
    ForwardModel model(mesh, angles, kern, geom, dom, WaveQuadrature{8, 32}, false, -1.0,
                       {1e-10, 60, -1});

    Setup s{mesh, angles, kern, geom, dom};
    model.add_illumination(side_illumination(s, Side::Left));

    const double mu_a = 0.4;
    ParameterPair mu = ParameterPair::constant(mesh.n_nodes(), mu_a, 0.0);
    Vec H = model.heating(mu, 0);

    // midline row: monotone decay, close to the Beer-Lambert profile
    const int iy = mesh.cells / 2;
    double prev = std::numeric_limits<double>::infinity();
    for (int ix = 1; ix < mesh.cells; ++ix) {
        const int n = mesh.node_index(ix, iy);
        CHECK(H[n] < prev);
        prev = H[n];
        const double depth = mesh.nodes[n].x() + 1.0;
        const double expected = mu_a * std::exp(-mu_a * depth);
        CHECK(H[n] == doctest::Approx(expected).epsilon(0.15));
    }
}

TEST_CASE("derivative matches one-sided finite differences") {
    auto s = small_setup();
    auto model = make_model(s, true);
    model.add_illumination(side_illumination(s, Side::Top));

    Rng rng(13);
    ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.3, 1.0);
    Vec ha = random_bump_field(s.mesh, rng, 0.2);
    Vec hs = random_bump_field(s.mesh, rng, 0.2);

    PressureData dv = model.derivative(mu, ha, hs, 0);
    const double dnorm = std::sqrt(dot_Y(s.geom, dv, dv));
    REQUIRE(dnorm > 0.0);

    double prev_err = std::numeric_limits<double>::infinity();
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        ParameterPair mup(mu.mu_a + eps * ha, mu.mu_s + eps * hs);
        PressureData fp = model.forward(mup, 0);
        PressureData f0 = model.forward(mu, 0);
        Mat fd = (fp.values - f0.values) / eps;
        Mat diff = fd - dv.values;
        PressureData dd{diff, std::nullopt};
        const double err = std::sqrt(dot_Y(s.geom, dd, dd)) / dnorm;
        CHECK(err < 0.7 * prev_err);
        prev_err = err;
    }
    CHECK(prev_err < 2e-3);

    SUBCASE("zero direction, linearity") {
        PressureData z = model.derivative(mu, Vec::Zero(s.mesh.n_nodes()),
                                          Vec::Zero(s.mesh.n_nodes()), 0);
        CHECK(z.values.cwiseAbs().maxCoeff() < 1e-14);

        PressureData d1 = model.derivative(mu, ha, hs, 0);
        PressureData d2 = model.derivative(mu, 2.0 * ha, 2.0 * hs, 0);
        CHECK((d2.values - 2.0 * d1.values).cwiseAbs().maxCoeff() <
              1e-7 * d1.values.cwiseAbs().maxCoeff());
    }

    SUBCASE("infeasible direction rejected") {
        ParameterPair at_zero = ParameterPair::constant(s.mesh.n_nodes(), 0.0, 1.0);
        Vec down = Vec::Constant(s.mesh.n_nodes(), -1.0);
        CHECK_THROWS_AS(model.derivative(at_zero, down, Vec::Zero(s.mesh.n_nodes()), 0),
                        std::invalid_argument);
    }
}

TEST_CASE("adjoint identity for the composed operator") {
    auto s = small_setup();
    auto model = make_model(s, true);
    model.add_illumination(side_illumination(s, Side::Top));
    model.add_illumination(side_illumination(s, Side::Left));

    Rng rng(17);
    ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.35, 1.2);

    for (int i = 0; i < 2; ++i) {
        for (int trial = 0; trial < 3; ++trial) {
            Vec ha = random_bump_field(s.mesh, rng, 0.3);
            Vec hs = random_bump_field(s.mesh, rng, 0.3);
            Mat vv(s.geom.n_detectors, s.geom.n_t);
            for (int d = 0; d < s.geom.n_detectors; ++d)
                for (int k = 0; k < s.geom.n_t; ++k) vv(d, k) = rng.normal();
            PressureData v{vv, model.arc_mask(i)};

            PressureData fh = model.derivative(mu, ha, hs, i);
            auto [ga, gs] = model.adjoint(mu, v, i);

            PressureData masked = v;
            apply_mask(masked.values, *v.mask);
            const double lhs = dot_Y(s.geom, fh.values, masked.values);
            const double rhs = dot_spatial(s.mesh, ha, ga) + dot_spatial(s.mesh, hs, gs);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
        }
        // v = 0 maps to (0, 0)
        PressureData z{Mat::Zero(s.geom.n_detectors, s.geom.n_t), std::nullopt};
        auto [za, zs] = model.adjoint(mu, z, i);
        CHECK(za.cwiseAbs().maxCoeff() < 1e-14);
        CHECK(zs.cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("fidelity and its gradient") {
    auto s = small_setup();
    auto model = make_model(s, true);
    model.add_illumination(side_illumination(s, Side::Top));

    ParameterPair truth = ParameterPair::constant(s.mesh.n_nodes(), 0.3, 1.0);
    Rng rng(19);
    truth.mu_a += random_bump_field(s.mesh, rng, 0.1).cwiseAbs();
    PressureData data = model.forward(truth, 0);

    SUBCASE("exact data: zero fidelity and vanishing gradient") {
        CHECK(model.fidelity(truth, 0, data) < 1e-16);
        auto [ga, gs] = model.grad_fidelity(truth, 0, data);
        const double scale = std::max(1.0, data.values.cwiseAbs().maxCoeff());
        CHECK(ga.cwiseAbs().maxCoeff() < 1e-8 * scale);
        CHECK(gs.cwiseAbs().maxCoeff() < 1e-8 * scale);
    }

    SUBCASE("nonnegativity and quadratic scaling") {
        ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.4, 1.0);
        const double f = model.fidelity(mu, 0, data);
        CHECK(f >= 0.0);

        // doubling the residual quadruples the fidelity
        PressureData f_mu = model.forward(mu, 0);
        PressureData doubled{2.0 * f_mu.values - data.values, data.mask};
        // fidelity(mu with data') where residual' = 2*(F(mu)-data)
        PressureData r{f_mu.values - data.values, std::nullopt};
        PressureData r2{2.0 * (f_mu.values - data.values), std::nullopt};
        CHECK(dot_Y(s.geom, r2, r2) == doctest::Approx(4.0 * dot_Y(s.geom, r, r)).epsilon(1e-12));
    }

    SUBCASE("directional derivative of the fidelity matches central differences") {
        ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.4, 1.1);
        auto [ga, gs] = model.grad_fidelity(mu, 0, data);
        for (int trial = 0; trial < 3; ++trial) {
            Vec ha = random_bump_field(s.mesh, rng, 0.2);
            Vec hs = random_bump_field(s.mesh, rng, 0.2);
            const double dir = dot_spatial(s.mesh, ha, ga) + dot_spatial(s.mesh, hs, gs);
            const double eps = 1e-4;
            ParameterPair mup(mu.mu_a + eps * ha, mu.mu_s + eps * hs);
            ParameterPair mum(mu.mu_a - eps * ha, mu.mu_s - eps * hs);
            const double fd =
                (model.fidelity(mup, 0, data) - model.fidelity(mum, 0, data)) / (2.0 * eps);
            CHECK(dir == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("cost contract: one solve and one adjoint per gradient") {
    auto s = small_setup(6, 8, 8);
    auto model = make_model(s);
    model.add_illumination(side_illumination(s, Side::Top));
    ParameterPair truth = ParameterPair::constant(s.mesh.n_nodes(), 0.5, 1.0);
    PressureData data = model.forward(truth, 0);

    ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.3, 1.0);
    counters().reset();
    auto g = model.grad_fidelity(mu, 0, data);
    CHECK(counters().rte_solves == 1);
    CHECK(counters().rte_adjoint_solves == 1);

    // fidelity at the same coefficients reuses the cached photon field
    counters().reset();
    (void)model.fidelity(mu, 0, data);
    CHECK(counters().rte_solves == 0);
    (void)g;
}

TEST_CASE("full gradient is the sum of the partial gradients") {
    auto s = small_setup(6, 8, 8);
    auto model = make_model(s);
    model.add_illumination(side_illumination(s, Side::Top));
    model.add_illumination(side_illumination(s, Side::Left));
    ParameterPair truth = ParameterPair::constant(s.mesh.n_nodes(), 0.5, 1.0);
    std::vector<PressureData> data;
    for (int i = 0; i < 2; ++i) data.push_back(model.forward(truth, i));

    ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.3, 1.0);
    Vec sum_a = Vec::Zero(s.mesh.n_nodes()), sum_s = Vec::Zero(s.mesh.n_nodes());
    for (int i = 0; i < 2; ++i) {
        auto [ga, gs] = model.grad_fidelity(mu, i, data[i]);
        sum_a += ga;
        sum_s += gs;
    }
    // recompute in one sweep; identical order gives bitwise equality
    Vec again_a = Vec::Zero(s.mesh.n_nodes()), again_s = Vec::Zero(s.mesh.n_nodes());
    for (int i = 0; i < 2; ++i) {
        auto [ga, gs] = model.grad_fidelity(mu, i, data[i]);
        again_a += ga;
        again_s += gs;
    }
    CHECK((sum_a - again_a).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sum_s - again_s).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("empirical Lipschitz stability of the gradient") {
    auto s = small_setup(6, 8, 8);
    auto model = make_model(s);
    model.add_illumination(side_illumination(s, Side::Top));
    ParameterPair truth = ParameterPair::constant(s.mesh.n_nodes(), 0.5, 1.0);
    PressureData data = model.forward(truth, 0);

    Rng rng(23);
    double worst_ratio = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        ParameterPair mu = ParameterPair::constant(s.mesh.n_nodes(), 0.4, 1.0);
        Vec da = random_bump_field(s.mesh, rng, 0.05);
        Vec ds = random_bump_field(s.mesh, rng, 0.05);

        auto ratio_at = [&](double scale) {
            ParameterPair mu2(mu.mu_a + scale * da, mu.mu_s + scale * ds);
            auto [g1a, g1s] = model.grad_fidelity(mu, 0, data);
            auto [g2a, g2s] = model.grad_fidelity(mu2, 0, data);
            const double num = norm_spatial(s.mesh, Vec(g2a - g1a)) +
                               norm_spatial(s.mesh, Vec(g2s - g1s));
            const double den = norm_spatial(s.mesh, Vec(scale * da)) +
                               norm_spatial(s.mesh, Vec(scale * ds));
            return num / den;
        };
        const double r1 = ratio_at(1.0);
        const double r2 = ratio_at(0.5);
        worst_ratio = std::max({worst_ratio, r1, r2});
        // halving the distance does not blow up the difference quotient
        CHECK(r2 < 4.0 * std::max(r1, 1e-12) + 1e-9);
    }
    CHECK(worst_ratio < 1e6);
}

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "qpat/forward.hpp"
#include "qpat/io.hpp"
#include "qpat/optim_mull.hpp"
#include "qpat/optim_standard.hpp"

namespace qpat {

/// The tissue phantom: piecewise-constant absorption (background, two disks,
/// a stripe band) over constant scattering. Geometry is fixed so runs are
/// reproducible.
struct Phantom {
    struct Disk {
        Vec2 center;
        double radius;
        double value;
    };

    ParameterPair mu;
    std::vector<Disk> disks;
    double background_a = 0.3;
    double stripe_value = 2.0;
    double gap_value = 0.5;
    double scattering = 3.0;
    double stripe_x0 = -0.7, stripe_x1 = 0.7;
    double stripe_half_width = 0.06;
    std::vector<double> stripe_centers{0.21, 0.45, 0.69};
};

inline double phantom_mu_a_at(const Phantom& p, const Vec2& x) {
    for (const auto& d : p.disks)
        if ((x - d.center).norm() <= d.radius) return d.value;
    if (x.x() >= p.stripe_x0 && x.x() <= p.stripe_x1) {
        for (double c : p.stripe_centers)
            if (std::abs(x.y() - c) <= p.stripe_half_width) return p.stripe_value;
        if (x.y() >= p.stripe_centers.front() && x.y() <= p.stripe_centers.back())
            return p.gap_value;
    }
    return p.background_a;
}

inline Phantom build_phantom(const SpatialMesh& mesh) {
    Phantom p;
    p.disks = {{Vec2{-0.45, -0.35}, 0.25, 1.0}, {Vec2{0.45, -0.35}, 0.25, 1.0}};
    p.mu.mu_a = Vec(mesh.n_nodes());
    p.mu.mu_s = Vec::Constant(mesh.n_nodes(), p.scattering);
    for (int i = 0; i < mesh.n_nodes(); ++i) p.mu.mu_a[i] = phantom_mu_a_at(p, mesh.nodes[i]);
    return p;
}

/// Perpendicular boundary illumination of one side: delta in direction
/// (carried by the nearest angular node with weight 1/w) times the side
/// indicator, amplitude 1 by convention. The detector arc is the half circle
/// on the same side.
inline Illumination build_illumination(const SpatialMesh& mesh, const AngularGrid& angles,
                                       const DetectorGeometry& geom, Side side,
                                       double amplitude = 1.0) {
    Illumination il;
    il.side = side;
    il.arc = geom.arc(side);
    il.horizon = geom.t_max();
    il.source.boundary = Mat::Zero(mesh.n_boundary(), angles.n_theta);
    const int dir = angles.nearest(-outward_normal(side));
    for (int pnode = 0; pnode < mesh.n_boundary(); ++pnode)
        if (mesh.on_side(mesh.boundary_nodes[pnode], side))
            il.source.boundary(pnode, dir) = amplitude / angles.weight;
    return il;
}

inline std::vector<Illumination> build_illuminations(const std::vector<Side>& sides,
                                                     const SpatialMesh& mesh,
                                                     const AngularGrid& angles,
                                                     const DetectorGeometry& geom) {
    require(!sides.empty(), "build_illuminations: need at least one side");
    std::vector<Illumination> out;
    out.reserve(sides.size());
    for (Side s : sides) out.push_back(build_illumination(mesh, angles, geom, s));
    return out;
}

struct GridSpec {
    int cells = 40;
    int n_theta = 16;
};

/// One end-to-end experiment: simulation grid, reconstruction grid, noise,
/// and the algorithm configuration.
struct Scenario {
    std::vector<Side> sides{Side::Top, Side::Right, Side::Bottom, Side::Left};
    GridSpec data_grid{50, 32};
    GridSpec recon_grid{40, 16};
    double kernel_g = 0.5;

    double radius = 1.8;
    int n_detectors = 64;
    double dt = -1.0; // < 0: recon mesh h / 2
    double t_max = 4.0;
    WaveQuadrature quad_data{};  // mesh-adaptive by default
    WaveQuadrature quad_recon{};

    double noise_level = 0.0;
    std::uint64_t noise_seed = 7;

    std::string algorithm = "pg"; // pg | prox-sgd | landweber | llk | mull-proj | mull-prox
    OptimConfig optim;
    PenaltyWeights weights;
    MullConfig mull;
    bool mull_warm_start = true;

    double mu_a_max = 3.0;
    double mu_s_max = 6.0;
    double solver_tol = 1e-8;
    int solver_restart = 60;
    long checkpoint_every = 0;

    void validate() const {
        require(!sides.empty(), "Scenario: need at least one illumination side");
        require(data_grid.cells > recon_grid.cells,
                "Scenario: simulation grid must be finer than the reconstruction grid "
                "(inverse-crime guard)");
        require(noise_level >= 0.0, "Scenario: noise level must be nonnegative");
        const std::vector<std::string> known{"pg",  "prox-sgd",  "landweber",
                                             "llk", "mull-proj", "mull-prox"};
        bool ok = false;
        for (const auto& a : known) ok |= a == algorithm;
        require(ok, "Scenario: unknown algorithm '" + algorithm + "'");
    }

    double effective_dt() const { return dt > 0.0 ? dt : (2.0 / recon_grid.cells) / 2.0; }
};

struct NoiseRecord {
    double level = 0.0;
    std::uint64_t seed = 0;
    double sigma = 0.0;
    Vec delta; // Y-norm of the added noise per illumination
};

/// Adds seeded white noise with sigma = level * max |v| (max over all
/// illuminations), inside the data masks only.
inline NoiseRecord add_noise(std::vector<PressureData>& data, const DetectorGeometry& geom,
                             double level, std::uint64_t seed) {
    require(level >= 0.0, "add_noise: level must be nonnegative");
    NoiseRecord rec;
    rec.level = level;
    rec.seed = seed;
    rec.delta = Vec::Zero(static_cast<Eigen::Index>(data.size()));
    if (level == 0.0 || data.empty()) return rec;

    double peak = 0.0;
    for (const auto& v : data) peak = std::max(peak, v.values.cwiseAbs().maxCoeff());
    rec.sigma = level * peak;

    Rng rng(seed);
    for (std::size_t i = 0; i < data.size(); ++i) {
        Mat noise(data[i].values.rows(), data[i].values.cols());
        for (Eigen::Index r = 0; r < noise.rows(); ++r)
            for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = rec.sigma * rng.normal();
        if (data[i].mask) apply_mask(noise, *data[i].mask);
        data[i].values += noise;
        PressureData nn{noise, std::nullopt};
        rec.delta[static_cast<Eigen::Index>(i)] = norm_Y(geom, nn);
    }
    return rec;
}

struct SimulationResult {
    std::vector<PressureData> data;
    DetectorGeometry geometry;
    NoiseRecord noise;
    Phantom phantom;
};

/// Simulates multi-illumination data on the (finer) simulation grid via the
/// full transport + wave pipeline, then adds noise.
inline SimulationResult simulate_data(const Scenario& sc) {
    sc.validate();
    SimulationResult out;

    SpatialMesh mesh = build_mesh_cells(sc.data_grid.cells);
    AngularGrid angles = build_angles(sc.data_grid.n_theta);
    ScatteringKernel kern = build_kernel(angles, sc.kernel_g);
    out.geometry = make_geometry(sc.radius, sc.n_detectors, sc.effective_dt(), sc.t_max);
    out.phantom = build_phantom(mesh);

    FeasibleSet dom = FeasibleSet::with_boundary(mesh, sc.mu_a_max, sc.mu_s_max,
                                                 out.phantom.background_a, out.phantom.scattering);
    ForwardModel model(mesh, angles, kern, out.geometry, dom, sc.quad_data,
                       /*store_wave_matrix=*/false, -1.0,
                       SolveOptions{sc.solver_tol, sc.solver_restart, -1});
    for (const auto& il : build_illuminations(sc.sides, mesh, angles, out.geometry))
        model.add_illumination(il);

    for (int i = 0; i < model.n_illuminations(); ++i)
        out.data.push_back(model.forward(out.phantom.mu, i));
    out.noise = add_noise(out.data, out.geometry, sc.noise_level, sc.noise_seed);
    return out;
}

/// The reconstruction-side model: coarser grid, stored wave matrix.
struct ReconSetup {
    SpatialMesh mesh;
    AngularGrid angles;
    ScatteringKernel kern;
    DetectorGeometry geometry;
    FeasibleSet dom;
    RegOperator reg;
    std::unique_ptr<ForwardModel> model;
    Phantom phantom; // ground truth rasterized on the reconstruction grid
    ParameterPair mu0;
};

inline ReconSetup make_recon_setup(const Scenario& sc) {
    ReconSetup r;
    r.mesh = build_mesh_cells(sc.recon_grid.cells);
    r.angles = build_angles(sc.recon_grid.n_theta);
    r.kern = build_kernel(r.angles, sc.kernel_g);
    r.geometry = make_geometry(sc.radius, sc.n_detectors, sc.effective_dt(), sc.t_max);
    r.phantom = build_phantom(r.mesh);
    r.dom = FeasibleSet::with_boundary(r.mesh, sc.mu_a_max, sc.mu_s_max, r.phantom.background_a,
                                       r.phantom.scattering);
    r.reg = RegOperator::laplacian(r.mesh);
    r.model = std::make_unique<ForwardModel>(r.mesh, r.angles, r.kern, r.geometry, r.dom,
                                             sc.quad_recon, /*store_wave_matrix=*/true, -1.0,
                                             SolveOptions{sc.solver_tol, sc.solver_restart, -1});
    for (const auto& il : build_illuminations(sc.sides, r.mesh, r.angles, r.geometry))
        r.model->add_illumination(il);
    // the coefficients are known at the boundary and used as starting value
    r.mu0 = ParameterPair::constant(r.mesh.n_nodes(), r.phantom.background_a, r.phantom.scattering);
    return r;
}

struct ReconResult {
    ParameterPair mu;
    IterateTrace trace;
    long iterations = 0;
    std::uint64_t rte_solves = 0;
    std::uint64_t transport_applies = 0;
    double wall_s = 0.0;
};

/// Runs the configured algorithm against the given data on the
/// reconstruction grid.
inline ReconResult reconstruct(const Scenario& sc, ReconSetup& setup,
                               const std::vector<PressureData>& data,
                               const IterCallback& on_iterate = {}) {
    sc.validate();
    require(static_cast<int>(data.size()) == setup.model->n_illuminations(),
            "reconstruct: data/illumination mismatch");

    OptimConfig cfg = sc.optim;
    cfg.wall_clock = sc.optim.wall_clock;

    const Counters before = counters();
    WallTimer timer(true);

    ReconResult out;
    const ParameterPair* truth = &setup.phantom.mu;
    if (sc.algorithm == "pg") {
        auto r = proximal_gradient(setup.mu0, cfg, *setup.model, data, setup.reg, truth, on_iterate);
        out.mu = r.mu;
        out.trace = std::move(r.trace);
        out.iterations = r.iterations;
    } else if (sc.algorithm == "prox-sgd") {
        auto r = proximal_stochastic_gradient(setup.mu0, cfg, *setup.model, data, setup.reg, truth,
                                              on_iterate);
        out.mu = r.mu;
        out.trace = std::move(r.trace);
        out.iterations = r.iterations;
    } else if (sc.algorithm == "landweber") {
        auto r = projected_landweber(setup.mu0, cfg, *setup.model, data, setup.reg, truth,
                                     on_iterate);
        out.mu = r.mu;
        out.trace = std::move(r.trace);
        out.iterations = r.iterations;
    } else if (sc.algorithm == "llk") {
        auto r = loping_landweber_kaczmarz(setup.mu0, cfg, *setup.model, data, setup.reg, truth,
                                           on_iterate);
        out.mu = r.mu;
        out.trace = std::move(r.trace);
        out.iterations = r.iterations;
    } else {
        PenaltyWeights w = sc.weights;
        w.lambda = sc.optim.lambda;
        MullProblem prob(*setup.model, setup.reg, data, w);
        MullState z0 = prob.init_state(setup.mu0, sc.mull_warm_start);
        MullConfig mcfg = sc.mull;
        mcfg.wall_clock = sc.optim.wall_clock;
        auto r = sc.algorithm == "mull-proj" ? mull_projected_sgd(z0, prob, mcfg, truth, on_iterate)
                                             : mull_proximal_sgd(z0, prob, mcfg, truth, on_iterate);
        out.mu = r.state.mu;
        out.trace = std::move(r.trace);
        out.iterations = r.iterations;
    }

    out.rte_solves =
        counters().rte_solves + counters().rte_adjoint_solves - before.rte_solves -
        before.rte_adjoint_solves;
    out.transport_applies = counters().transport_applies + counters().transport_transpose_applies -
                            before.transport_applies - before.transport_transpose_applies;
    out.wall_s = timer.elapsed();
    return out;
}

} // namespace qpat

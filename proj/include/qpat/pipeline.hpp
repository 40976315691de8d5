#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "qpat/config.hpp"
#include "qpat/experiment.hpp"
#include "qpat/io.hpp"

namespace qpat {

namespace fs = std::filesystem;

/// Writes the simulation stage artifacts: one array per illumination, the
/// noise record, the resolved configuration, and input digests.
inline void write_simulation(const std::string& dir, const RunConfig& cfg, const Scenario& sc,
                             const SimulationResult& sim) {
    fs::create_directories(dir);
    cfg.write(dir + "/config.resolved.cfg");

    std::vector<std::string> files;
    for (std::size_t i = 0; i < sim.data.size(); ++i) {
        const std::string path = dir + "/data_i" + std::to_string(i) + ".qpa";
        write_array(path, ArrayFile::from_matrix(sim.data[i].values));
        files.push_back(path);
    }

    std::ofstream noise(dir + "/noise.txt", std::ios::trunc);
    noise << "level = " << format_double(sim.noise.level) << "\n";
    noise << "seed = " << sim.noise.seed << "\n";
    noise << "sigma = " << format_double(sim.noise.sigma) << "\n";
    for (Eigen::Index i = 0; i < sim.noise.delta.size(); ++i)
        noise << "delta_" << i << " = " << format_double(sim.noise.delta[i]) << "\n";

    std::ofstream meta(dir + "/simulation.txt", std::ios::trunc);
    meta << "illuminations = " << cfg.get("illuminations") << "\n";
    meta << "n_detectors = " << sim.geometry.n_detectors << "\n";
    meta << "n_t = " << sim.geometry.n_t << "\n";
    meta << "dt = " << format_double(sim.geometry.dt) << "\n";
    meta << "radius = " << format_double(sim.geometry.radius) << "\n";
    meta << "data_cells = " << sc.data_grid.cells << "\n";
    meta << "data_n_theta = " << sc.data_grid.n_theta << "\n";

    std::ofstream digests(dir + "/digests.txt", std::ios::trunc);
    for (const auto& f : files)
        digests << fs::path(f).filename().string() << " " << digest_hex(file_digest(f)) << "\n";
    digests << "config.resolved.cfg " << digest_hex(file_digest(dir + "/config.resolved.cfg"))
            << "\n";
}

struct LoadedSimulation {
    std::vector<PressureData> data;
    std::map<std::string, std::string> meta;
    Vec delta;
};

inline std::map<std::string, std::string> read_kv(const std::string& path) {
    std::map<std::string, std::string> kv;
    std::ifstream is(path);
    require(is.good(), "cannot open " + path);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

/// Loads simulated data and re-applies the per-illumination masks implied by
/// the scenario's sides; validates the acoustic geometry against the
/// reconstruction configuration.
inline LoadedSimulation load_simulation(const std::string& dir, const Scenario& sc) {
    LoadedSimulation out;
    require(fs::exists(dir + "/simulation.txt"),
            "reconstruct: no simulation metadata in '" + dir + "'");
    out.meta = read_kv(dir + "/simulation.txt");

    DetectorGeometry geom = make_geometry(sc.radius, sc.n_detectors, sc.effective_dt(), sc.t_max);
    const std::string want_dets = std::to_string(geom.n_detectors);
    const std::string want_nt = std::to_string(geom.n_t);
    if (out.meta["n_detectors"] != want_dets || out.meta["n_t"] != want_nt ||
        std::abs(std::stod(out.meta["dt"]) - geom.dt) > 1e-12) {
        throw std::invalid_argument(
            "reconstruct: acoustic grid mismatch: data has n_detectors=" +
            out.meta["n_detectors"] + ", n_t=" + out.meta["n_t"] + ", dt=" + out.meta["dt"] +
            "; reconstruction expects n_detectors=" + want_dets + ", n_t=" + want_nt +
            ", dt=" + format_double(geom.dt));
    }
    std::string want_sides;
    for (std::size_t i = 0; i < sc.sides.size(); ++i) {
        if (i) want_sides += ',';
        want_sides += side_name(sc.sides[i]);
    }
    require(out.meta["illuminations"] == want_sides,
            "reconstruct: illumination sides mismatch: data has '" + out.meta["illuminations"] +
                "', reconstruction expects '" + want_sides + "'");

    for (std::size_t i = 0; i < sc.sides.size(); ++i) {
        const std::string path = dir + "/data_i" + std::to_string(i) + ".qpa";
        require(fs::exists(path), "reconstruct: missing data file " + path);
        ArrayFile a = read_array(path);
        PressureData v{a.to_matrix(), std::nullopt};
        require(v.values.rows() == geom.n_detectors && v.values.cols() == geom.n_t,
                "reconstruct: data array shape mismatch in " + path);
        std::vector<int> arc = geom.arc(sc.sides[i]);
        out.data.push_back(restrict_data(v, geom, arc, geom.t_max()));
    }

    if (fs::exists(dir + "/noise.txt")) {
        auto kv = read_kv(dir + "/noise.txt");
        out.delta = Vec::Zero(static_cast<Eigen::Index>(sc.sides.size()));
        for (std::size_t i = 0; i < sc.sides.size(); ++i) {
            auto it = kv.find("delta_" + std::to_string(i));
            if (it != kv.end()) out.delta[static_cast<Eigen::Index>(i)] = std::stod(it->second);
        }
    }
    return out;
}

inline void write_reconstruction(const std::string& dir, const RunConfig& cfg, const Scenario& sc,
                                 const ReconSetup& setup, const ReconResult& rec,
                                 const std::vector<std::string>& input_files) {
    fs::create_directories(dir);
    cfg.write(dir + "/config.resolved.cfg");
    write_array(dir + "/mu_a.qpa", ArrayFile::from_vector(rec.mu.mu_a));
    write_array(dir + "/mu_s.qpa", ArrayFile::from_vector(rec.mu.mu_s));
    write_trace_csv(dir + "/trace.csv", rec.trace);
    write_pgm(dir + "/mu_a_final.pgm", field_to_image(rec.mu.mu_a, setup.mesh.cells));

    std::ofstream summary(dir + "/summary.txt", std::ios::trunc);
    summary << "algorithm = " << sc.algorithm << "\n";
    summary << "iterations = " << rec.iterations << "\n";
    summary << "rte_solves = " << rec.rte_solves << "\n";
    summary << "transport_applies = " << rec.transport_applies << "\n";
    summary << "rel_err_mu_a = " << format_double(relative_error(rec.mu.mu_a, setup.phantom.mu.mu_a))
            << "\n";
    summary << "rel_err_mu_s = " << format_double(relative_error(rec.mu.mu_s, setup.phantom.mu.mu_s))
            << "\n";
    if (sc.optim.wall_clock) summary << "wall_s = " << format_double(rec.wall_s) << "\n";

    std::ofstream digests(dir + "/digests.txt", std::ios::trunc);
    for (const auto& f : input_files)
        digests << fs::path(f).filename().string() << " " << digest_hex(file_digest(f)) << "\n";
    for (const char* f : {"mu_a.qpa", "mu_s.qpa", "trace.csv"})
        digests << f << " " << digest_hex(file_digest(dir + "/" + f)) << "\n";
}

struct ReportWarning {
    std::string run;
    std::string message;
};

/// Summary table plus error curves for one or more completed run
/// directories; incomplete runs produce warnings, not failures.
inline std::vector<ReportWarning> write_report(const std::string& out_dir,
                                               const std::vector<std::string>& run_dirs) {
    fs::create_directories(out_dir);
    std::vector<ReportWarning> warnings;

    std::ofstream summary(out_dir + "/summary.csv", std::ios::trunc);
    summary << "run,algorithm,iterations,final_rel_err_mu_a,final_rel_err_mu_s,rte_solves,"
               "applyM_count,total_wall_s,mean_iter_wall_s\n";

    struct RunStats {
        std::string name;
        double mean_iter_wall = 0.0;
        double rte_solves = 0.0;
        bool ok = false;
    };
    std::vector<RunStats> stats;

    for (const auto& dir : run_dirs) {
        RunStats st;
        st.name = fs::path(dir).filename().string();
        if (st.name.empty()) st.name = dir;
        if (!fs::exists(dir + "/trace.csv")) {
            warnings.push_back({dir, "missing trace.csv; skipped"});
            stats.push_back(st);
            continue;
        }
        TraceCsv csv = read_trace_csv(dir + "/trace.csv");
        if (csv.rows.empty()) {
            warnings.push_back({dir, "empty trace; skipped"});
            stats.push_back(st);
            continue;
        }
        auto kv = fs::exists(dir + "/summary.txt") ? read_kv(dir + "/summary.txt")
                                                   : std::map<std::string, std::string>{};
        const int c_err_a = csv.column("rel_err_mu_a");
        const int c_err_s = csv.column("rel_err_mu_s");
        const int c_solves = csv.column("rte_solves");
        const int c_wall = csv.column("wall_s");
        const auto& last = csv.rows.back();

        const double total_wall = c_wall >= 0 ? std::stod(last[c_wall]) : 0.0;
        const long iters = std::stol(last[0]);
        st.mean_iter_wall = iters > 0 ? total_wall / iters : 0.0;
        st.rte_solves = c_solves >= 0 ? std::stod(last[c_solves]) : 0.0;
        st.ok = true;
        stats.push_back(st);

        summary << st.name << ',' << (kv.count("algorithm") ? kv["algorithm"] : "?") << ','
                << iters << ',' << (c_err_a >= 0 ? last[c_err_a] : "nan") << ','
                << (c_err_s >= 0 ? last[c_err_s] : "nan") << ','
                << (c_solves >= 0 ? last[c_solves] : "0") << ','
                << (csv.column("applyM_count") >= 0 ? last[csv.column("applyM_count")] : "0") << ','
                << format_double(total_wall) << ',' << format_double(st.mean_iter_wall) << "\n";

        // error curve image
        if (c_err_a >= 0) {
            std::vector<double> ys;
            for (const auto& row : csv.rows) {
                try {
                    ys.push_back(std::stod(row[c_err_a]));
                } catch (...) {
                    ys.push_back(std::numeric_limits<double>::quiet_NaN());
                }
            }
            plot_curve_pgm(out_dir + "/error_curve_" + st.name + ".pgm", ys);
        }
    }

    // pairwise cost-ratio rows (later runs relative to the first valid one)
    const RunStats* base = nullptr;
    for (const auto& st : stats)
        if (st.ok) {
            base = &st;
            break;
        }
    if (base) {
        std::ofstream ratios(out_dir + "/cost_ratios.csv", std::ios::trunc);
        ratios << "run,baseline,iter_wall_ratio,rte_solve_ratio\n";
        for (const auto& st : stats) {
            if (!st.ok || &st == base) continue;
            const double wr = base->mean_iter_wall > 0.0 ? st.mean_iter_wall / base->mean_iter_wall
                                                         : std::numeric_limits<double>::quiet_NaN();
            const double sr = base->rte_solves > 0.0 ? st.rte_solves / base->rte_solves
                                                     : std::numeric_limits<double>::quiet_NaN();
            ratios << st.name << ',' << base->name << ',' << format_double(wr) << ','
                   << format_double(sr) << "\n";
        }
    }

    if (!warnings.empty()) {
        std::ofstream wf(out_dir + "/warnings.txt", std::ios::trunc);
        for (const auto& w : warnings) wf << w.run << ": " << w.message << "\n";
    }
    return warnings;
}

/// Deterministic end-to-end run: simulate, reconstruct, report, all under
/// one output directory.
inline void run_scenario(const RunConfig& cfg, const std::string& out_dir) {
    Scenario sc = cfg.to_scenario();
    const std::string sim_dir = out_dir + "/sim";
    const std::string rec_dir = out_dir + "/rec";

    SimulationResult sim = simulate_data(sc);
    write_simulation(sim_dir, cfg, sc, sim);

    LoadedSimulation loaded = load_simulation(sim_dir, sc);
    ReconSetup setup = make_recon_setup(sc);
    Scenario rsc = sc;
    if (rsc.optim.delta.size() == 0 && loaded.delta.size() > 0) rsc.optim.delta = loaded.delta;

    IterCallback checkpoints;
    if (sc.checkpoint_every > 0) {
        checkpoints = [&, rec_dir](long k, const ParameterPair& mu) {
            if (k % sc.checkpoint_every == 0) {
                fs::create_directories(rec_dir);
                write_pgm(rec_dir + "/mu_a_ck_" + std::to_string(k) + ".pgm",
                          field_to_image(mu.mu_a, setup.mesh.cells));
            }
        };
    }
    ReconResult rec = reconstruct(rsc, setup, loaded.data, checkpoints);

    std::vector<std::string> inputs;
    for (std::size_t i = 0; i < loaded.data.size(); ++i)
        inputs.push_back(sim_dir + "/data_i" + std::to_string(i) + ".qpa");
    write_reconstruction(rec_dir, cfg, sc, setup, rec, inputs);
    write_report(out_dir + "/report", {rec_dir});
}

} // namespace qpat

// Command-line front end: simulate photoacoustic data, reconstruct the
// optical coefficients, run the verification suites, and summarize runs.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure,
// 3 verification failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <qpat/pipeline.hpp>
#include <qpat/verify.hpp>

namespace {

qpat::RunConfig load_config(const std::string& path, long seed_override) {
    qpat::RunConfig cfg = path.empty() ? qpat::RunConfig{} : qpat::RunConfig::from_file(path);
    if (seed_override >= 0) cfg.override_seed(seed_override);
    return cfg;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, long seed) {
    qpat::RunConfig cfg = load_config(config_path, seed);
    qpat::Scenario sc = cfg.to_scenario();
    qpat::SimulationResult sim = qpat::simulate_data(sc);
    qpat::write_simulation(out_dir, cfg, sc, sim);
    std::printf("simulate: wrote %zu data files to %s\n", sim.data.size(), out_dir.c_str());
    return 0;
}

int cmd_reconstruct(const std::string& config_path, const std::string& data_dir,
                    const std::string& out_dir, long seed, long checkpoint_every) {
    qpat::RunConfig cfg = load_config(config_path, seed);
    if (checkpoint_every >= 0)
        cfg.set("output.checkpoint_every", std::to_string(checkpoint_every));
    qpat::Scenario sc = cfg.to_scenario();

    qpat::LoadedSimulation loaded = qpat::load_simulation(data_dir, sc);
    qpat::ReconSetup setup = qpat::make_recon_setup(sc);
    if (sc.optim.delta.size() == 0 && loaded.delta.size() > 0) sc.optim.delta = loaded.delta;

    qpat::IterCallback checkpoints;
    if (sc.checkpoint_every > 0) {
        std::filesystem::create_directories(out_dir);
        checkpoints = [&sc, &setup, out_dir](long k, const qpat::ParameterPair& mu) {
            if (k % sc.checkpoint_every == 0)
                qpat::write_pgm(out_dir + "/mu_a_ck_" + std::to_string(k) + ".pgm",
                                qpat::field_to_image(mu.mu_a, setup.mesh.cells));
        };
    }
    qpat::ReconResult rec = qpat::reconstruct(sc, setup, loaded.data, checkpoints);

    std::vector<std::string> inputs;
    for (std::size_t i = 0; i < loaded.data.size(); ++i)
        inputs.push_back(data_dir + "/data_i" + std::to_string(i) + ".qpa");
    qpat::write_reconstruction(out_dir, cfg, sc, setup, rec, inputs);
    std::printf("reconstruct: %s, %ld iterations, rel_err_mu_a = %.6f\n", sc.algorithm.c_str(),
                rec.iterations, qpat::relative_error(rec.mu.mu_a, setup.phantom.mu.mu_a));
    return 0;
}

int cmd_verify(const std::string& suite) {
    std::vector<qpat::VerifyCheck> checks = qpat::verify_suite(suite);
    bool all_pass = true;
    for (const auto& c : checks) {
        std::printf("%s %s measured=%.6e tol=%.1e\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                    c.measured, c.tolerance);
        all_pass &= c.pass;
    }
    return all_pass ? 0 : 3;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir) {
    auto warnings = qpat::write_report(out_dir, runs);
    for (const auto& w : warnings)
        std::fprintf(stderr, "warning: %s: %s\n", w.run.c_str(), w.message.c_str());
    std::printf("report: wrote %s/summary.csv (%zu runs, %zu warnings)\n", out_dir.c_str(),
                runs.size(), warnings.size());
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, long seed) {
    qpat::RunConfig cfg = load_config(config_path, seed);
    qpat::run_scenario(cfg, out_dir);
    std::printf("run: artifacts in %s\n", out_dir.c_str());
    return 0;
}

int cmd_write_config(const std::string& path) {
    qpat::RunConfig{}.write(path);
    std::printf("wrote default configuration to %s\n", path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"qpat - quantitative photoacoustic tomography laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, suite = "all";
    std::vector<std::string> runs;
    long seed = -1, checkpoint_every = -1;

    auto* sim = app.add_subcommand("simulate", "simulate multi-illumination pressure data");
    sim->add_option("--config", config_path, "configuration file (defaults when omitted)");
    sim->add_option("--out", out_dir, "output directory");
    sim->add_option("--seed", seed, "override the configured seeds");

    auto* rec = app.add_subcommand("reconstruct", "reconstruct coefficients from simulated data");
    rec->add_option("--config", config_path, "configuration file (defaults when omitted)");
    rec->add_option("--data", data_dir, "directory written by 'simulate'")->required();
    rec->add_option("--out", out_dir, "output directory");
    rec->add_option("--seed", seed, "override the configured seeds");
    rec->add_option("--checkpoint-every", checkpoint_every, "image checkpoint interval");

    auto* ver = app.add_subcommand("verify", "run the invariant suites");
    ver->add_option("--suite", suite, "adjoints|isometry|gradients|dykstra|degeneracy|all");

    auto* rep = app.add_subcommand("report", "summarize one or more run directories");
    rep->add_option("runs", runs, "run directories (reconstruction outputs)")->required();
    rep->add_option("--out", out_dir, "report output directory");

    auto* run = app.add_subcommand("run", "simulate + reconstruct + report in one step");
    run->add_option("--config", config_path, "configuration file (defaults when omitted)");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--seed", seed, "override the configured seeds");

    auto* wcfg = app.add_subcommand("write-config", "write the default configuration file");
    wcfg->add_option("path", config_path, "destination path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) return cmd_simulate(config_path, out_dir, seed);
        if (rec->parsed()) return cmd_reconstruct(config_path, data_dir, out_dir, seed,
                                                  checkpoint_every);
        if (ver->parsed()) return cmd_verify(suite);
        if (rep->parsed()) return cmd_report(runs, out_dir);
        if (run->parsed()) return cmd_run(config_path, out_dir, seed);
        if (wcfg->parsed()) return cmd_write_config(config_path);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error (configuration): %s\n", e.what());
        return 1;
    } catch (const std::runtime_error& e) {
        std::fprintf(stderr, "error (numerical): %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

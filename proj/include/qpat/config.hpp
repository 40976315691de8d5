#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qpat/experiment.hpp"

namespace qpat {

/// Schema-validated flat key-value configuration. Unknown keys are rejected
/// by name; every run writes its fully resolved configuration next to the
/// outputs.
class RunConfig {
  public:
    struct Entry {
        std::string value;
        std::string description;
    };

    RunConfig() { set_defaults(); }

    static RunConfig from_file(const std::string& path) {
        RunConfig cfg;
        std::ifstream is(path);
        require(is.good(), "config: cannot open " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            require(eq != std::string::npos,
                    "config: line " + std::to_string(lineno) + " is not 'key = value'");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = entries_.find(key);
        require(it != entries_.end(), "config: unknown key '" + key + "'");
        it->second.value = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = entries_.find(key);
        require(it != entries_.end(), "config: unknown key '" + key + "'");
        return it->second.value;
    }

    double get_double(const std::string& key) const {
        const std::string& v = get(key);
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            require(pos == v.size(), "");
            return x;
        } catch (...) {
            throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v +
                                        "'");
        }
    }

    long get_long(const std::string& key) const {
        const std::string& v = get(key);
        try {
            std::size_t pos = 0;
            const long x = std::stol(v, &pos);
            require(pos == v.size(), "");
            return x;
        } catch (...) {
            throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v +
                                        "'");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
    }

    /// Serializes the resolved configuration (all keys, with comments).
    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        require(os.good(), "config: cannot write " + path);
        os << "# resolved qpat run configuration\n";
        for (const auto& [key, e] : entries_) {
            os << key << " = " << e.value;
            if (!e.description.empty()) os << "  # " << e.description;
            os << "\n";
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        for (const auto& [key, e] : entries_) os << key << " = " << e.value << "\n";
        return os.str();
    }

    Scenario to_scenario() const {
        Scenario sc;
        sc.sides = parse_sides(get("illuminations"));
        sc.data_grid = {static_cast<int>(get_long("data.cells")),
                        static_cast<int>(get_long("data.n_theta"))};
        sc.recon_grid = {static_cast<int>(get_long("recon.cells")),
                         static_cast<int>(get_long("recon.n_theta"))};
        sc.kernel_g = get_double("kernel.g");
        sc.radius = get_double("acoustic.radius");
        sc.n_detectors = static_cast<int>(get_long("acoustic.detectors"));
        sc.dt = get("acoustic.dt") == "auto" ? -1.0 : get_double("acoustic.dt");
        sc.t_max = get_double("acoustic.t_max");
        sc.quad_data = {static_cast<int>(get_long("acoustic.sim_quad_radial")),
                        static_cast<int>(get_long("acoustic.sim_quad_angular"))};
        sc.quad_recon = {static_cast<int>(get_long("acoustic.quad_radial")),
                         static_cast<int>(get_long("acoustic.quad_angular"))};
        sc.noise_level = get_double("noise.level");
        sc.noise_seed = static_cast<std::uint64_t>(get_long("noise.seed"));
        sc.algorithm = get("algorithm");

        sc.optim.lambda = get_double("optim.lambda");
        sc.optim.step.s0 = get_double("optim.step");
        const std::string rule = get("optim.step_rule");
        require(rule == "constant" || rule == "sqrt-decay",
                "config: optim.step_rule must be 'constant' or 'sqrt-decay'");
        sc.optim.step.kind =
            rule == "constant" ? StepRule::Kind::Constant : StepRule::Kind::SqrtDecay;
        sc.optim.max_iter = get_long("optim.max_iter");
        sc.optim.batch_size = static_cast<int>(get_long("optim.batch"));
        sc.optim.rng_seed = static_cast<std::uint64_t>(get_long("optim.seed"));
        sc.optim.tau = get_double("optim.tau");
        sc.optim.update_mu_s = get_bool("optim.update_mu_s");
        sc.optim.dykstra_max_iter = static_cast<int>(get_long("dykstra.max_iter"));
        sc.optim.dykstra_tol = get_double("dykstra.tol");
        sc.optim.cg_tol = get_double("prox.cg_tol");
        sc.optim.wall_clock = get_bool("trace.wall_clock");

        sc.weights.a1 = get_double("mull.a1");
        sc.weights.a2 = get_double("mull.a2");
        sc.weights.a3 = get_double("mull.a3");
        sc.weights.lambda = sc.optim.lambda;
        sc.mull.max_iter = get_long("mull.max_iter");
        sc.mull.step = get_double("mull.step");
        sc.mull.adaptive_step = get_bool("mull.adaptive");
        sc.mull.rng_seed = sc.optim.rng_seed;
        sc.mull.inner_j1 = static_cast<int>(get_long("mull.inner_j1"));
        sc.mull.dykstra_in_projected = get_bool("mull.dykstra_in_projected");
        sc.mull.dykstra_max_iter = sc.optim.dykstra_max_iter;
        sc.mull.dykstra_tol = sc.optim.dykstra_tol;
        sc.mull.cg_tol = sc.optim.cg_tol;
        sc.mull.wall_clock = sc.optim.wall_clock;
        const std::string init = get("mull.init");
        require(init == "warm" || init == "zero", "config: mull.init must be 'warm' or 'zero'");
        sc.mull_warm_start = init == "warm";

        sc.mu_a_max = get_double("bounds.mu_a_max");
        sc.mu_s_max = get_double("bounds.mu_s_max");
        sc.solver_tol = get_double("solver.tol");
        sc.solver_restart = static_cast<int>(get_long("solver.restart"));
        sc.checkpoint_every = get_long("output.checkpoint_every");
        sc.validate();
        return sc;
    }

    void override_seed(long seed) {
        set("optim.seed", std::to_string(seed));
        set("noise.seed", std::to_string(seed));
    }

    static std::vector<Side> parse_sides(const std::string& text) {
        std::vector<Side> out;
        std::stringstream ss(text);
        std::string token;
        while (std::getline(ss, token, ',')) {
            if (token == "top") out.push_back(Side::Top);
            else if (token == "right") out.push_back(Side::Right);
            else if (token == "bottom") out.push_back(Side::Bottom);
            else if (token == "left") out.push_back(Side::Left);
            else throw std::invalid_argument("config: unknown illumination side '" + token + "'");
        }
        return out;
    }

  private:
    void set_defaults() {
        auto add = [&](const char* key, const char* value, const char* desc) {
            entries_[key] = Entry{value, desc};
        };
        add("illuminations", "top,right,bottom,left", "subset of: top,right,bottom,left");
        add("data.cells", "50", "simulation grid: cells per side (h = 2/cells)");
        add("data.n_theta", "32", "simulation grid: angular directions");
        add("recon.cells", "40", "reconstruction grid: cells per side");
        add("recon.n_theta", "16", "reconstruction grid: angular directions");
        add("kernel.g", "0.5", "Henyey-Greenstein anisotropy factor");
        add("acoustic.radius", "1.8", "detector circle radius (cm)");
        add("acoustic.detectors", "64", "detector count on the full circle");
        add("acoustic.dt", "auto", "time step; auto = recon mesh h / 2");
        add("acoustic.t_max", "4.0", "recording horizon (cm, sound speed 1)");
        add("acoustic.quad_radial", "0", "wave quadrature radial nodes, reconstruction; 0 = mesh-adaptive");
        add("acoustic.quad_angular", "0", "wave quadrature ring nodes, reconstruction; 0 = mesh-adaptive");
        add("acoustic.sim_quad_radial", "0", "wave quadrature radial nodes, simulation; 0 = mesh-adaptive");
        add("acoustic.sim_quad_angular", "0", "wave quadrature ring nodes, simulation; 0 = mesh-adaptive");
        add("noise.level", "0.0", "noise std as a fraction of the data peak");
        add("noise.seed", "7", "noise RNG seed");
        add("algorithm", "pg", "pg | prox-sgd | landweber | llk | mull-proj | mull-prox");
        add("optim.lambda", "2e-8", "regularization weight");
        add("optim.step", "0.5", "step size s_k");
        add("optim.step_rule", "constant", "constant | sqrt-decay");
        add("optim.max_iter", "10", "iterations (standard formulation)");
        add("optim.batch", "1", "mini-batch size for prox-sgd");
        add("optim.seed", "42", "optimizer RNG seed");
        add("optim.tau", "1.5", "discrepancy factor");
        add("optim.update_mu_s", "false", "update the scattering coefficient too");
        add("dykstra.max_iter", "50", "Dykstra iterations");
        add("dykstra.tol", "1e-8", "Dykstra relative-change tolerance");
        add("prox.cg_tol", "1e-10", "CG tolerance inside the quadratic prox");
        add("mull.a1", "1.0", "penalty weight of the transport residual");
        add("mull.a2", "1.0", "penalty weight of the heating residual");
        add("mull.a3", "1.0", "penalty weight of the data residual");
        add("mull.max_iter", "1000", "iterations (multilinear formulation)");
        add("mull.step", "0.5", "constant step / line-search fallback");
        add("mull.adaptive", "true", "exact line search steps");
        add("mull.inner_j1", "40", "repeats of the transport-residual update");
        add("mull.dykstra_in_projected", "false", "smooth after J1/J2 blocks in mull-proj too");
        add("mull.init", "warm", "warm (transport solves at mu0) | zero");
        add("bounds.mu_a_max", "3.0", "upper bound for mu_a (1/cm)");
        add("bounds.mu_s_max", "6.0", "upper bound for mu_s (1/cm)");
        add("solver.tol", "1e-8", "transport solver relative residual");
        add("solver.restart", "60", "GMRES restart length");
        add("trace.wall_clock", "false", "record wall times (breaks bit-reproducibility)");
        add("output.checkpoint_every", "0", "image checkpoint interval; 0 = final only");
    }

    std::map<std::string, Entry> entries_;
};

} // namespace qpat

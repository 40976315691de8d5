#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <qpat/io.hpp>

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("qpat_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(QPAT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

void write_mini_config(const std::string& path, const std::string& extra = "") {
    std::ofstream os(path);
    os << "illuminations = top,left\n"
          "data.cells = 12\n"
          "data.n_theta = 8\n"
          "recon.cells = 8\n"
          "recon.n_theta = 8\n"
          "acoustic.detectors = 16\n"
          "acoustic.sim_quad_radial = 10\n"
          "acoustic.sim_quad_angular = 48\n"
          "acoustic.quad_radial = 8\n"
          "acoustic.quad_angular = 48\n"
          "optim.max_iter = 2\n"
          "mull.max_iter = 40\n"
       << extra;
}

} // namespace

TEST_CASE("usage errors exit with code 1") {
    CHECK(run_cli("") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("reconstruct") == 1); // missing required --data
}

TEST_CASE("full pipeline: simulate, reconstruct, report") {
    TempDir tmp;
    write_mini_config(tmp.file("c.cfg"));

    REQUIRE(run_cli("simulate --config " + tmp.file("c.cfg") + " --out " + tmp.file("sim")) == 0);
    CHECK(fs::exists(tmp.file("sim/data_i0.qpa")));
    CHECK(fs::exists(tmp.file("sim/data_i1.qpa")));
    CHECK(fs::exists(tmp.file("sim/config.resolved.cfg")));
    CHECK(fs::exists(tmp.file("sim/digests.txt")));
    CHECK(fs::exists(tmp.file("sim/noise.txt")));

    REQUIRE(run_cli("reconstruct --config " + tmp.file("c.cfg") + " --data " + tmp.file("sim") +
                    " --out " + tmp.file("rec")) == 0);
    CHECK(fs::exists(tmp.file("rec/mu_a.qpa")));
    CHECK(fs::exists(tmp.file("rec/mu_s.qpa")));
    CHECK(fs::exists(tmp.file("rec/trace.csv")));
    CHECK(fs::exists(tmp.file("rec/mu_a_final.pgm")));

    REQUIRE(run_cli("report " + tmp.file("rec") + " --out " + tmp.file("rep")) == 0);
    CHECK(fs::exists(tmp.file("rep/summary.csv")));
    CHECK(fs::exists(tmp.file("rep/error_curve_rec.pgm")));

    SUBCASE("two runs produce a comparative cost-ratio table") {
        write_mini_config(tmp.file("m.cfg"), "algorithm = mull-prox\n");
        REQUIRE(run_cli("reconstruct --config " + tmp.file("m.cfg") + " --data " + tmp.file("sim") +
                        " --out " + tmp.file("rec_m")) == 0);
        REQUIRE(run_cli("report " + tmp.file("rec") + " " + tmp.file("rec_m") + " --out " +
                        tmp.file("rep2")) == 0);
        CHECK(fs::exists(tmp.file("rep2/cost_ratios.csv")));
    }

    SUBCASE("rerun reproduces identical data files") {
        REQUIRE(run_cli("simulate --config " + tmp.file("c.cfg") + " --out " + tmp.file("sim2")) ==
                0);
        CHECK(qpat::file_digest(tmp.file("sim/data_i0.qpa")) ==
              qpat::file_digest(tmp.file("sim2/data_i0.qpa")));
        REQUIRE(run_cli("reconstruct --config " + tmp.file("c.cfg") + " --data " +
                        tmp.file("sim2") + " --out " + tmp.file("rec2")) == 0);
        CHECK(qpat::file_digest(tmp.file("rec/mu_a.qpa")) ==
              qpat::file_digest(tmp.file("rec2/mu_a.qpa")));
        CHECK(qpat::file_digest(tmp.file("rec/trace.csv")) ==
              qpat::file_digest(tmp.file("rec2/trace.csv")));
    }

    SUBCASE("checkpoint images") {
        REQUIRE(run_cli("reconstruct --config " + tmp.file("c.cfg") + " --data " + tmp.file("sim") +
                        " --out " + tmp.file("rec_ck") + " --checkpoint-every 1") == 0);
        CHECK(fs::exists(tmp.file("rec_ck/mu_a_ck_1.pgm")));
        CHECK(fs::exists(tmp.file("rec_ck/mu_a_ck_2.pgm")));
    }
}

TEST_CASE("configuration errors exit with code 1") {
    TempDir tmp;

    SUBCASE("unknown key") {
        write_mini_config(tmp.file("bad.cfg"), "no.such.key = 1\n");
        CHECK(run_cli("simulate --config " + tmp.file("bad.cfg") + " --out " + tmp.file("x")) == 1);
    }

    SUBCASE("inverse-crime guard") {
        std::ofstream os(tmp.file("same.cfg"));
        os << "data.cells = 8\nrecon.cells = 8\n";
        os.close();
        CHECK(run_cli("simulate --config " + tmp.file("same.cfg") + " --out " + tmp.file("x")) ==
              1);
    }

    SUBCASE("missing data directory") {
        write_mini_config(tmp.file("c.cfg"));
        CHECK(run_cli("reconstruct --config " + tmp.file("c.cfg") + " --data " +
                      tmp.file("nowhere") + " --out " + tmp.file("x")) == 1);
    }

    SUBCASE("acoustic grid mismatch is reported") {
        write_mini_config(tmp.file("c.cfg"));
        REQUIRE(run_cli("simulate --config " + tmp.file("c.cfg") + " --out " + tmp.file("sim")) ==
                0);
        write_mini_config(tmp.file("c2.cfg"), "acoustic.detectors = 32\n");
        CHECK(run_cli("reconstruct --config " + tmp.file("c2.cfg") + " --data " + tmp.file("sim") +
                      " --out " + tmp.file("x")) == 1);
    }
}

TEST_CASE("write-config emits a parseable default configuration") {
    TempDir tmp;
    REQUIRE(run_cli("write-config " + tmp.file("default.cfg")) == 0);
    // the emitted file parses; shrink the grids (later lines override) so the
    // smoke run stays fast
    std::ifstream in(tmp.file("default.cfg"));
    std::ofstream out(tmp.file("merged.cfg"));
    out << in.rdbuf();
    out << "\ndata.cells = 10\ndata.n_theta = 8\nrecon.cells = 6\nrecon.n_theta = 8\n"
           "acoustic.detectors = 8\nacoustic.sim_quad_radial = 8\nacoustic.sim_quad_angular = 32\n";
    out.close();
    CHECK(run_cli("simulate --config " + tmp.file("merged.cfg") + " --out " + tmp.file("simX")) ==
          0);
}

TEST_CASE("verify subcommand") {
    CHECK(run_cli("verify --suite adjoints") == 0);
    CHECK(run_cli("verify --suite nonsense") == 1);
}

TEST_CASE("run subcommand produces the full artifact tree") {
    TempDir tmp;
    write_mini_config(tmp.file("c.cfg"));
    REQUIRE(run_cli("run --config " + tmp.file("c.cfg") + " --out " + tmp.file("all")) == 0);
    CHECK(fs::exists(tmp.file("all/sim/data_i0.qpa")));
    CHECK(fs::exists(tmp.file("all/rec/mu_a.qpa")));
    CHECK(fs::exists(tmp.file("all/rec/trace.csv")));
    CHECK(fs::exists(tmp.file("all/report/summary.csv")));
}

#pragma once

#include <chrono>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "qpat/core.hpp"
#include "qpat/fields.hpp"

namespace qpat {

/// One per-iteration record; the CSV sink writes these columns verbatim.
struct TraceRow {
    long iter = 0;
    std::string picked_i = "-"; // drawn illumination(s), ';'-joined for batches
    int picked_l = -1;          // drawn functional (MULL only)
    double objective = std::numeric_limits<double>::quiet_NaN();
    double fidelity = std::numeric_limits<double>::quiet_NaN();
    double penalty = std::numeric_limits<double>::quiet_NaN();
    double rel_err_mu_a = std::numeric_limits<double>::quiet_NaN();
    double rel_err_mu_s = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t rte_solves = 0;  // cumulative
    std::uint64_t applym = 0;      // cumulative transport applications
    double wall_s = 0.0;
    int omega = 1; // loping flag
};

struct IterateTrace {
    std::vector<TraceRow> rows;

    void push(TraceRow row) {
        if (!rows.empty()) require(row.iter >= rows.back().iter, "IterateTrace: iteration index must be monotone");
        rows.push_back(std::move(row));
    }
};

using IterCallback = std::function<void(long, const ParameterPair&)>;

/// Wall-clock helper; disabled timers always report zero so that seeded runs
/// produce bit-identical traces.
class WallTimer {
  public:
    explicit WallTimer(bool enabled) : enabled_(enabled) { reset(); }
    void reset() { start_ = std::chrono::steady_clock::now(); }
    double elapsed() const {
        if (!enabled_) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    bool enabled_;
    std::chrono::steady_clock::time_point start_;
};

inline void fill_errors(TraceRow& row, const ParameterPair& mu, const ParameterPair* truth) {
    if (!truth) return;
    row.rel_err_mu_a = relative_error(mu.mu_a, truth->mu_a);
    row.rel_err_mu_s = relative_error(mu.mu_s, truth->mu_s);
}

} // namespace qpat

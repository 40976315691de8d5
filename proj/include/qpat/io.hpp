#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qpat/core.hpp"
#include "qpat/trace.hpp"

namespace qpat {

/// n-dimensional real array container with a bit-exact binary format:
/// magic "QPATARR\0", u32 LE version, u32 ndim, ndim x u64 dims, f64 LE
/// payload, row-major (last index fastest).
struct ArrayFile {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;

    std::size_t size() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    static ArrayFile from_vector(const Vec& v) {
        ArrayFile a;
        a.dims = {static_cast<std::uint64_t>(v.size())};
        a.data.assign(v.data(), v.data() + v.size());
        return a;
    }

    /// 2-D array from a matrix, row-major (column index fastest).
    static ArrayFile from_matrix(const Mat& m) {
        ArrayFile a;
        a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
        a.data.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) a.data.push_back(m(r, c));
        return a;
    }

    Vec to_vector() const {
        require(dims.size() == 1, "ArrayFile: expected a 1-D array");
        return Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
    }

    Mat to_matrix() const {
        require(dims.size() == 2, "ArrayFile: expected a 2-D array");
        Mat m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[k++];
        return m;
    }
};

namespace detail_io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace detail_io

inline void write_array(const std::string& path, const ArrayFile& a) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), "write_array: cannot open " + path);
    os.write("QPATARR\0", 8);
    detail_io::put_u32(os, 1u);
    detail_io::put_u32(os, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) detail_io::put_u64(os, d);
    static_assert(sizeof(double) == 8);
    // IEEE-754 doubles, little-endian byte order
    for (double x : a.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        detail_io::put_u64(os, bits);
    }
    require(os.good(), "write_array: write failed for " + path);
}

inline ArrayFile read_array(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "read_array: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::memcmp(magic, "QPATARR\0", 8) == 0,
            "read_array: bad magic in " + path);
    const std::uint32_t version = detail_io::get_u32(is);
    require(version == 1, "read_array: unsupported version in " + path);
    const std::uint32_t ndim = detail_io::get_u32(is);
    require(ndim >= 1 && ndim <= 8, "read_array: implausible rank in " + path);
    ArrayFile a;
    a.dims.resize(ndim);
    for (auto& d : a.dims) d = detail_io::get_u64(is);
    a.data.resize(a.size());
    for (auto& x : a.data) {
        const std::uint64_t bits = detail_io::get_u64(is);
        std::memcpy(&x, &bits, 8);
    }
    require(is.good(), "read_array: truncated file " + path);
    return a;
}

/// 8-bit grayscale PGM scaled to [min, max]; the scale is recorded in a
/// sidecar text file so values stay recoverable.
inline void write_pgm(const std::string& path, const Mat& image) {
    double lo = image.minCoeff(), hi = image.maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), "write_pgm: cannot open " + path);
    os << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
    for (Eigen::Index r = 0; r < image.rows(); ++r)
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
            const double t = (image(r, c) - lo) / span;
            os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
        }
    std::ofstream meta(path + ".meta.txt", std::ios::trunc);
    meta << "min = " << std::setprecision(17) << lo << "\n";
    meta << "max = " << std::setprecision(17) << hi << "\n";
}

/// Renders a nodal field as an image (row 0 = top of the domain).
inline Mat field_to_image(const Vec& field, int cells) {
    const int n = cells + 1;
    Mat img(n, n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) img(n - 1 - iy, ix) = field[iy * n + ix];
    return img;
}

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_trace_csv(const std::string& path, const IterateTrace& trace) {
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), "write_trace_csv: cannot open " + path);
    os << "iter,picked_i,picked_l,objective,fidelity,penalty,rel_err_mu_a,rel_err_mu_s,"
          "rte_solves,applyM_count,wall_s\n";
    for (const auto& r : trace.rows) {
        os << r.iter << ',' << r.picked_i << ',' << r.picked_l << ',' << format_double(r.objective)
           << ',' << format_double(r.fidelity) << ',' << format_double(r.penalty) << ','
           << format_double(r.rel_err_mu_a) << ',' << format_double(r.rel_err_mu_s) << ','
           << r.rte_solves << ',' << r.applym << ',' << format_double(r.wall_s) << '\n';
    }
}

/// Minimal CSV reader for the trace schema (used by the report command).
struct TraceCsv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline TraceCsv read_trace_csv(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), "read_trace_csv: cannot open " + path);
    TraceCsv csv;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (first) {
            csv.header = std::move(cells);
            first = false;
        } else {
            csv.rows.push_back(std::move(cells));
        }
    }
    return csv;
}

inline std::uint64_t file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "file_digest: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Simple line plot (polyline over a log-ish y range) rendered to PGM; keeps
/// the report command dependency-free.
inline void plot_curve_pgm(const std::string& path, const std::vector<double>& ys,
                           int width = 640, int height = 400) {
    Mat img = Mat::Constant(height, width, 255.0);
    std::vector<double> clean;
    for (double y : ys)
        if (std::isfinite(y)) clean.push_back(y);
    if (clean.size() >= 2) {
        double lo = clean[0], hi = clean[0];
        for (double y : clean) {
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
        if (hi <= lo) hi = lo + 1.0;
        auto ypix = [&](double y) {
            const double t = (y - lo) / (hi - lo);
            return std::clamp(static_cast<int>(std::lround((height - 9) * (1.0 - t))) + 4, 0,
                              height - 1);
        };
        const int n = static_cast<int>(clean.size());
        for (int k = 0; k + 1 < n; ++k) {
            const int x0 = 4 + (width - 9) * k / (n - 1);
            const int x1 = 4 + (width - 9) * (k + 1) / (n - 1);
            const int y0 = ypix(clean[k]);
            const int y1 = ypix(clean[k + 1]);
            const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
            for (int s = 0; s <= steps; ++s) {
                const int x = x0 + (x1 - x0) * s / steps;
                const int y = y0 + (y1 - y0) * s / steps;
                img(y, x) = 0.0;
            }
        }
    }
    write_pgm(path, img);
}

} // namespace qpat

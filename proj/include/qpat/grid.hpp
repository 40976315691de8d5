#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "qpat/core.hpp"

namespace qpat {

enum class Side : int { Top = 0, Right = 1, Bottom = 2, Left = 3 };

inline const char* side_name(Side s) {
    switch (s) {
        case Side::Top: return "top";
        case Side::Right: return "right";
        case Side::Bottom: return "bottom";
        case Side::Left: return "left";
    }
    return "?";
}

inline Vec2 outward_normal(Side s) {
    switch (s) {
        case Side::Top: return {0.0, 1.0};
        case Side::Right: return {1.0, 0.0};
        case Side::Bottom: return {0.0, -1.0};
        case Side::Left: return {-1.0, 0.0};
    }
    return {0.0, 0.0};
}

/// A boundary edge of the square, oriented along the boundary; `normal` is the
/// outward unit normal of the side the edge lies on.
struct BoundaryEdge {
    int a = 0;
    int b = 0;
    Side side = Side::Bottom;
    Vec2 normal{0.0, 0.0};
    double length = 0.0;
};

/// Uniform triangulation of Omega = [-1,1]^2 with mesh size h = 2/cells.
/// Nodes are ordered y-major (row by row from y=-1), x-minor within a row.
struct SpatialMesh {
    double h = 0.0;
    int cells = 0; // cells per side, h = 2/cells
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> boundary_nodes;
    std::vector<Vec2> boundary_node_normals; // bisector normal per boundary node
    std::vector<BoundaryEdge> boundary_edges;
    std::vector<int> node_sides;        // bitmask of Side per node (0 = interior)
    std::vector<int> boundary_index;    // node -> position in boundary_nodes, -1 if interior

    int nodes_per_side() const { return cells + 1; }
    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_boundary() const { return static_cast<int>(boundary_nodes.size()); }

    int node_index(int ix, int iy) const { return iy * (cells + 1) + ix; }

    bool on_side(int node, Side s) const {
        return (node_sides[node] >> static_cast<int>(s)) & 1;
    }

    double triangle_area() const { return 0.5 * h * h; }

    /// Gradient of the P1 hat function of local vertex `v` on triangle `t`
    /// (constant on the triangle).
    Vec2 hat_gradient(int t, int v) const {
        const auto& tri = triangles[t];
        const Vec2& p1 = nodes[tri[(v + 1) % 3]];
        const Vec2& p2 = nodes[tri[(v + 2) % 3]];
        const double inv2a = 1.0 / (2.0 * triangle_area());
        return {(p1.y() - p2.y()) * inv2a, (p2.x() - p1.x()) * inv2a};
    }

    /// P1 interpolation stencil of an arbitrary point; returns false when the
    /// point lies outside Omega.
    bool interpolate(const Vec2& p, std::array<int, 3>& idx, std::array<double, 3>& w) const {
        if (p.x() < -1.0 || p.x() > 1.0 || p.y() < -1.0 || p.y() > 1.0) return false;
        const double gx = (p.x() + 1.0) / h;
        const double gy = (p.y() + 1.0) / h;
        int cx = static_cast<int>(gx);
        int cy = static_cast<int>(gy);
        if (cx >= cells) cx = cells - 1;
        if (cy >= cells) cy = cells - 1;
        const double u = gx - cx;
        const double v = gy - cy;
        const int a = node_index(cx, cy);
        const int b = node_index(cx + 1, cy);
        const int c = node_index(cx, cy + 1);
        const int d = node_index(cx + 1, cy + 1);
        if (v <= u) { // lower triangle (a,b,d)
            idx = {a, b, d};
            w = {1.0 - u, u - v, v};
        } else { // upper triangle (a,d,c)
            idx = {a, d, c};
            w = {1.0 - v, u, v - u};
        }
        return true;
    }

    /// Interpolation stencil with the hat-function gradients of the
    /// containing triangle (piecewise constant).
    bool interpolate_with_gradient(const Vec2& p, std::array<int, 3>& idx, std::array<double, 3>& w,
                                   std::array<double, 3>& gx, std::array<double, 3>& gy) const {
        if (!interpolate(p, idx, w)) return false;
        const double gpx = (p.x() + 1.0) / h;
        const double gpy = (p.y() + 1.0) / h;
        int cx = static_cast<int>(gpx);
        int cy = static_cast<int>(gpy);
        if (cx >= cells) cx = cells - 1;
        if (cy >= cells) cy = cells - 1;
        const double inv = 1.0 / h;
        if (gpy - cy <= gpx - cx) { // lower triangle (a,b,d)
            gx = {-inv, inv, 0.0};
            gy = {0.0, -inv, inv};
        } else { // upper triangle (a,d,c)
            gx = {0.0, inv, -inv};
            gy = {-inv, 0.0, inv};
        }
        return true;
    }
};

/// Equispaced directions on the unit circle with uniform quadrature weight.
struct AngularGrid {
    int n_theta = 0;
    std::vector<Vec2> directions;
    double weight = 0.0; // 2*pi / n_theta

    double phi(int j) const { return two_pi * j / n_theta; }

    /// Index of the angular node closest to direction `d`.
    int nearest(const Vec2& d) const {
        const double a = std::atan2(d.y(), d.x());
        const double t = a / two_pi * n_theta;
        int j = static_cast<int>(std::lround(t));
        j %= n_theta;
        if (j < 0) j += n_theta;
        return j;
    }
};

/// Partition of (boundary node, direction) pairs by the sign of nu . theta,
/// using the bisector normal at corners.
struct BoundaryClassification {
    // indexed [boundary node position][direction]; true = inflow (nu.theta <= 0)
    std::vector<std::vector<bool>> inflow;

    bool is_inflow(int boundary_pos, int dir) const { return inflow[boundary_pos][dir]; }
    bool is_outflow(int boundary_pos, int dir) const { return !inflow[boundary_pos][dir]; }
};

inline SpatialMesh build_mesh_cells(int cells) {
    require(cells >= 1, "build_mesh: cell count must be a positive integer");
    SpatialMesh m;
    m.cells = cells;
    m.h = 2.0 / cells;
    const int n = cells + 1;
    m.nodes.reserve(static_cast<std::size_t>(n) * n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            m.nodes.push_back(Vec2{-1.0 + ix * m.h, -1.0 + iy * m.h});

    m.triangles.reserve(2u * cells * cells);
    for (int cy = 0; cy < cells; ++cy) {
        for (int cx = 0; cx < cells; ++cx) {
            const int a = m.node_index(cx, cy);
            const int b = m.node_index(cx + 1, cy);
            const int c = m.node_index(cx, cy + 1);
            const int d = m.node_index(cx + 1, cy + 1);
            m.triangles.push_back({a, b, d});
            m.triangles.push_back({a, d, c});
        }
    }

    m.node_sides.assign(m.nodes.size(), 0);
    for (int ix = 0; ix < n; ++ix) {
        m.node_sides[m.node_index(ix, 0)] |= 1 << static_cast<int>(Side::Bottom);
        m.node_sides[m.node_index(ix, cells)] |= 1 << static_cast<int>(Side::Top);
    }
    for (int iy = 0; iy < n; ++iy) {
        m.node_sides[m.node_index(0, iy)] |= 1 << static_cast<int>(Side::Left);
        m.node_sides[m.node_index(cells, iy)] |= 1 << static_cast<int>(Side::Right);
    }

    m.boundary_index.assign(m.nodes.size(), -1);
    for (int i = 0; i < m.n_nodes(); ++i) {
        if (m.node_sides[i] != 0) {
            m.boundary_index[i] = static_cast<int>(m.boundary_nodes.size());
            m.boundary_nodes.push_back(i);
            Vec2 nu{0.0, 0.0};
            for (int s = 0; s < 4; ++s)
                if ((m.node_sides[i] >> s) & 1) nu += outward_normal(static_cast<Side>(s));
            m.boundary_node_normals.push_back(nu.normalized());
        }
    }

    auto push_edges = [&](Side side) {
        const Vec2 nu = outward_normal(side);
        for (int k = 0; k < cells; ++k) {
            BoundaryEdge e;
            e.side = side;
            e.normal = nu;
            e.length = m.h;
            switch (side) {
                case Side::Bottom: e.a = m.node_index(k, 0); e.b = m.node_index(k + 1, 0); break;
                case Side::Top: e.a = m.node_index(k, cells); e.b = m.node_index(k + 1, cells); break;
                case Side::Left: e.a = m.node_index(0, k); e.b = m.node_index(0, k + 1); break;
                case Side::Right: e.a = m.node_index(cells, k); e.b = m.node_index(cells, k + 1); break;
            }
            m.boundary_edges.push_back(e);
        }
    };
    push_edges(Side::Bottom);
    push_edges(Side::Right);
    push_edges(Side::Top);
    push_edges(Side::Left);
    return m;
}

/// Builds the uniform mesh with mesh size h; 2/h must be a positive integer.
inline SpatialMesh build_mesh(double h) {
    require(h > 0.0, "build_mesh: h must be positive");
    const double cells_real = 2.0 / h;
    const int cells = static_cast<int>(std::lround(cells_real));
    require(std::abs(cells_real - cells) < 1e-9 && cells >= 1,
            "build_mesh: 2/h must be a positive integer, got h=" + std::to_string(h));
    return build_mesh_cells(cells);
}

inline AngularGrid build_angles(int n_theta) {
    require(n_theta >= 4, "build_angles: n_theta must be at least 4");
    AngularGrid g;
    g.n_theta = n_theta;
    g.weight = two_pi / n_theta;
    g.directions.reserve(n_theta);
    for (int j = 0; j < n_theta; ++j) {
        const double phi = two_pi * j / n_theta;
        double c = std::cos(phi);
        double s = std::sin(phi);
        // snap cardinal directions so tangency (nu.theta = 0) is exact
        if (std::abs(c) < 1e-14) { c = 0.0; s = s > 0.0 ? 1.0 : -1.0; }
        if (std::abs(s) < 1e-14) { s = 0.0; c = c > 0.0 ? 1.0 : -1.0; }
        g.directions.push_back(Vec2{c, s});
    }
    return g;
}

inline BoundaryClassification classify_boundary(const SpatialMesh& mesh, const AngularGrid& angles) {
    BoundaryClassification c;
    c.inflow.resize(mesh.boundary_nodes.size());
    for (std::size_t p = 0; p < mesh.boundary_nodes.size(); ++p) {
        const Vec2& nu = mesh.boundary_node_normals[p];
        c.inflow[p].resize(angles.n_theta);
        for (int j = 0; j < angles.n_theta; ++j)
            c.inflow[p][j] = nu.dot(angles.directions[j]) <= 0.0;
    }
    return c;
}

} // namespace qpat

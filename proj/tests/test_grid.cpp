#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <qpat/grid.hpp>

using namespace qpat;

TEST_CASE("uniform mesh counts and area") {
    auto m = build_mesh(1.0);
    CHECK(m.n_nodes() == 9);
    CHECK(m.triangles.size() == 8);

    auto fine = build_mesh(2.0 / 80.0);
    CHECK(fine.n_nodes() == 81 * 81);
    CHECK(fine.triangles.size() == 2 * 80 * 80);

    for (int cells : {1, 2, 5, 8}) {
        auto mesh = build_mesh_cells(cells);
        double area = 0.0;
        for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
            const auto& tri = mesh.triangles[t];
            const Vec2 u = mesh.nodes[tri[1]] - mesh.nodes[tri[0]];
            const Vec2 v = mesh.nodes[tri[2]] - mesh.nodes[tri[0]];
            const double signed_area = 0.5 * (u.x() * v.y() - u.y() * v.x());
            CHECK(signed_area > 0.0); // positively oriented
            area += signed_area;
        }
        CHECK(area == doctest::Approx(4.0).epsilon(1e-13));
    }
}

TEST_CASE("invalid mesh size rejected") {
    CHECK_THROWS_AS(build_mesh(0.3), std::invalid_argument);
    CHECK_THROWS_AS(build_mesh(-1.0), std::invalid_argument);
    CHECK_THROWS_AS(build_mesh(5.0), std::invalid_argument);
}

TEST_CASE("node ordering is y-major, x-minor") {
    auto m = build_mesh_cells(4);
    CHECK(m.nodes[0].x() == doctest::Approx(-1.0));
    CHECK(m.nodes[0].y() == doctest::Approx(-1.0));
    CHECK(m.nodes[1].x() == doctest::Approx(-1.0 + m.h));
    CHECK(m.nodes[1].y() == doctest::Approx(-1.0));
    CHECK(m.nodes[5].y() == doctest::Approx(-1.0 + m.h));
}

TEST_CASE("refinement quadruples triangles, keeps area") {
    auto coarse = build_mesh_cells(4);
    auto fine = build_mesh_cells(8);
    CHECK(fine.triangles.size() == 4 * coarse.triangles.size());
}

TEST_CASE("boundary structure") {
    auto m = build_mesh_cells(4);
    CHECK(m.n_boundary() == 4 * 4); // 4n boundary nodes on an n-cell side square
    for (const auto& e : m.boundary_edges) CHECK(e.normal.norm() == doctest::Approx(1.0));

    // corners belong to both adjacent sides
    const int corner = m.node_index(0, 0);
    CHECK(m.on_side(corner, Side::Bottom));
    CHECK(m.on_side(corner, Side::Left));
    CHECK(!m.on_side(corner, Side::Top));
}

TEST_CASE("angular grid") {
    CHECK_THROWS_AS(build_angles(3), std::invalid_argument);

    auto a4 = build_angles(4);
    CHECK(a4.directions[0].x() == 1.0);
    CHECK(a4.directions[0].y() == 0.0);
    CHECK(a4.directions[1].x() == 0.0);
    CHECK(a4.directions[1].y() == 1.0);
    CHECK(a4.directions[2].x() == -1.0);
    CHECK(a4.directions[3].y() == -1.0);

    for (int n : {4, 7, 48, 64}) {
        auto g = build_angles(n);
        CHECK(g.weight * n == doctest::Approx(two_pi));
        Vec2 sum{0.0, 0.0};
        for (const auto& d : g.directions) {
            CHECK(d.norm() == doctest::Approx(1.0));
            sum += d;
        }
        CHECK(sum.norm() < 1e-12);
    }

    auto g64 = build_angles(64);
    CHECK(g64.weight == doctest::Approx(two_pi / 64));
    CHECK(g64.nearest(Vec2{0.0, -1.0}) == 48);
}

TEST_CASE("boundary classification by sign of nu.theta") {
    auto m = build_mesh_cells(4);
    auto a = build_angles(4);
    auto c = classify_boundary(m, a);

    // a node in the middle of the left edge, nu = (-1,0)
    const int left_mid = m.node_index(0, 2);
    const int pos = m.boundary_index[left_mid];
    REQUIRE(pos >= 0);
    CHECK(c.is_inflow(pos, 0));   // theta=(1,0): nu.theta = -1
    CHECK(c.is_outflow(pos, 2));  // theta=(-1,0): nu.theta = 1
    CHECK(c.is_inflow(pos, 1));   // theta=(0,1) tangent: nu.theta = 0 -> inflow
    CHECK(c.is_inflow(pos, 3));

    // partition: every pair is exactly one of the two
    for (int p = 0; p < m.n_boundary(); ++p)
        for (int j = 0; j < a.n_theta; ++j)
            CHECK(c.is_inflow(p, j) != c.is_outflow(p, j));
}

TEST_CASE("P1 interpolation reproduces linear functions") {
    auto m = build_mesh_cells(5);
    auto lin = [](const Vec2& p) { return 0.7 - 1.3 * p.x() + 2.1 * p.y(); };
    Vec nodal(m.n_nodes());
    for (int i = 0; i < m.n_nodes(); ++i) nodal[i] = lin(m.nodes[i]);

    Rng rng(7);
    for (int k = 0; k < 200; ++k) {
        Vec2 p{2.0 * rng.next_unit() - 1.0, 2.0 * rng.next_unit() - 1.0};
        std::array<int, 3> idx;
        std::array<double, 3> w;
        REQUIRE(m.interpolate(p, idx, w));
        double v = 0.0;
        for (int i = 0; i < 3; ++i) v += w[i] * nodal[idx[i]];
        CHECK(v == doctest::Approx(lin(p)).epsilon(1e-12));
    }
    std::array<int, 3> idx;
    std::array<double, 3> w;
    CHECK(!m.interpolate(Vec2{1.5, 0.0}, idx, w));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <qpat/scattering.hpp>

using namespace qpat;

TEST_CASE("Henyey-Greenstein point values") {
    const Vec2 e1{1.0, 0.0};
    const Vec2 e2{0.0, 1.0};

    CHECK(hg_value(e1, e2, 0.0) == doctest::Approx(1.0 / two_pi));
    CHECK(hg_value(e1, e1, 0.5) == doctest::Approx(3.0 / two_pi));

    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
        const double p1 = two_pi * rng.next_unit();
        const double p2 = two_pi * rng.next_unit();
        const Vec2 a{std::cos(p1), std::sin(p1)};
        const Vec2 b{std::cos(p2), std::sin(p2)};
        CHECK(hg_value(a, b, 0.7) == doctest::Approx(hg_value(b, a, 0.7)).epsilon(1e-14));
    }

    CHECK_THROWS_AS(hg_value(e1, e2, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(hg_value(e1, e2, -1.2), std::invalid_argument);
}

TEST_CASE("kernel matrix structure") {
    auto angles = build_angles(48);

    auto iso = build_kernel(angles, 0.0);
    CHECK(iso.matrix.minCoeff() == doctest::Approx(1.0 / 48));
    CHECK(iso.matrix.maxCoeff() == doctest::Approx(1.0 / 48));

    auto k = build_kernel(angles, 0.5);
    for (int j = 0; j < 48; ++j) CHECK(k.matrix.row(j).sum() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(k.matrix.minCoeff() >= 0.0);

    // monotone decrease with enclosed angle (row 0, up to the antipode)
    for (int l = 1; l <= 24; ++l) CHECK(k.matrix(0, l) < k.matrix(0, l - 1));

    // symmetry of the raw kernel carries over (circulant weights)
    for (int j = 0; j < 48; ++j)
        for (int l = 0; l < 48; ++l)
            CHECK(k.matrix(j, l) == doctest::Approx(k.matrix(l, j)).epsilon(1e-12));
}

TEST_CASE("apply against brute force") {
    auto angles = build_angles(8);
    auto k = build_kernel(angles, 0.4);

    Rng rng(11);
    Mat phi(5, 8);
    for (int i = 0; i < 5; ++i)
        for (int l = 0; l < 8; ++l) phi(i, l) = rng.normal();

    Mat out = k.apply(phi);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 8; ++j) {
            double s = 0.0;
            for (int l = 0; l < 8; ++l) s += k.matrix(j, l) * phi(i, l);
            CHECK(out(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    }

    SUBCASE("direction-constant fields are fixed points") {
        Mat c = Mat::Constant(5, 8, 3.25);
        Mat kc = k.apply(c);
        CHECK((kc - c).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("zero maps to zero") {
        Mat z = Mat::Zero(5, 8);
        CHECK(k.apply(z).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("per-node L2 contraction") {
        Mat out2 = k.apply(phi);
        for (int i = 0; i < 5; ++i)
            CHECK(out2.row(i).norm() <= phi.row(i).norm() * (1.0 + 1e-12));
    }
    SUBCASE("dimension mismatch rejected") {
        Mat bad(5, 7);
        CHECK_THROWS_AS(k.apply(bad), std::invalid_argument);
    }
}

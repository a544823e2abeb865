#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "morphenkf/morphing.hpp"
#include "morphenkf/registration.hpp"
#include "oracles.hpp"

using namespace morphenkf;

namespace {

const Domain kDomain{0.0, 0.0, 250.0, 250.0};

ScalarField ridge(const GridGeometry& g, double center, double height, double width = 20.0) {
    return ScalarField::from_function(g, 0.0, [&](double x, double) {
        const double d = x - center;
        return height * std::exp(-d * d / (2 * width * width));
    });
}

// Warp moving x by `shift` * sin(pi x / L) and leaving y alone.
Warp x_shift_warp(int level, double shift) {
    Warp t(level, kDomain);
    for (std::size_t k = 0; k < t.side(); ++k)
        for (std::size_t j = 0; j < t.side(); ++j) {
            const double s = static_cast<double>(j) / static_cast<double>(t.cells());
            t.set_displacement(j, k, {shift * std::sin(3.14159265358979323846 * s), 0.0});
        }
    return t;
}

std::size_t argmax_x(const ScalarField& f, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < f.geometry().nx; ++j)
        if (f(j, row) > f(best, row)) best = j;
    return best;
}

int local_maxima_x(const ScalarField& f, std::size_t row) {
    int count = 0;
    for (std::size_t j = 1; j + 1 < f.geometry().nx; ++j)
        if (f(j, row) > f(j - 1, row) && f(j, row) >= f(j + 1, row) && f(j, row) > 1e-3) ++count;
    return count;
}

}  // namespace

TEST(Residual, ZeroWarpGivesDifference) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-5, 5);
    const GridGeometry g(9, 9, kDomain);
    ScalarField a(g, 1.0), b(g, 4.0);
    for (auto& v : a.values()) v = u(rng);
    for (auto& v : b.values()) v = u(rng);
    const auto r = residual(a, b, Warp(2, kDomain));
    for (std::size_t i = 0; i < r.values().size(); ++i) EXPECT_EQ(r.values()[i], b.values()[i] - a.values()[i]);
    EXPECT_EQ(r.boundary_value(), 3.0);
    EXPECT_EQ(max_abs_difference(residual(a, a, Warp(2, kDomain)), ScalarField(g)), 0.0);
}

TEST(Residual, MatchesPerPixelOracle) {
    std::mt19937_64 rng(2);
    const GridGeometry g(31, 31, kDomain);
    const auto u = ridge(g, 120.0, 500.0);
    const auto v = ridge(g, 140.0, 400.0);
    const auto t = oracle::random_warp(4, kDomain, 10.0, rng);
    const auto r = residual(u, v, t);
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const Point pre = oracle::newton_inverse(t, g.node(j, k));
            EXPECT_NEAR(r(j, k), oracle::field_at(v, pre) - u(j, k), 1e-6);
        }
}

TEST(Morph, LambdaZeroIsNodeExact) {
    std::mt19937_64 rng(3);
    const GridGeometry g(40, 30, kDomain);
    const auto u = ridge(g, 100.0, 700.0), v = ridge(g, 150.0, 500.0);
    const auto pair = make_morph_pair(u, v, oracle::random_warp(4, kDomain, 8.0, rng));
    EXPECT_EQ(morph(pair, 0.0), u);
}

TEST(Morph, LambdaOneRecoversTargetWithinInterpolationError) {
    // u_1 = I_h[v o (I+T)^{-1}] o (I+T) at the pixel nodes, where I_h is
    // bilinear interpolation on the pixel grid. For a point y in a pixel cell
    // |I_h g(y) - g(y)| <= Lip(g) * cell diagonal, and Lip(g) <= Lip(v) / m
    // with m the smallest stretch of I+T (here 1 - 12 pi / 250 along x).
    const GridGeometry g(65, 65, kDomain);
    const auto u = ridge(g, 110.0, 700.0, 25.0);
    const auto t = x_shift_warp(4, 12.0);
    const auto v = compose(u, t);
    const auto m = morph(make_morph_pair(u, v, t), 1.0);
    double lip = 0.0;
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j + 1 < g.nx; ++j) lip = std::max(lip, std::abs(v(j + 1, k) - v(j, k)) / g.hx());
    const double stretch = 1.0 - 12.0 * 3.14159265358979323846 / 250.0;
    const double err = max_abs_difference(m, v);
    EXPECT_LE(err, lip / stretch * std::hypot(g.hx(), g.hy()));
    EXPECT_GT(err, 0.0);
}

TEST(Morph, EndpointErrorDecreasesWithMorphingLevel) {
    // v is the exact composition of a bump with a smooth warp; T is that warp
    // sampled on the morphing grid of level M. The lambda = 1 error is
    // interpolation error that shrinks as the morphing grid is refined.
    const GridGeometry g(125, 125, kDomain);
    const double pi = 3.14159265358979323846;
    auto bump_at = [](double x, double y) {
        const double dx = x - 120.0, dy = y - 130.0;
        return 300.0 + 700.0 * std::exp(-(dx * dx + dy * dy) / (2 * 25.0 * 25.0));
    };
    const auto u = ScalarField::from_function(g, 300.0, bump_at);
    const auto v = ScalarField::from_function(g, 300.0, [&](double x, double y) {
        const double b = std::sin(pi * x / 250.0) * std::sin(pi * y / 250.0);
        return bump_at(x + 6.0 * b, y + 3.0 * b);
    });
    double prev = std::numeric_limits<double>::infinity();
    for (int m = 3; m <= 5; ++m) {
        Warp t(m, kDomain);
        for (std::size_t k = 0; k < t.side(); ++k)
            for (std::size_t j = 0; j < t.side(); ++j) {
                const Point p = t.node(j, k);
                const double b = std::sin(pi * p.x / 250.0) * std::sin(pi * p.y / 250.0);
                t.set_displacement(j, k, {6.0 * b, 3.0 * b});
            }
        const double err = max_abs_difference(morph(make_morph_pair(u, v, t), 1.0), v);
        EXPECT_LT(err, prev) << "M=" << m;
        prev = err;
    }
}

TEST(Morph, HalfwayPeakAtMidpoint) {
    // Field constant in y. u peaks at 105 m, I+T pulls x back by
    // 40 sin(pi x / L) and r = u / 2. Analytically u_lam(x) =
    // (1 + lam/2) u(x - 40 lam sin(pi x / L)): the peak is at 125 m for
    // lam = 1/2 and near 143.9 m for lam = 1.
    const GridGeometry g(251, 11, kDomain);
    const double shift = 40.0;
    Warp t(5, kDomain);
    for (std::size_t k = 0; k < t.side(); ++k)
        for (std::size_t j = 0; j < t.side(); ++j) t.set_displacement(j, k, {-shift * std::sin(3.14159265358979323846 * static_cast<double>(j) / 32.0), 0.0});
    const auto u = ridge(g, 125.0 - shift / 2, 600.0);
    const auto pair = MorphPair{u, add_scaled(ScalarField(g), 0.5, u), t};
    const auto half = morph(pair, 0.5);
    const auto one = morph(pair, 1.0);
    const std::size_t row = 5;
    const double x_half = g.x(argmax_x(half, row)), x_one = g.x(argmax_x(one, row)), x_zero = g.x(argmax_x(u, row));
    EXPECT_NEAR(x_half, 125.0, g.hx());
    EXPECT_NEAR(x_one, 143.9, g.hx());
    EXPECT_NEAR(x_half, 0.5 * (x_zero + x_one), 2.0 * g.hx());
    EXPECT_NEAR(half(argmax_x(half, row), row), 600.0 * 1.25, 1.0);
    EXPECT_NEAR(one(argmax_x(one, row), row), 900.0, 1.0);
}

TEST(Morph, PeakMovesMonotonically) {
    const GridGeometry g(251, 5, kDomain);
    Warp t(5, kDomain);
    for (std::size_t k = 0; k < t.side(); ++k)
        for (std::size_t j = 0; j < t.side(); ++j) t.set_displacement(j, k, {-30.0 * std::sin(3.14159265358979323846 * static_cast<double>(j) / 32.0), 0.0});
    const auto u = ridge(g, 110.0, 600.0);
    const MorphPair pair{u, ScalarField(g), t};
    double prev = g.x(argmax_x(u, 2));
    for (int i = 1; i <= 10; ++i) {
        const double x = g.x(argmax_x(morph(pair, i / 10.0), 2));
        EXPECT_GE(x, prev);
        prev = x;
    }
    EXPECT_GT(prev, 130.0);
}

TEST(SimpleMorph, EndpointsAndStationaryArtifact) {
    const GridGeometry g(251, 5, kDomain);
    const auto u = ridge(g, 100.0, 600.0);
    const auto v = ridge(g, 150.0, 600.0);
    const Warp zero(4, kDomain);
    // With T = 0 the cheap variant blends: u at 0, v at 1, two bumps halfway.
    EXPECT_EQ(simple_morph(u, v, zero, 0.0), u);
    const auto at_one = simple_morph(u, v, zero, 1.0);
    for (std::size_t i = 0; i < v.values().size(); ++i) EXPECT_EQ(at_one.values()[i], v.values()[i]);
    EXPECT_EQ(local_maxima_x(simple_morph(u, v, zero, 0.5), 2), 2);

    // The inverse-based morph with a warp carrying u's bump onto v's has one.
    Warp t(5, kDomain);
    for (std::size_t k = 0; k < t.side(); ++k)
        for (std::size_t j = 0; j < t.side(); ++j) t.set_displacement(j, k, {-50.0 * std::sin(3.14159265358979323846 * static_cast<double>(j) / 32.0), 0.0});
    const auto pair = make_morph_pair(u, v, t);
    EXPECT_EQ(local_maxima_x(morph(pair, 0.5), 2), 1);
}

TEST(Morph, RejectsBadLambda) {
    const GridGeometry g(5, 5, kDomain);
    const MorphPair p{ScalarField(g), ScalarField(g), Warp(1, kDomain)};
    EXPECT_THROW(morph(p, 1.5), ConfigError);
    EXPECT_THROW(morph(p, -0.1), ConfigError);
    EXPECT_THROW(simple_morph(ScalarField(g), ScalarField(g), Warp(1, kDomain), 2.0), ConfigError);
}

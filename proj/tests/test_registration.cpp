#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "morphenkf/registration.hpp"
#include "oracles.hpp"

using namespace morphenkf;

namespace {

const Domain kDomain{0.0, 0.0, 250.0, 250.0};

ScalarField bump(const GridGeometry& g, Point c, double width, double amp = 700.0, double base = 300.0) {
    return ScalarField::from_function(g, base, [&](double x, double y) {
        const double dx = x - c.x, dy = y - c.y;
        return base + amp * std::exp(-(dx * dx + dy * dy) / (2 * width * width));
    });
}

// Direct two-dimensional sum over the extended index square, with the
// boundary value outside the grid and each 1-D weight family normalized so
// its squares sum to one.
ScalarField smooth_oracle(const ScalarField& u, double alpha) {
    const auto& g = u.geometry();
    auto weights = [alpha](std::size_t n, std::size_t j) {
        const double h = 1.0 / static_cast<double>(n - 1);
        std::vector<double> w;
        double sq = 0.0;
        for (long jp = -static_cast<long>(n) + 1; jp <= 2 * static_cast<long>(n); ++jp) {
            const double d = (static_cast<double>(j) - static_cast<double>(jp)) * h;
            w.push_back(std::exp(-d * d / alpha));
            sq += w.back() * w.back();
        }
        for (double& v : w) v /= std::sqrt(sq);
        return w;
    };
    ScalarField out(g, u.boundary_value());
    const long nx = static_cast<long>(g.nx), ny = static_cast<long>(g.ny);
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const auto wx = weights(g.nx, j), wy = weights(g.ny, k);
            long double s = 0.0;
            for (long kp = -ny + 1; kp <= 2 * ny; ++kp)
                for (long jp = -nx + 1; jp <= 2 * nx; ++jp) {
                    const bool inside = jp >= 0 && jp < nx && kp >= 0 && kp < ny;
                    const double val = inside ? u(static_cast<std::size_t>(jp), static_cast<std::size_t>(kp))
                                              : u.boundary_value();
                    s += static_cast<long double>(wx[static_cast<std::size_t>(jp + nx - 1)] *
                                                  wy[static_cast<std::size_t>(kp + ny - 1)] * val);
                }
            out(j, k) = static_cast<double>(s);
        }
    return out;
}

// Trapezoid quadrature of J in normalized coordinates, from first principles.
double objective_oracle(const Warp& t, const ScalarField& u, const ScalarField& v, double c1, double c2) {
    const auto& g = u.geometry();
    const double lx = g.domain.lx, ly = g.domain.ly;
    auto tw = [](std::size_t i, std::size_t n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
    double res = 0.0;
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const Point p = g.node(j, k);
            const double a = tw(j, g.nx) * tw(k, g.ny) / static_cast<double>((g.nx - 1) * (g.ny - 1));
            res += a * std::abs(v(j, k) - oracle::field_at(u, p + oracle::displacement_at(t, p)));
        }
    const std::size_t m = t.side();
    const double hn = 1.0 / static_cast<double>(m - 1);
    double wn = 0.0, gn = 0.0;
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t a = 0; a < m; ++a) {
            const double area = hn * hn * tw(a, m) * tw(b, m);
            const Point d = t.displacement(a, b);
            wn += area * (std::abs(d.x) / lx + std::abs(d.y) / ly);
            const std::size_t ax = a + 1 < m ? a : a - 1, by = b + 1 < m ? b : b - 1;
            const Point ddx = t.displacement(ax + 1, b) - t.displacement(ax, b);
            const Point ddy = t.displacement(a, by + 1) - t.displacement(a, by);
            gn += area * (std::abs(ddx.x / lx) + std::abs(ddx.y / ly) + std::abs(ddy.x / lx) + std::abs(ddy.y / ly)) / hn;
        }
    return res + c1 * wn + c2 * gn;
}

}  // namespace

TEST(Smoothing, MatchesDirectDoubleSum) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const GridGeometry g(14, 11, {0.0, 0.0, 130.0, 100.0});
    ScalarField u(g, 300.0);
    for (double& v : u.values()) v = 300.0 + 500.0 * u01(rng);
    for (int level = 1; level <= 4; ++level) {
        const auto a = smooth(u, level);
        const auto b = smooth_oracle(u, smoothing_alpha(level));
        EXPECT_LT(max_abs_difference(a, b), 1e-9) << "level " << level;
    }
}

TEST(Smoothing, AlphaHalvesRoughlyPerLevel) {
    EXPECT_DOUBLE_EQ(smoothing_alpha(1), 0.25 / 3.0);
    EXPECT_DOUBLE_EQ(smoothing_alpha(4), 0.25 / 17.0);
    EXPECT_THROW(smooth(ScalarField(GridGeometry(3, 3, kDomain)), 0), ConfigError);
}

TEST(Objective, MatchesIndependentQuadrature) {
    std::mt19937_64 rng(2);
    const GridGeometry g(41, 37, kDomain);
    const auto u = bump(g, {120.0, 130.0}, 30.0);
    const auto v = bump(g, {128.0, 126.0}, 30.0);
    const RegistrationConfig cfg;
    for (int level = 1; level <= 4; ++level) {
        const auto t = oracle::random_warp(level, kDomain, 6.0, rng);
        const double got = objective(t, u, v, cfg).total;
        EXPECT_NEAR(got, objective_oracle(t, u, v, cfg.c1, cfg.c2), 1e-9 * got) << "level " << level;
    }
}

TEST(Objective, ZeroForIdenticalFieldsAndZeroWarp) {
    const GridGeometry g(21, 21, kDomain);
    const auto u = bump(g, {125.0, 125.0}, 20.0);
    const auto o = objective(Warp(3, kDomain), u, u, RegistrationConfig{});
    EXPECT_EQ(o.total, 0.0);
    EXPECT_EQ(o.warp_norm, 0.0);
    EXPECT_EQ(o.grad_norm, 0.0);
}

TEST(Objective, ConstantShiftHasNoGradientAwayFromBoundary) {
    // A uniform displacement has zero difference between neighbours.
    Warp t(2, kDomain);
    for (std::size_t i = 0; i < t.size(); ++i) t.tx()[i] = 5.0;
    const GridGeometry g(11, 11, kDomain);
    const ScalarField u(g, 0.0);
    const auto o = objective(t, u, u, RegistrationConfig{});
    EXPECT_EQ(o.grad_norm, 0.0);
    EXPECT_NEAR(o.warp_norm, 5.0 / 250.0, 1e-15);
}

TEST(GoldenSection, FindsParabolaMinimum) {
    int calls = 0;
    auto f = [&](double x) {
        ++calls;
        return (x - 0.3) * (x - 0.3) + 2.0;
    };
    const auto [x, fx] = detail::golden_section(f, -1.0, 2.0, 1e-8, 200);
    EXPECT_NEAR(x, 0.3, 1e-7);
    EXPECT_NEAR(fx, 2.0, 1e-13);
    EXPECT_LT(calls, 60);
}

TEST(NodeOptimization, NeverIncreasesObjectiveAndKeepsConvexity) {
    std::mt19937_64 rng(3);
    const GridGeometry g(33, 33, kDomain);
    const auto u = smooth(bump(g, {110.0, 120.0}, 25.0), 2);
    const auto v = smooth(bump(g, {126.0, 131.0}, 25.0), 2);
    const RegistrationConfig cfg;
    Warp t = oracle::random_warp(2, kDomain, 10.0, rng);
    for (int sweep = 0; sweep < 2; ++sweep)
        for (std::size_t k = 0; k < t.side(); ++k)
            for (std::size_t j = 0; j < t.side(); ++j) {
                const double before = objective(t, u, v, cfg).total;
                t = optimize_node(t, j, k, u, v, cfg);
                EXPECT_LE(objective(t, u, v, cfg).total, before);
                ASSERT_TRUE(is_admissible(t));
            }
}

TEST(NodeOptimization, ComparableToExhaustiveScan) {
    // One free node; scan every feasible position of a fine lattice and
    // compare the best value found with the optimizer's.
    const GridGeometry g(41, 41, kDomain);
    const auto u = bump(g, {125.0, 125.0}, 35.0);
    const auto v = bump(g, {105.0, 115.0}, 35.0);
    RegistrationConfig cfg;
    cfg.c1 = 0.0;
    cfg.c2 = 0.0;
    const Warp t0(1, kDomain);
    const Warp t1 = optimize_node(t0, 1, 1, u, v, cfg);
    const double got = objective(t1, u, v, cfg).total;

    double best = std::numeric_limits<double>::infinity();
    for (double dx = -60.0; dx <= 60.0; dx += 1.0)
        for (double dy = -60.0; dy <= 60.0; dy += 1.0) {
            Warp t = t0;
            t.set_displacement(1, 1, {dx, dy});
            if (!is_invertible(t)) continue;
            best = std::min(best, objective(t, u, v, cfg).total);
        }
    EXPECT_LE(got, best * 1.01);
    EXPECT_LT(got, objective(t0, u, v, cfg).total);
}

TEST(NodeOptimization, RejectsIndexOutsideGrid) {
    const GridGeometry g(9, 9, kDomain);
    const ScalarField u(g);
    EXPECT_THROW(optimize_node(Warp(1, kDomain), 3, 0, u, u, RegistrationConfig{}), ConfigError);
}

TEST(Registration, IdenticalFieldsGiveZeroWarp) {
    const GridGeometry g(41, 41, kDomain);
    const auto u = bump(g, {125.0, 125.0}, 20.0);
    RegistrationConfig cfg;
    cfg.levels = 3;
    const auto r = register_fields(u, u, std::nullopt, cfg);
    for (double v : r.warp.tx()) EXPECT_EQ(v, 0.0);
    for (double v : r.warp.ty()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.report.node_moves, 0);
}

TEST(Registration, ReducesResidualForShiftedBump) {
    const GridGeometry g(65, 65, kDomain);
    const auto u = bump(g, {125.0, 125.0}, 25.0);
    const auto v = bump(g, {133.0, 120.0}, 25.0);
    RegistrationConfig cfg;
    cfg.levels = 3;
    const auto r = register_fields(u, v, std::nullopt, cfg);
    EXPECT_TRUE(is_admissible(r.warp));
    const Warp zero(3, kDomain);
    EXPECT_LT(objective(r.warp, u, v, cfg).residual_norm, 0.5 * objective(zero, u, v, cfg).residual_norm);
    // v(x) = u(x + T(x)) puts v's peak at 133, 120, so T there is about (-8, 5).
    const Point c = warp_displacement(r.warp, {133.0, 120.0});
    EXPECT_NEAR(c.x, -8.0, 1.5);
    EXPECT_NEAR(c.y, 5.0, 1.5);
    ASSERT_FALSE(r.report.sweeps.empty());
    EXPECT_EQ(r.report.sweeps.back().level, 3);
}

TEST(Registration, ObserverSeesMonotoneObjective) {
    const GridGeometry g(33, 33, kDomain);
    const auto u = bump(g, {120.0, 125.0}, 30.0);
    const auto v = bump(g, {130.0, 125.0}, 30.0);
    RegistrationConfig cfg;
    cfg.levels = 2;
    long visits = 0;
    const auto r = register_fields(u, v, std::nullopt, cfg, [&](const NodeUpdate& n) {
        ++visits;
        EXPECT_LE(objective(n.after, n.u_smooth, n.v_smooth, cfg).total,
                  objective(n.before, n.u_smooth, n.v_smooth, cfg).total);
    });
    EXPECT_EQ(visits, r.report.node_visits);
}

TEST(Registration, ReportListsSweeps) {
    RegistrationReport rep;
    rep.sweeps.push_back({1, 1, 2.5, 3.0, "max_sweeps"});
    rep.notes.push_back("x");
    EXPECT_EQ(rep.to_text(), "level=1 sweep=1 J=2.5 r_norm=3 stop=max_sweeps\nnote: x\n");
}

TEST(Registration, ValidatesConfiguration) {
    RegistrationConfig cfg;
    cfg.levels = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.c1 = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    const GridGeometry g(9, 9, kDomain), h(9, 10, kDomain);
    EXPECT_THROW(register_fields(ScalarField(g), ScalarField(h), std::nullopt, RegistrationConfig{}), ConfigError);
}

#pragma once

// Smooth random fields
//
//   f(x, y) = amplitude * sum_{j,l=1..d} lam_{j,l} c_{j,l} sin(j pi x) sin(l pi y),
//   lam_{j,l} = (1 + sqrt(j^2 + l^2))^{-2},  c_{j,l} ~ N(0, 1),
//
// with (x, y) normalized to the unit square over the domain.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"

namespace morphenkf {

struct SmoothFieldSpec {
    int modes = 10;  // d, modes per direction
    double amplitude = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (modes < 1) throw ConfigError("random field needs at least one mode");
        if (!(amplitude >= 0.0)) throw ConfigError("random field amplitude must be non-negative");
    }
};

inline double mode_weight(int j, int l) {
    const double s = 1.0 + std::sqrt(static_cast<double>(j * j + l * l));
    return 1.0 / (s * s);
}

/// sin(pi t), exactly zero at integer t.
inline double sin_pi(double t) {
    const double r = t - 2.0 * std::floor(t / 2.0);
    if (r == 0.0 || r == 1.0) return 0.0;
    return std::sin(std::numbers::pi * r);
}

/// Drawn coefficients amplitude * lam_{j,l} * c_{j,l}, j-major.
class SineSeries {
public:
    explicit SineSeries(const SmoothFieldSpec& spec) : d_(spec.modes), coef_(static_cast<std::size_t>(d_ * d_)) {
        spec.validate();
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int j = 1; j <= d_; ++j)
            for (int l = 1; l <= d_; ++l) coef_[index(j, l)] = spec.amplitude * mode_weight(j, l) * normal(rng);
    }

    [[nodiscard]] int modes() const { return d_; }
    [[nodiscard]] double coefficient(int j, int l) const { return coef_[index(j, l)]; }

    /// Value at normalized coordinates (s, t) in [0, 1]^2.
    [[nodiscard]] double operator()(double s, double t) const {
        double v = 0.0;
        for (int j = 1; j <= d_; ++j) {
            const double sj = sin_pi(j * s);
            for (int l = 1; l <= d_; ++l) v += coef_[index(j, l)] * sj * sin_pi(l * t);
        }
        return v;
    }

    /// Values on a tensor grid of normalized coordinates, row-major (t outer).
    [[nodiscard]] std::vector<double> on_grid(const std::vector<double>& s, const std::vector<double>& t) const {
        std::vector<double> sx(static_cast<std::size_t>(d_) * s.size()), sy(static_cast<std::size_t>(d_) * t.size());
        for (int j = 0; j < d_; ++j)
            for (std::size_t i = 0; i < s.size(); ++i) sx[j * s.size() + i] = sin_pi((j + 1) * s[i]);
        for (int l = 0; l < d_; ++l)
            for (std::size_t i = 0; i < t.size(); ++i) sy[l * t.size() + i] = sin_pi((l + 1) * t[i]);
        std::vector<double> out(s.size() * t.size(), 0.0);
        std::vector<double> row(static_cast<std::size_t>(d_));
        for (std::size_t it = 0; it < t.size(); ++it) {
            for (int j = 0; j < d_; ++j) {
                double acc = 0.0;
                for (int l = 0; l < d_; ++l) acc += coef_[static_cast<std::size_t>(j * d_ + l)] * sy[l * t.size() + it];
                row[static_cast<std::size_t>(j)] = acc;
            }
            for (std::size_t is = 0; is < s.size(); ++is) {
                double acc = 0.0;
                for (int j = 0; j < d_; ++j) acc += row[static_cast<std::size_t>(j)] * sx[j * s.size() + is];
                out[it * s.size() + is] = acc;
            }
        }
        return out;
    }

private:
    [[nodiscard]] std::size_t index(int j, int l) const { return static_cast<std::size_t>((j - 1) * d_ + (l - 1)); }

    int d_;
    std::vector<double> coef_;
};

namespace detail {

inline std::vector<double> unit_nodes(std::size_t n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(i) / static_cast<double>(n - 1);
    return s;
}

}  // namespace detail

/// The series sampled at the pixel nodes; boundary value 0.
inline ScalarField sample_field(const SmoothFieldSpec& spec, const GridGeometry& g) {
    const SineSeries series(spec);
    return ScalarField(g, series.on_grid(detail::unit_nodes(g.nx), detail::unit_nodes(g.ny)), 0.0);
}

/// Seed of redraw `attempt` for a component seed, from independent streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t attempt) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(attempt >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct WarpSample {
    Warp warp;
    int attempts = 0;
};

/// Random warp with tx, ty drawn from the two specs at the morphing nodes,
/// redrawn until every mapped quadrant is strictly convex.
inline WarpSample sample_invertible_warp(const SmoothFieldSpec& spec_x, const SmoothFieldSpec& spec_y, int level,
                                         const Domain& domain, int max_tries) {
    if (max_tries < 1) throw ConfigError("sample_invertible_warp: max_tries must be >= 1");
    const auto nodes = detail::unit_nodes(morph_nodes_per_side(level));
    for (int attempt = 0; attempt < max_tries; ++attempt) {
        SmoothFieldSpec sx = spec_x, sy = spec_y;
        sx.seed = derive_seed(spec_x.seed, static_cast<std::uint64_t>(attempt));
        sy.seed = derive_seed(spec_y.seed, static_cast<std::uint64_t>(attempt));
        Warp t(level, domain, SineSeries(sx).on_grid(nodes, nodes), SineSeries(sy).on_grid(nodes, nodes));
        if (is_invertible(t)) return {std::move(t), attempt + 1};
    }
    std::ostringstream os;
    os << "sample_invertible_warp: no invertible warp in " << max_tries << " tries (acceptance rate 0/" << max_tries
       << " = 0%)";
    throw NumericalError(os.str());
}

}  // namespace morphenkf

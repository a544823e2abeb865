#pragma once

// Two-field reaction-diffusion wildfire model problem:
//
//   dw/dt = k lap(w) - wind . grad(w) - gamma (w - w_a) + A z f(w)
//   dz/dt = -C z f(w)
//   f(w)  = exp(-B / (w - w_a)) for w > w_a, 0 otherwise
//
// Explicit Euler in time, centered diffusion, first-order upwind advection.
// Values outside the grid are the ambient temperature; fuel on the boundary
// nodes is frozen.

#include <cmath>
#include <string>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"

namespace morphenkf {

/// Model state U = (w, z): temperature (K) and fuel fraction.
struct ModelState {
    ScalarField w;
    ScalarField z;

    friend bool operator==(const ModelState&, const ModelState&) = default;
};

struct FireModelParams {
    double k_diff = 0.03;           // m^2/s
    Point wind{0.0, 0.0};           // m/s
    double w_ambient = 300.0;       // K
    double w_ignition = 1000.0;     // K, temperature of the ignition patch
    double heat_rate = 187.93;      // A, K/s
    double activation = 558.49;     // B, K
    double fuel_rate = 0.1625;      // C, 1/s
    double cooling = 0.003;         // gamma, 1/s
    double dt = 0.5;                // s
    double cycle_len = 180.0;       // s

    void validate(const GridGeometry& g) const {
        if (k_diff < 0.0 || heat_rate < 0.0 || activation < 0.0 || fuel_rate < 0.0 || cooling < 0.0)
            throw ConfigError("fire model rates must be non-negative");
        if (!(dt > 0.0) || !(cycle_len >= 0.0)) throw ConfigError("fire model dt must be positive");
        const double h = std::min(g.hx(), g.hy());
        if (k_diff > 0.0 && dt > h * h / (4.0 * k_diff))
            throw ConfigError("fire model dt violates the diffusion stability bound");
        const double speed = norm(wind);
        if (speed > 0.0 && dt > h / speed) throw ConfigError("fire model dt violates the advection stability bound");
        if (dt * fuel_rate > 1.0) throw ConfigError("fire model dt * fuel_rate must not exceed 1");
    }

    [[nodiscard]] int steps_per_cycle() const {
        return static_cast<int>(std::ceil(cycle_len / dt - 1e-9));
    }
};

inline double reaction_rate(double w, const FireModelParams& p) {
    const double excess = w - p.w_ambient;
    return excess > 0.0 ? std::exp(-p.activation / excess) : 0.0;
}

/// Uniform ambient state with full fuel.
inline ModelState ambient_state(const GridGeometry& g, const FireModelParams& p) {
    ScalarField w(g, p.w_ambient);
    std::fill(w.values().begin(), w.values().end(), p.w_ambient);
    ScalarField z(g, 1.0);
    std::fill(z.values().begin(), z.values().end(), 1.0);
    return {w, z};
}

/// Ambient state with the square of half-width `half` (m) around `center`
/// raised to the ignition temperature.
inline ModelState ignite(const GridGeometry& g, const FireModelParams& p, Point center, double half) {
    ModelState s = ambient_state(g, p);
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const Point q = g.node(j, k);
            if (std::abs(q.x - center.x) <= half && std::abs(q.y - center.y) <= half) s.w(j, k) = p.w_ignition;
        }
    return s;
}

/// One explicit time step. `step_index` only labels errors.
inline ModelState step(const ModelState& s, const FireModelParams& p, long step_index = 0) {
    const auto& g = s.w.geometry();
    if (g != s.z.geometry()) throw ConfigError("fire model: w and z grids differ");
    const std::size_t nx = g.nx, ny = g.ny;
    const double ihx2 = 1.0 / (g.hx() * g.hx()), ihy2 = 1.0 / (g.hy() * g.hy());
    const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();
    const double ghost = p.w_ambient;
    const auto& w = s.w.values();
    const auto& z = s.z.values();

    ModelState out = s;
    auto& wn = out.w.values();
    auto& zn = out.z.values();
    bool finite = true;
    for (std::size_t k = 0; k < ny; ++k)
        for (std::size_t j = 0; j < nx; ++j) {
            const std::size_t i = k * nx + j;
            const double wc = w[i];
            const double wl = j > 0 ? w[i - 1] : ghost, wr = j + 1 < nx ? w[i + 1] : ghost;
            const double wd = k > 0 ? w[i - nx] : ghost, wu = k + 1 < ny ? w[i + nx] : ghost;
            const double lap = (wl + wr - 2.0 * wc) * ihx2 + (wd + wu - 2.0 * wc) * ihy2;
            const double adv_x = p.wind.x > 0.0 ? p.wind.x * (wc - wl) * ihx : p.wind.x * (wr - wc) * ihx;
            const double adv_y = p.wind.y > 0.0 ? p.wind.y * (wc - wd) * ihy : p.wind.y * (wu - wc) * ihy;
            const double rate = reaction_rate(wc, p);
            wn[i] = wc + p.dt * (p.k_diff * lap - (adv_x + adv_y) - p.cooling * (wc - p.w_ambient) +
                                 p.heat_rate * z[i] * rate);
            const bool edge = j == 0 || k == 0 || j + 1 == nx || k + 1 == ny;
            if (!edge) zn[i] = z[i] - p.dt * p.fuel_rate * z[i] * rate;
            finite = finite && std::isfinite(wn[i]);
        }
    if (!finite) throw NumericalError("fire model: non-finite temperature at step " + std::to_string(step_index));
    return out;
}

/// Advances the state by one analysis cycle (ceil(cycle_len/dt) steps).
inline ModelState run_cycle(const ModelState& s, const FireModelParams& p) {
    p.validate(s.w.geometry());
    ModelState cur = s;
    const int n = p.steps_per_cycle();
    for (int i = 0; i < n; ++i) cur = step(cur, p, i);
    return cur;
}

/// Advances the state by `seconds` (rounded up to whole steps).
inline ModelState advance(const ModelState& s, const FireModelParams& p, double seconds) {
    FireModelParams q = p;
    q.cycle_len = seconds;
    return run_cycle(s, q);
}

}  // namespace morphenkf

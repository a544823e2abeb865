#pragma once

// Morphing between two registered fields:
//   r       = v o (I+T)^{-1} - u            registration residual
//   u_lam   = (u + lam r) o (I + lam T)     intermediate state, 0 <= lam <= 1

#include <string>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"

namespace morphenkf {

struct MorphPair {
    ScalarField u0;
    ScalarField r;
    Warp warp;
};

/// r = v o (I+T)^{-1} - u0 at the pixel nodes; r's boundary value is
/// v.boundary - u0.boundary.
inline ScalarField residual(const ScalarField& u0, const ScalarField& v, const Warp& t) {
    const auto& g = u0.geometry();
    if (g != v.geometry()) throw ConfigError("residual: fields have different geometry");
    const InverseWarp inverse(t);
    ScalarField r(g, v.boundary_value() - u0.boundary_value());
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) r(j, k) = eval_field(v, inverse(g.node(j, k))) - u0(j, k);
    return r;
}

inline MorphPair make_morph_pair(const ScalarField& u0, const ScalarField& v, const Warp& t) {
    return {u0, residual(u0, v, t), t};
}

/// (u0 + lam r) o (I + lam T). lam = 0 returns u0 node-exactly.
inline ScalarField morph(const MorphPair& pair, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("morph: lambda must be in [0, 1]");
    const Warp scaled_warp = scaled(pair.warp, lambda);
    if (auto q = first_nonconvex_quadrant(scaled_warp))
        throw NumericalError("morph: I + lambda T not invertible at quadrant (" + std::to_string(q->first) + "," +
                             std::to_string(q->second) + ")");
    return compose(add_scaled(pair.u0, lambda, pair.r), scaled_warp);
}

/// u0 o (I + lam T) + lam (v - u0 o (I+T)). Needs no inverse but leaves a
/// stationary copy of the residual behind; kept for comparison only.
inline ScalarField simple_morph(const ScalarField& u0, const ScalarField& v, const Warp& t, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("simple_morph: lambda must be in [0, 1]");
    if (u0.geometry() != v.geometry()) throw ConfigError("simple_morph: fields have different geometry");
    const ScalarField moved = compose(u0, scaled(t, lambda));
    const ScalarField registered = compose(u0, t);
    // lam v + (moved - lam registered) is exact at both endpoints.
    ScalarField out(u0.geometry(), lambda * v.boundary_value() + (u0.boundary_value() - lambda * u0.boundary_value()));
    for (std::size_t i = 0; i < out.values().size(); ++i)
        out.values()[i] = lambda * v.values()[i] + (moved.values()[i] - lambda * registered.values()[i]);
    return out;
}

}  // namespace morphenkf

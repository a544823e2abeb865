#pragma once

// Morphing EnKF: members are registered against a reference state, the EnKF
// runs on the registration representations [r_w, r_z, T], and the analysis
// is mapped back by morphing the reference.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "morphenkf/enkf.hpp"
#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"
#include "morphenkf/firemodel.hpp"
#include "morphenkf/morphing.hpp"
#include "morphenkf/parallel.hpp"
#include "morphenkf/registration.hpp"

namespace morphenkf {

struct MorphingEnkfConfig {
    RegistrationConfig reg;
    double sigma_r = 50.0;  // K
    double sigma_t = 5.0;   // m
    bool assimilate_fuel = false;
    int max_halvings = 10;
    unsigned threads = 0;

    void validate() const {
        reg.validate();
        if (!(sigma_r > 0.0) || !(sigma_t > 0.0)) throw ConfigError("observation noise must be positive");
        if (max_halvings < 0) throw ConfigError("max_halvings must be non-negative");
    }
};

/// Fixed reference state U0 with the smoothing pyramid of its temperature.
struct ReferenceState {
    ModelState u0;
    Pyramid w_pyramid;

    ReferenceState(ModelState u, int levels) : u0(std::move(u)), w_pyramid(smooth_pyramid(u0.w, levels)) {}
};

struct RegistrationRepState {
    ScalarField r_w;
    ScalarField r_z;
    Warp t;

    friend bool operator==(const RegistrationRepState&, const RegistrationRepState&) = default;
};

struct RepResult {
    RegistrationRepState rep;
    RegistrationReport report;
};

/// Registers w0 against `w` and returns the residual and warp.
inline RepResult register_temperature(const ScalarField& w, const ReferenceState& ref,
                                      const std::optional<Warp>& t_init, const MorphingEnkfConfig& cfg) {
    const auto& w0 = ref.u0.w;
    if (w.geometry() != w0.geometry()) throw ConfigError("registration: state and reference geometry differ");
    auto reg = register_fields(w0, ref.w_pyramid, w, t_init, cfg.reg);
    ScalarField r_w = residual(w0, w, reg.warp);
    ScalarField r_z(w0.geometry(), 0.0);
    return {{std::move(r_w), std::move(r_z), std::move(reg.warp)}, std::move(reg.report)};
}

/// [r_w, r_z, T] of a model state relative to the reference. The fuel
/// residual is zero unless fuel assimilation is enabled.
inline RepResult to_registration_rep(const ModelState& u, const ReferenceState& ref, const std::optional<Warp>& t_init,
                                     const MorphingEnkfConfig& cfg) {
    if (u.z.geometry() != ref.u0.z.geometry()) throw ConfigError("registration: fuel geometry differs");
    RepResult out = register_temperature(u.w, ref, t_init, cfg);
    if (cfg.assimilate_fuel) out.rep.r_z = residual(ref.u0.z, u.z, out.rep.t);
    return out;
}

/// w = (w0 + r_w) o (I+T), z = (z0 + r_z) o (I+T) with z clamped to [0, 1].
inline ModelState from_registration_rep(const RegistrationRepState& rep, const ReferenceState& ref) {
    if (auto q = first_nonconvex_quadrant(rep.t))
        throw NumericalError("reconstruction: warp not invertible at quadrant (" + std::to_string(q->first) + "," +
                             std::to_string(q->second) + ")");
    ModelState s{compose(add_scaled(ref.u0.w, 1.0, rep.r_w), rep.t), compose(add_scaled(ref.u0.z, 1.0, rep.r_z), rep.t)};
    for (double& v : s.z.values()) v = std::clamp(v, 0.0, 1.0);
    s.z.set_boundary_value(std::clamp(s.z.boundary_value(), 0.0, 1.0));
    return s;
}

inline std::size_t packed_size(const GridGeometry& g, int level) {
    const auto m = morph_nodes_per_side(level);
    return 2 * g.size() + 2 * m * m;
}

/// [r_w | r_z | tx | ty], each block row-major.
inline StateVector pack(const RegistrationRepState& rep) {
    const std::size_t p = rep.r_w.values().size(), m = rep.t.size();
    if (rep.r_z.values().size() != p) throw ConfigError("pack: r_w and r_z sizes differ");
    StateVector x(static_cast<Eigen::Index>(2 * p + 2 * m));
    auto put = [&](std::size_t off, const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(off + i)] = v[i];
    };
    put(0, rep.r_w.values());
    put(p, rep.r_z.values());
    put(2 * p, rep.t.tx());
    put(2 * p + m, rep.t.ty());
    return x;
}

/// Inverse of pack; grid, level and boundary values are taken from `layout`.
inline RegistrationRepState unpack(const StateVector& x, const RegistrationRepState& layout) {
    const std::size_t p = layout.r_w.values().size(), m = layout.t.size();
    if (static_cast<std::size_t>(x.size()) != 2 * p + 2 * m) throw ConfigError("unpack: state vector length mismatch");
    auto take = [&](std::size_t off, std::size_t n) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = x[static_cast<Eigen::Index>(off + i)];
        return v;
    };
    RegistrationRepState r = layout;
    r.r_w.values() = take(0, p);
    r.r_z.values() = take(p, p);
    r.t = Warp(layout.t.level(), layout.t.domain(), take(2 * p, m), take(2 * p + m, m));
    return r;
}

/// Entries of the packed vector seen by the observation: r_w, tx and ty.
inline std::vector<std::size_t> observed_entries(const RegistrationRepState& layout) {
    const std::size_t p = layout.r_w.values().size(), m = layout.t.size();
    std::vector<std::size_t> idx;
    idx.reserve(p + 2 * m);
    for (std::size_t i = 0; i < p; ++i) idx.push_back(i);
    for (std::size_t i = 0; i < 2 * m; ++i) idx.push_back(2 * p + i);
    return idx;
}

/// Noise-normalized RMS distance between the observed blocks of two reps.
inline double rep_distance(const RegistrationRepState& a, const RegistrationRepState& b, double sigma_r,
                           double sigma_t) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.r_w.values().size(); ++i, ++n) {
        const double d = (a.r_w.values()[i] - b.r_w.values()[i]) / sigma_r;
        s += d * d;
    }
    for (std::size_t i = 0; i < a.t.size(); ++i, n += 2) {
        const double dx = (a.t.tx()[i] - b.t.tx()[i]) / sigma_t, dy = (a.t.ty()[i] - b.t.ty()[i]) / sigma_t;
        s += dx * dx + dy * dy;
    }
    return std::sqrt(s / static_cast<double>(n));
}

inline double mean_rep_distance(const std::vector<RegistrationRepState>& reps, const RegistrationRepState& target,
                                double sigma_r, double sigma_t) {
    double s = 0.0;
    for (const auto& r : reps) s += rep_distance(r, target, sigma_r, sigma_t);
    return s / static_cast<double>(reps.size());
}

struct MorphingAnalysis {
    std::vector<ModelState> members;
    std::vector<RegistrationRepState> forecast_reps;
    std::vector<RegistrationRepState> analysis_reps;
    RegistrationRepState data_rep;
    std::vector<RegistrationReport> reports;
    RegistrationReport data_report;
    std::vector<int> halvings;  // per member; -1 when the forecast warp was kept
    std::vector<std::string> log;
    double forecast_distance = 0.0;
    double analysis_distance = 0.0;
};

/// Moves mapped boundary nodes back into the domain.
inline Warp clamp_boundary(const Warp& t) {
    Warp out = t;
    const auto m = t.side();
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < m; ++j) {
            if (j != 0 && k != 0 && j + 1 != m && k + 1 != m) continue;
            out.set_displacement(j, k, t.domain().clamp(t.mapped(j, k)) - t.node(j, k));
        }
    return out;
}

/// Admissible version of an analysis warp: boundary nodes are clamped into
/// the domain, and while some mapped quadrant is not convex the increment
/// over the forecast warp is halved. Returns the number of halvings, or -1
/// when the forecast warp is kept.
inline std::pair<Warp, int> admissible_warp(const Warp& forecast, const Warp& analysis, int max_halvings) {
    Warp t = clamp_boundary(analysis);
    if (is_invertible(t)) return {t, 0};
    const Warp delta = add_scaled(analysis, -1.0, forecast);
    double s = 1.0;
    for (int h = 1; h <= max_halvings; ++h) {
        s *= 0.5;
        t = clamp_boundary(add_scaled(forecast, s, delta));
        if (is_invertible(t)) return {t, h};
    }
    return {forecast, -1};
}

/// One morphing EnKF analysis: register members and data against the
/// reference, update [r_w, r_z, T] with the EnKF observing r_w and T, and
/// reconstruct. `warm` holds optional initial warps per member.
inline MorphingAnalysis morphing_analysis(const std::vector<ModelState>& forecast, const ReferenceState& ref,
                                          const ScalarField& data, const MorphingEnkfConfig& cfg, std::uint64_t seed,
                                          const std::vector<std::optional<Warp>>& warm = {},
                                          const std::optional<Warp>& data_warm = std::nullopt) {
    cfg.validate();
    const std::size_t n = forecast.size();
    if (n < 2) throw ConfigError("morphing_analysis: need at least 2 members");
    if (!warm.empty() && warm.size() != n) throw ConfigError("morphing_analysis: one warm start per member required");

    MorphingAnalysis out;
    out.forecast_reps.resize(n);
    out.reports.resize(n);
    parallel_for(n + 1, cfg.threads, [&](std::size_t i) {
        if (i == n) {
            auto d = register_temperature(data, ref, data_warm, cfg);
            out.data_rep = std::move(d.rep);
            out.data_report = std::move(d.report);
            return;
        }
        auto r = to_registration_rep(forecast[i], ref, warm.empty() ? std::nullopt : warm[i], cfg);
        out.forecast_reps[i] = std::move(r.rep);
        out.reports[i] = std::move(r.report);
    });

    const auto& layout = out.forecast_reps.front();
    EnsembleMatrix x(static_cast<Eigen::Index>(packed_size(layout.r_w.geometry(), layout.t.level())),
                     static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) x.col(static_cast<Eigen::Index>(k)) = pack(out.forecast_reps[k]);

    const auto idx = observed_entries(layout);
    const StateVector packed_data = pack(out.data_rep);
    Eigen::VectorXd d(static_cast<Eigen::Index>(idx.size())), noise(static_cast<Eigen::Index>(idx.size()));
    const std::size_t p = layout.r_w.values().size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        d[static_cast<Eigen::Index>(i)] = packed_data[static_cast<Eigen::Index>(idx[i])];
        noise[static_cast<Eigen::Index>(i)] = idx[i] < p ? cfg.sigma_r : cfg.sigma_t;
    }
    const EnsembleMatrix xa = analyze(x, ObservationSpec::selection(idx, d, noise), seed);

    out.analysis_reps.resize(n);
    out.halvings.assign(n, 0);
    for (std::size_t k = 0; k < n; ++k) {
        auto rep = unpack(xa.col(static_cast<Eigen::Index>(k)), layout);
        const auto [t, h] = admissible_warp(out.forecast_reps[k].t, rep.t, cfg.max_halvings);
        out.halvings[k] = h;
        rep.t = t;
        if (h != 0) {
            out.log.push_back("member " + std::to_string(k) +
                              (h > 0 ? ": warp increment scaled by 2^-" + std::to_string(h)
                                     : ": analysis warp rejected, forecast warp kept"));
        }
        out.analysis_reps[k] = std::move(rep);
    }
    out.members.resize(n);
    parallel_for(n, cfg.threads,
                 [&](std::size_t k) { out.members[k] = from_registration_rep(out.analysis_reps[k], ref); });

    out.forecast_distance = mean_rep_distance(out.forecast_reps, out.data_rep, cfg.sigma_r, cfg.sigma_t);
    out.analysis_distance = mean_rep_distance(out.analysis_reps, out.data_rep, cfg.sigma_r, cfg.sigma_t);
    return out;
}

}  // namespace morphenkf

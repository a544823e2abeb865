#pragma once

// Twin experiment driver and the command implementations behind the CLI.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "morphenkf/config.hpp"
#include "morphenkf/diagnostics.hpp"
#include "morphenkf/firemodel.hpp"
#include "morphenkf/io.hpp"
#include "morphenkf/morphing.hpp"
#include "morphenkf/morphing_enkf.hpp"
#include "morphenkf/parallel.hpp"
#include "morphenkf/randomfields.hpp"
#include "morphenkf/registration.hpp"

namespace morphenkf {

namespace fs = std::filesystem;

/// Per-cycle figures collected during a run.
struct CycleSummary {
    int cycle = 0;
    double forecast_distance = 0.0;
    double analysis_distance = 0.0;
    int fallbacks = 0;
    int non_invertible = 0;  // analysis warps failing the convexity check
    std::size_t fireline_pixels = 0;
    std::size_t fireline_rw_better = 0;  // fireline pixels with p(r_w) > p(w), forecast ensemble
    std::size_t analysis_fireline_pixels = 0;
    std::size_t analysis_fireline_rw_better = 0;  // same for the analysis ensemble
    std::size_t probe_j = 0, probe_k = 0;
    double bandwidth_w = 0.0, bandwidth_rw = 0.0, bandwidth_tx = 0.0;
    long node_visits = 0;

    [[nodiscard]] double fireline_fraction() const {
        return fireline_pixels == 0 ? 0.0 : static_cast<double>(fireline_rw_better) / static_cast<double>(fireline_pixels);
    }
    [[nodiscard]] double analysis_fireline_fraction() const {
        return analysis_fireline_pixels == 0 ? 0.0
                                             : static_cast<double>(analysis_fireline_rw_better) /
                                                   static_cast<double>(analysis_fireline_pixels);
    }
};

struct RunSummary {
    std::vector<CycleSummary> cycles;
    int initial_warp_attempts = 0;
};

namespace detail {

inline std::string numbered(const std::string& prefix, std::size_t k, int width = 3) {
    std::ostringstream os;
    os << prefix << std::setw(width) << std::setfill('0') << k;
    return os.str();
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    auto os = io::detail::open_out(path);
    os << text;
}

/// Writes member files and a manifest line per member into `dir`.
inline void write_checkpoint(const fs::path& dir, const std::vector<ModelState>& members,
                             const std::vector<RegistrationRepState>& reps) {
    fs::create_directories(dir);
    std::ostringstream manifest;
    for (std::size_t k = 0; k < members.size(); ++k) {
        const std::string base = numbered("member_", k);
        const std::string w = base + "_w.mkf", z = base + "_z.mkf", t = base + "_T.mkw", r = base + "_r_w.mkf";
        io::save_field(dir / w, members[k].w);
        io::save_field(dir / z, members[k].z);
        io::save_warp(dir / t, reps[k].t);
        io::save_field(dir / r, reps[k].r_w);
        manifest << "member=" << k << " w=" << w << " z=" << z << " T=" << t << " r_w=" << r << '\n';
    }
    write_text(dir / "manifest.txt", manifest.str());
}

inline Warp truth_warp(const RunConfig& c) {
    Warp t(c.filter.reg.levels, c.domain);
    const auto m = t.side();
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < m; ++j) {
            const double b = sin_pi(static_cast<double>(j) / static_cast<double>(m - 1)) *
                             sin_pi(static_cast<double>(k) / static_cast<double>(m - 1));
            t.set_displacement(j, k, b * c.truth_shift);
        }
    if (!is_admissible(t)) throw ConfigError("truth shift produces a non-invertible warp");
    return t;
}

inline std::vector<double> column(const std::vector<std::vector<double>>& rows, std::size_t i) {
    std::vector<double> v(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) v[k] = rows[k][i];
    return v;
}

inline void write_density(const fs::path& path, const DensityCurve& c) {
    auto os = io::detail::open_out(path);
    os << "x,density\n" << std::setprecision(17);
    for (std::size_t i = 0; i < c.x.size(); ++i) os << c.x[i] << ',' << c.density[i] << '\n';
}

inline void write_node_csv(const fs::path& path, const Warp& layout, const std::vector<double>& values) {
    auto os = io::detail::open_out(path);
    os << "x,y,value\n" << std::setprecision(17);
    for (std::size_t k = 0; k < layout.side(); ++k)
        for (std::size_t j = 0; j < layout.side(); ++j) {
            const Point p = layout.node(j, k);
            os << p.x << ',' << p.y << ',' << values[layout.index(j, k)] << '\n';
        }
}

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

/// Fireline band pixels of the ensemble-mean temperature, and how many of
/// them have a larger p-value for r_w than for w.
inline std::pair<std::size_t, std::size_t> fireline_comparison(const std::vector<ModelState>& states,
                                                               const std::vector<RegistrationRepState>& reps,
                                                               double level) {
    std::vector<ScalarField> w;
    std::vector<std::vector<double>> wv, rwv;
    for (std::size_t k = 0; k < states.size(); ++k) {
        w.push_back(states[k].w);
        wv.push_back(states[k].w.values());
        rwv.push_back(reps[k].r_w.values());
    }
    const auto band = contour_band(ensemble_mean(w), level);
    std::vector<std::vector<double>> wb(wv.size()), rb(rwv.size());
    for (std::size_t k = 0; k < wv.size(); ++k)
        for (std::size_t i : band) wb[k].push_back(wv[k][i]), rb[k].push_back(rwv[k][i]);
    std::size_t better = 0;
    if (!band.empty()) {
        const auto pw = pvalue_map(wb), prw = pvalue_map(rb);
        for (std::size_t i = 0; i < band.size(); ++i)
            if (prw.p[i] > pw.p[i]) ++better;
    }
    return {band.size(), better};
}

/// p-value maps, fireline comparison and probe densities of a forecast
/// ensemble and its registration representations.
inline void diagnose_cycle(const fs::path& dir, const RunConfig& c, const std::vector<ModelState>& forecast,
                           const std::vector<RegistrationRepState>& reps, CycleSummary& s) {
    std::vector<ScalarField> w, rw;
    std::vector<std::vector<double>> tx, ty;
    for (std::size_t k = 0; k < forecast.size(); ++k) {
        w.push_back(forecast[k].w);
        rw.push_back(reps[k].r_w);
        tx.push_back(reps[k].t.tx());
        ty.push_back(reps[k].t.ty());
    }
    std::vector<std::vector<double>> wv, rwv;
    for (std::size_t k = 0; k < w.size(); ++k) {
        wv.push_back(w[k].values());
        rwv.push_back(rw[k].values());
    }
    const auto pw = pvalue_map(wv), prw = pvalue_map(rwv), ptx = pvalue_map(tx), pty = pvalue_map(ty);
    const auto& g = forecast.front().w.geometry();
    io::save_field(dir / "pvalue_w.mkf", ScalarField(g, pw.clamped(), 1.0));
    io::save_field(dir / "pvalue_r_w.mkf", ScalarField(g, prw.clamped(), 1.0));
    write_node_csv(dir / "pvalue_tx.csv", reps.front().t, ptx.clamped());
    write_node_csv(dir / "pvalue_ty.csv", reps.front().t, pty.clamped());

    std::tie(s.fireline_pixels, s.fireline_rw_better) = fireline_comparison(forecast, reps, c.fireline_level);

    if (std::isnan(c.probe.x) || std::isnan(c.probe.y)) {
        const ScalarField var = ensemble_variance(w);
        const auto it = std::max_element(var.values().begin(), var.values().end());
        const auto i = static_cast<std::size_t>(it - var.values().begin());
        s.probe_j = i % g.nx;
        s.probe_k = i / g.nx;
    } else {
        s.probe_j = static_cast<std::size_t>(std::clamp(std::lround((c.probe.x - g.domain.x0) / g.hx()), 0L,
                                                        static_cast<long>(g.nx - 1)));
        s.probe_k = static_cast<std::size_t>(std::clamp(std::lround((c.probe.y - g.domain.y0) / g.hy()), 0L,
                                                        static_cast<long>(g.ny - 1)));
    }
    const std::size_t pi = g.index(s.probe_j, s.probe_k);
    const Warp& layout = reps.front().t;
    const Point pp = g.node(s.probe_j, s.probe_k);
    const auto nj = static_cast<std::size_t>(std::lround((pp.x - g.domain.x0) / layout.spacing_x()));
    const auto nk = static_cast<std::size_t>(std::lround((pp.y - g.domain.y0) / layout.spacing_y()));
    const std::size_t ni = layout.index(nj, nk);
    const auto pts = static_cast<std::size_t>(c.kde_points);
    auto density = [&](const std::vector<double>& samples, const std::string& name, double& bw) {
        if (!(sample_moments(samples).std > 0.0)) return;
        const auto curve = kde(samples, c.bandwidth_factor, pts);
        bw = curve.bandwidth;
        write_density(dir / ("kde_" + name + ".csv"), curve);
    };
    density(column(wv, pi), "w", s.bandwidth_w);
    density(column(rwv, pi), "r_w", s.bandwidth_rw);
    density(column(tx, ni), "tx", s.bandwidth_tx);
}

}  // namespace detail

/// Both fields of a state composed with I+T.
inline ModelState compose_state(const ModelState& s, const Warp& t) { return {compose(s.w, t), compose(s.z, t)}; }

/// Spun-up reference state: ignition followed by `spinup_seconds` of the
/// model with the spin-up wind.
inline ModelState spin_up(const RunConfig& c) {
    const auto g = c.geometry();
    FireModelParams p = c.fire;
    p.wind = c.spinup_wind;
    return advance(ignite(g, p, c.ignition_point(), c.ignition_half), p, c.spinup_seconds);
}

/// Full twin experiment. Writes under c.out; progress and timings go to `log`.
inline RunSummary run_experiment(const RunConfig& c, std::ostream* log = nullptr) {
    c.validate();
    const fs::path out(c.out);
    fs::create_directories(out);
    detail::write_text(out / "config.cfg", config_text(c));
    detail::Stopwatch clock;
    auto say = [&](const std::string& s) {
        if (log) *log << s << std::endl;
    };

    const int levels = c.filter.reg.levels;
    ModelState u0 = spin_up(c);
    say("spin-up: " + detail::fmt(clock.lap()) + " s");

    const auto n = static_cast<std::size_t>(c.members);
    const auto g = c.geometry();
    RunSummary summary;
    std::vector<RegistrationRepState> reps(n);
    std::vector<ModelState> members(n);
    {
        const ReferenceState ref(u0, levels);
        for (std::size_t k = 0; k < n; ++k) {
            SmoothFieldSpec sr{c.modes, c.amp_r, derive_seed(c.seed, 3 * k + 1)};
            SmoothFieldSpec sx{c.modes, c.amp_t, derive_seed(c.seed, 3 * k + 2)};
            SmoothFieldSpec sy{c.modes, c.amp_t, derive_seed(c.seed, 3 * k + 3)};
            auto ws = sample_invertible_warp(sx, sy, levels, c.domain, c.max_tries);
            summary.initial_warp_attempts += ws.attempts;
            reps[k] = {sample_field(sr, g), ScalarField(g, 0.0), std::move(ws.warp)};
            members[k] = from_registration_rep(reps[k], ref);
        }
    }
    ModelState truth = compose_state(u0, detail::truth_warp(c));
    const fs::path init = out / "initial";
    detail::write_checkpoint(init, members, reps);
    io::save_field(init / "reference_w.mkf", u0.w);
    io::save_field(init / "reference_z.mkf", u0.z);
    io::save_field(init / "data_w.mkf", truth.w);
    say("initial ensemble: " + detail::fmt(clock.lap()) + " s, " + std::to_string(summary.initial_warp_attempts) +
        " warp draws for " + std::to_string(n) + " members");

    std::vector<std::optional<Warp>> warm(n);
    for (std::size_t k = 0; k < n; ++k) warm[k] = reps[k].t;
    std::optional<Warp> data_warm;
    std::ostringstream report;
    for (int cycle = 1; cycle <= c.cycles; ++cycle) {
        const fs::path dir = out / detail::numbered("cycle_", static_cast<std::size_t>(cycle));
        std::vector<ModelState> forecast(n);
        try {
            parallel_for(n, c.filter.threads, [&](std::size_t k) { forecast[k] = run_cycle(members[k], c.fire); });
            u0 = run_cycle(u0, c.fire);
            truth = run_cycle(truth, c.fire);
            const double t_model = clock.lap();

            const ReferenceState ref(u0, levels);
            const auto seed = derive_seed(c.seed, 1'000'000 + static_cast<std::uint64_t>(cycle));
            auto res = morphing_analysis(forecast, ref, truth.w, c.filter, seed, warm, data_warm);
            const double t_analysis = clock.lap();

            CycleSummary s;
            s.cycle = cycle;
            s.forecast_distance = res.forecast_distance;
            s.analysis_distance = res.analysis_distance;
            for (std::size_t k = 0; k < n; ++k) {
                if (res.halvings[k] != 0) ++s.fallbacks;
                if (!is_invertible(res.analysis_reps[k].t)) ++s.non_invertible;
                s.node_visits += res.reports[k].node_visits;
            }
            s.node_visits += res.data_report.node_visits;

            fs::create_directories(dir);
            for (std::size_t k = 0; k < n; ++k)
                io::save_field(dir / (detail::numbered("forecast_", k) + "_w.mkf"), forecast[k].w);
            detail::write_checkpoint(dir, res.members, res.analysis_reps);
            io::save_field(dir / "reference_w.mkf", u0.w);
            io::save_field(dir / "data_w.mkf", truth.w);
            io::save_field(dir / "data_r_w.mkf", res.data_rep.r_w);
            io::save_warp(dir / "data_T.mkw", res.data_rep.t);
            std::string reg_text = "data\n" + res.data_report.to_text();
            for (std::size_t k = 0; k < n; ++k)
                reg_text += detail::numbered("member_", k) + "\n" + res.reports[k].to_text();
            detail::write_text(dir / "registration.txt", reg_text);
            std::string log_text;
            for (const auto& l : res.log) log_text += l + "\n";
            detail::write_text(dir / "analysis_log.txt", log_text);
            detail::diagnose_cycle(dir, c, forecast, res.forecast_reps, s);
            std::tie(s.analysis_fireline_pixels, s.analysis_fireline_rw_better) =
                detail::fireline_comparison(res.members, res.analysis_reps, c.fireline_level);
            const double t_diag = clock.lap();

            std::ostringstream line;
            line << "cycle=" << cycle << " forecast_distance=" << detail::fmt(s.forecast_distance)
                 << " analysis_distance=" << detail::fmt(s.analysis_distance) << " fallbacks=" << s.fallbacks
                 << " non_invertible=" << s.non_invertible << " node_visits=" << s.node_visits
                 << " fireline_pixels=" << s.fireline_pixels << " fireline_rw_better=" << s.fireline_rw_better
                 << " analysis_fireline_pixels=" << s.analysis_fireline_pixels
                 << " analysis_fireline_rw_better=" << s.analysis_fireline_rw_better
                 << " probe=" << s.probe_j << "," << s.probe_k << " bandwidth_w=" << detail::fmt(s.bandwidth_w)
                 << " bandwidth_r_w=" << detail::fmt(s.bandwidth_rw) << " bandwidth_tx=" << detail::fmt(s.bandwidth_tx)
                 << '\n';
            report << line.str();
            detail::write_text(dir / "summary.txt", line.str());
            say(line.str().substr(0, line.str().size() - 1));
            say("  timings: model " + detail::fmt(t_model) + " s, register+analyze " + detail::fmt(t_analysis) +
                " s, output+diagnostics " + detail::fmt(t_diag) + " s");

            members = std::move(res.members);
            for (std::size_t k = 0; k < n; ++k) warm[k] = res.analysis_reps[k].t;
            reps = std::move(res.analysis_reps);
            data_warm = res.data_rep.t;
            summary.cycles.push_back(s);
        } catch (const Error& e) {
            const fs::path keep = out / "last_good";
            detail::write_checkpoint(keep, members, reps);
            detail::write_text(keep / "error.txt", "cycle " + std::to_string(cycle) + ": " + e.what() + "\n");
            throw;
        }
    }
    detail::write_text(out / "report.txt", report.str());
    return summary;
}

/// Registers v against u and writes u_lambda for `steps` equispaced lambda.
inline std::vector<ScalarField> demo_morph(const ScalarField& u, const ScalarField& v, int steps,
                                           const RegistrationConfig& cfg, RegistrationReport* report = nullptr) {
    if (steps < 2) throw ConfigError("demo-morph: steps must be at least 2");
    auto reg = register_fields(u, v, std::nullopt, cfg);
    if (report) *report = reg.report;
    const MorphPair pair = make_morph_pair(u, v, reg.warp);
    std::vector<ScalarField> out;
    for (int i = 0; i < steps; ++i) out.push_back(morph(pair, static_cast<double>(i) / static_cast<double>(steps - 1)));
    return out;
}

/// A manifest entry of a checkpoint directory.
struct ManifestEntry {
    std::size_t member = 0;
    std::string w, z, t, r_w;
};

inline std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) throw ConfigError("no manifest.txt in " + dir.string());
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string tok;
        bool have_member = false;
        while (ls >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) throw ConfigError("manifest: malformed token '" + tok + "'");
            const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
            if (k == "member") e.member = std::stoul(v), have_member = true;
            else if (k == "w") e.w = v;
            else if (k == "z") e.z = v;
            else if (k == "T") e.t = v;
            else if (k == "r_w") e.r_w = v;
            else throw ConfigError("manifest: unknown key '" + k + "'");
        }
        if (!have_member || e.w.empty() || e.r_w.empty() || e.t.empty())
            throw ConfigError("manifest: incomplete line '" + line + "'");
        out.push_back(e);
    }
    if (out.size() < 3) throw ConfigError("manifest: at least 3 members required");
    return out;
}

struct DiagnoseSummary {
    std::size_t members = 0;
    std::size_t degenerate_w = 0, degenerate_rw = 0;
    double median_p_w = 0.0, median_p_rw = 0.0;
};

/// p-value maps of w, r_w and the warp components of a checkpoint.
inline DiagnoseSummary diagnose_checkpoint(const fs::path& dir, const fs::path& out) {
    const auto entries = read_manifest(dir);
    std::vector<std::vector<double>> w, rw, tx, ty;
    std::optional<GridGeometry> g;
    std::optional<Warp> layout;
    for (const auto& e : entries) {
        const ScalarField fw = io::load_field(dir / e.w), fr = io::load_field(dir / e.r_w);
        if (!g) g = fw.geometry();
        if (fw.geometry() != *g || fr.geometry() != *g) throw ConfigError("diagnose: member geometries differ");
        const Warp t = io::load_warp(dir / e.t, g->domain);
        if (!layout) layout = t;
        if (t.level() != layout->level()) throw ConfigError("diagnose: warp levels differ");
        w.push_back(fw.values());
        rw.push_back(fr.values());
        tx.push_back(t.tx());
        ty.push_back(t.ty());
    }
    const auto pw = pvalue_map(w), prw = pvalue_map(rw);
    fs::create_directories(out);
    io::save_field(out / "pvalue_w.mkf", ScalarField(*g, pw.clamped(), 1.0));
    io::save_field(out / "pvalue_r_w.mkf", ScalarField(*g, prw.clamped(), 1.0));
    io::save_csv(out / "pvalue_w.csv", ScalarField(*g, pw.clamped(), 1.0));
    io::save_csv(out / "pvalue_r_w.csv", ScalarField(*g, prw.clamped(), 1.0));
    detail::write_node_csv(out / "pvalue_tx.csv", *layout, pvalue_map(tx).clamped());
    detail::write_node_csv(out / "pvalue_ty.csv", *layout, pvalue_map(ty).clamped());
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    return {entries.size(), pw.degenerate_count(), prw.degenerate_count(), median(pw.p), median(prw.p)};
}

}  // namespace morphenkf

#pragma once

// Run configuration in flat `key = value` form with dotted section prefixes.
// Lines starting with '#' are comments. Unknown keys are rejected.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"
#include "morphenkf/firemodel.hpp"
#include "morphenkf/morphing_enkf.hpp"
#include "morphenkf/registration.hpp"

namespace morphenkf {

struct RunConfig {
    // grid
    std::size_t nx = 125, ny = 125;
    Domain domain{0.0, 0.0, 250.0, 250.0};
    // model
    FireModelParams fire;
    double spinup_seconds = 360.0;
    Point spinup_wind{0.02, 0.0};
    Point ignition{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};  // NaN: center
    double ignition_half = 5.0;
    // filter
    MorphingEnkfConfig filter;
    // ensemble
    int members = 50;
    double amp_r = 50.0;  // K
    double amp_t = 5.0;   // m
    int modes = 10;
    int max_tries = 1000;
    // simulated truth: shift * sin(pi x) sin(pi y) in normalized coordinates
    Point truth_shift{10.0, 5.0};
    // run
    int cycles = 5;
    std::uint64_t seed = 1;
    std::string out = "out";
    Point probe{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};  // NaN: auto
    double bandwidth_factor = 0.3;
    int kde_points = 401;
    double fireline_level = 800.0;  // K

    [[nodiscard]] GridGeometry geometry() const { return GridGeometry(nx, ny, domain); }

    [[nodiscard]] Point ignition_point() const {
        if (std::isnan(ignition.x) || std::isnan(ignition.y))
            return {domain.x0 + 0.5 * domain.lx, domain.y0 + 0.5 * domain.ly};
        return ignition;
    }

    void validate() const {
        const auto g = geometry();
        fire.validate(g);
        FireModelParams spin = fire;
        spin.wind = spinup_wind;
        spin.validate(g);
        filter.validate();
        if (members < 2) throw ConfigError("ensemble.members must be at least 2");
        if (cycles < 0) throw ConfigError("run.cycles must be non-negative");
        if (!(spinup_seconds >= 0.0)) throw ConfigError("spinup.seconds must be non-negative");
        if (!(amp_r >= 0.0) || !(amp_t >= 0.0)) throw ConfigError("ensemble amplitudes must be non-negative");
        if (modes < 1) throw ConfigError("ensemble.modes must be at least 1");
        if (max_tries < 1) throw ConfigError("ensemble.max_tries must be at least 1");
        if (!(bandwidth_factor > 0.0)) throw ConfigError("diag.bandwidth_factor must be positive");
        if (kde_points < 2) throw ConfigError("diag.kde_points must be at least 2");
        if (out.empty()) throw ConfigError("run.out must not be empty");
        if (!domain.contains(ignition_point())) throw ConfigError("spinup ignition point outside the domain");
    }
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw ConfigError("config: " + key + " expects true/false, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        if constexpr (std::is_floating_point_v<T>) {
            if (text == "nan" || text == "auto") return std::numeric_limits<T>::quiet_NaN();
        }
        if (!(is >> v) || !(is >> std::ws).eof())
            throw ConfigError("config: " + key + " has invalid value '" + text + "'");
        if constexpr (std::is_unsigned_v<T>) {
            if (text.find('-') != std::string::npos) throw ConfigError("config: " + key + " must be non-negative");
        }
    }
    return v;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
std::string show(const T& v) {
    std::ostringstream os;
    if constexpr (std::is_same_v<T, bool>)
        os << (v ? "true" : "false");
    else if constexpr (std::is_floating_point_v<T>)
        os << std::setprecision(17) << v;
    else
        os << v;
    return os.str();
}

}  // namespace detail

/// Key table binding config keys to RunConfig members.
class ConfigBinder {
public:
    explicit ConfigBinder(RunConfig& c) {
        bind("grid.nx", c.nx);
        bind("grid.ny", c.ny);
        bind("grid.x0", c.domain.x0);
        bind("grid.y0", c.domain.y0);
        bind("grid.lx", c.domain.lx);
        bind("grid.ly", c.domain.ly);
        bind("fire.k_diff", c.fire.k_diff);
        bind("fire.wind_x", c.fire.wind.x);
        bind("fire.wind_y", c.fire.wind.y);
        bind("fire.w_ambient", c.fire.w_ambient);
        bind("fire.w_ignition", c.fire.w_ignition);
        bind("fire.A", c.fire.heat_rate);
        bind("fire.B", c.fire.activation);
        bind("fire.C", c.fire.fuel_rate);
        bind("fire.gamma", c.fire.cooling);
        bind("fire.dt", c.fire.dt);
        bind("fire.cycle_len", c.fire.cycle_len);
        bind("spinup.seconds", c.spinup_seconds);
        bind("spinup.wind_x", c.spinup_wind.x);
        bind("spinup.wind_y", c.spinup_wind.y);
        bind("spinup.ignition_x", c.ignition.x);
        bind("spinup.ignition_y", c.ignition.y);
        bind("spinup.ignition_half", c.ignition_half);
        bind("reg.M", c.filter.reg.levels);
        bind("reg.C1", c.filter.reg.c1);
        bind("reg.C2", c.filter.reg.c2);
        bind("reg.max_sweeps", c.filter.reg.max_sweeps);
        bind("reg.rel_improvement_tol", c.filter.reg.rel_improvement_tol);
        bind("reg.residual_inf_tol", c.filter.reg.residual_inf_tol);
        bind("reg.search_points_per_segment", c.filter.reg.search_points_per_segment);
        bind("reg.coord_descent_iters", c.filter.reg.coord_descent_iters);
        bind("enkf.sigma_r", c.filter.sigma_r);
        bind("enkf.sigma_t", c.filter.sigma_t);
        bind("enkf.assimilate_fuel", c.filter.assimilate_fuel);
        bind("enkf.max_halvings", c.filter.max_halvings);
        bind("ensemble.members", c.members);
        bind("ensemble.amp_r", c.amp_r);
        bind("ensemble.amp_t", c.amp_t);
        bind("ensemble.modes", c.modes);
        bind("ensemble.max_tries", c.max_tries);
        bind("truth.shift_x", c.truth_shift.x);
        bind("truth.shift_y", c.truth_shift.y);
        bind("run.cycles", c.cycles);
        bind("run.seed", c.seed);
        bind("run.out", c.out);
        bind("run.threads", c.filter.threads);
        bind("diag.probe_x", c.probe.x);
        bind("diag.probe_y", c.probe.y);
        bind("diag.bandwidth_factor", c.bandwidth_factor);
        bind("diag.kde_points", c.kde_points);
        bind("diag.fireline_level", c.fireline_level);
    }

    void set(const std::string& key, const std::string& value) {
        auto it = setters_.find(key);
        if (it == setters_.end()) throw ConfigError("config: unknown key '" + key + "'");
        it->second.first(value);
    }

    /// All keys with their current values, one `key = value` line each.
    [[nodiscard]] std::string dump() const {
        std::string s;
        for (const auto& [k, f] : setters_) s += k + " = " + f.second() + "\n";
        return s;
    }

private:
    template <class T>
    void bind(const std::string& key, T& field) {
        setters_[key] = {[&field, key](const std::string& v) { field = detail::parse_value<T>(key, v); },
                         [&field] { return detail::show(field); }};
    }

    std::map<std::string, std::pair<std::function<void(const std::string&)>, std::function<std::string()>>> setters_;
};

/// Applies `key = value` lines to `c`.
inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& source = "config") {
    ConfigBinder b(c);
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key or value");
        try {
            b.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    RunConfig c;
    apply_config_text(c, ss.str(), path.string());
    return c;
}

inline std::string config_text(const RunConfig& c) {
    RunConfig copy = c;
    return ConfigBinder(copy).dump();
}

}  // namespace morphenkf

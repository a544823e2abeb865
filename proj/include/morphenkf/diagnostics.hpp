#pragma once

// Ensemble diagnostics: Gaussian kernel density estimates, Anderson-Darling
// normality p-values per grid point, and simple error metrics.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <vector>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"

namespace morphenkf {

using SampleSet = std::vector<double>;

struct SampleMoments {
    double mean = 0.0;
    double std = 0.0;  // divisor N-1
};

inline SampleMoments sample_moments(const SampleSet& s) {
    if (s.size() < 2) throw ConfigError("sample moments need at least 2 values");
    SampleMoments m;
    m.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    double ss = 0.0;
    for (double v : s) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(s.size() - 1));
    return m;
}

struct DensityCurve {
    std::vector<double> x;
    std::vector<double> density;
    double bandwidth = 0.0;
};

/// Gaussian kernel density estimate with bandwidth factor * sample std.
inline DensityCurve kde(const SampleSet& samples, double bandwidth_factor, const std::vector<double>& eval_points) {
    if (!(bandwidth_factor > 0.0)) throw ConfigError("kde: bandwidth factor must be positive");
    const double sd = sample_moments(samples).std;
    if (!(sd > 0.0)) throw NumericalError("kde: samples have zero variance");
    DensityCurve c{eval_points, std::vector<double>(eval_points.size(), 0.0), bandwidth_factor * sd};
    const double h = c.bandwidth;
    const double norm_c = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t i = 0; i < eval_points.size(); ++i) {
        double acc = 0.0;
        for (double s : samples) {
            const double z = (eval_points[i] - s) / h;
            acc += std::exp(-0.5 * z * z);
        }
        c.density[i] = norm_c * acc;
    }
    return c;
}

/// KDE on `points` equispaced nodes covering the samples plus 5 bandwidths.
inline DensityCurve kde(const SampleSet& samples, double bandwidth_factor = 0.3, std::size_t points = 401) {
    if (points < 2) throw ConfigError("kde: need at least 2 evaluation points");
    const double sd = sample_moments(samples).std;
    if (!(sd > 0.0)) throw NumericalError("kde: samples have zero variance");
    const double h = bandwidth_factor * sd;
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *mn - 5.0 * h, hi = *mx + 5.0 * h;
    std::vector<double> x(points);
    for (std::size_t i = 0; i < points; ++i) x[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return kde(samples, bandwidth_factor, x);
}

struct NormalityTest {
    double a2 = 0.0;       // A^2 before the small-sample correction
    double p_value = 0.0;
    bool degenerate = false;  // zero variance; p reported as 0
};

namespace detail {

// log Phi(z) and log(1 - Phi(z)) without cancellation in the tails.
inline double log_normal_cdf(double z) { return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2)); }
inline double log_normal_sf(double z) { return std::log(0.5 * std::erfc(z / std::numbers::sqrt2)); }

// Piecewise-exponential p-value for the corrected statistic (D'Agostino and
// Stephens). The top branch has its minimum at a = 5.709/0.0372 and is held
// constant beyond it so that p stays non-increasing in a.
inline double ad_p_value(double a) {
    if (a >= 0.6) {
        const double a_min = 5.709 / (2.0 * 0.0186);
        const double b = std::min(a, a_min);
        return std::exp(1.2937 - 5.709 * b + 0.0186 * b * b);
    }
    if (a >= 0.34) return std::exp(0.9177 - 4.279 * a - 1.38 * a * a);
    if (a >= 0.2) return 1.0 - std::exp(-8.318 + 42.796 * a - 59.938 * a * a);
    return 1.0 - std::exp(-13.436 + 101.14 * a - 223.73 * a * a);
}

}  // namespace detail

/// Anderson-Darling test for normality with estimated mean and variance.
inline NormalityTest anderson_darling(const SampleSet& samples) {
    const std::size_t n = samples.size();
    if (n < 3) throw ConfigError("anderson_darling: need at least 3 samples");
    for (double v : samples)
        if (!std::isfinite(v)) throw NumericalError("anderson_darling: non-finite sample");
    const auto m = sample_moments(samples);
    NormalityTest r;
    if (!(m.std > 0.0) || !(m.std > 1e-14 * std::abs(m.mean))) {
        r.degenerate = true;
        r.p_value = 0.0;
        r.a2 = std::numeric_limits<double>::infinity();
        return r;
    }
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = (samples[i] - m.mean) / m.std;
    std::stable_sort(z.begin(), z.end());
    const double nd = static_cast<double>(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        s += (2.0 * static_cast<double>(i) + 1.0) * (detail::log_normal_cdf(z[i]) + detail::log_normal_sf(z[n - 1 - i]));
    r.a2 = -nd - s / nd;
    const double corrected = r.a2 * (1.0 + 0.75 / nd + 2.25 / (nd * nd));
    r.p_value = std::clamp(detail::ad_p_value(corrected), 0.0, 1.0);
    return r;
}

inline double anderson_darling_p(const SampleSet& samples) { return anderson_darling(samples).p_value; }

/// Per-point p-values of an ensemble quantity given as `points` sample sets.
struct PValueMap {
    std::vector<double> p;          // raw p-values
    std::vector<bool> degenerate;   // zero-variance points
    [[nodiscard]] std::vector<double> clamped(double floor = 1e-8) const {
        std::vector<double> out(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::clamp(p[i], floor, 1.0);
        return out;
    }
    [[nodiscard]] std::size_t degenerate_count() const {
        return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), true));
    }
};

/// `members[k][i]` is member k's value at point i.
inline PValueMap pvalue_map(const std::vector<std::vector<double>>& members) {
    if (members.size() < 3) throw ConfigError("pvalue_map: need at least 3 members");
    const std::size_t points = members.front().size();
    for (const auto& m : members)
        if (m.size() != points) throw ConfigError("pvalue_map: members differ in size");
    PValueMap map{std::vector<double>(points), std::vector<bool>(points)};
    SampleSet s(members.size());
    for (std::size_t i = 0; i < points; ++i) {
        for (std::size_t k = 0; k < members.size(); ++k) s[k] = members[k][i];
        const auto t = anderson_darling(s);
        map.p[i] = t.p_value;
        map.degenerate[i] = t.degenerate;
    }
    return map;
}

/// p-value field of an ensemble of fields, clamped to [1e-8, 1] for
/// log-scale display.
inline ScalarField pvalue_field(const std::vector<ScalarField>& members) {
    if (members.empty()) throw ConfigError("pvalue_field: empty ensemble");
    std::vector<std::vector<double>> values;
    values.reserve(members.size());
    for (const auto& m : members) {
        if (m.geometry() != members.front().geometry()) throw ConfigError("pvalue_field: members differ in geometry");
        values.push_back(m.values());
    }
    return ScalarField(members.front().geometry(), pvalue_map(values).clamped(), 1.0);
}

/// Node-wise ensemble mean.
inline ScalarField ensemble_mean(const std::vector<ScalarField>& members) {
    if (members.empty()) throw ConfigError("ensemble_mean: empty ensemble");
    ScalarField m(members.front().geometry(), 0.0);
    for (const auto& f : members) m = add_scaled(m, 1.0, f);
    const double inv = 1.0 / static_cast<double>(members.size());
    for (double& v : m.values()) v *= inv;
    m.set_boundary_value(m.boundary_value() * inv);
    return m;
}

/// Node-wise unbiased ensemble variance.
inline ScalarField ensemble_variance(const std::vector<ScalarField>& members) {
    if (members.size() < 2) throw ConfigError("ensemble_variance: need at least 2 members");
    const ScalarField mean = ensemble_mean(members);
    ScalarField var(mean.geometry(), 0.0);
    for (const auto& f : members)
        for (std::size_t i = 0; i < var.values().size(); ++i) {
            const double d = f.values()[i] - mean.values()[i];
            var.values()[i] += d * d;
        }
    for (double& v : var.values()) v /= static_cast<double>(members.size() - 1);
    return var;
}

/// Root-mean-square node-wise difference.
inline double rms_difference(const ScalarField& a, const ScalarField& b) {
    if (a.geometry() != b.geometry()) throw ConfigError("rms_difference: geometry mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.values().size()));
}

/// Pixels whose 3x3 neighbourhood in `f` straddles `level` (the contour band).
inline std::vector<std::size_t> contour_band(const ScalarField& f, double level) {
    const auto& g = f.geometry();
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            double lo = f(j, k), hi = f(j, k);
            for (std::size_t kk = (k == 0 ? 0 : k - 1); kk <= std::min(k + 1, g.ny - 1); ++kk)
                for (std::size_t jj = (j == 0 ? 0 : j - 1); jj <= std::min(j + 1, g.nx - 1); ++jj) {
                    lo = std::min(lo, f(jj, kk));
                    hi = std::max(hi, f(jj, kk));
                }
            if (lo < level && hi >= level) out.push_back(g.index(j, k));
        }
    return out;
}

}  // namespace morphenkf

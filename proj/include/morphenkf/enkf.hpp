#pragma once

// Stochastic ensemble Kalman filter analysis with perturbed observations
// (Burgers, van Leeuwen and Evensen, 1998). Ensembles are S x N matrices
// with one member per column.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "morphenkf/error.hpp"

namespace morphenkf {

using StateVector = Eigen::VectorXd;
using EnsembleMatrix = Eigen::MatrixXd;

/// Row-sparse linear observation operator H with data and diagonal
/// Gaussian error.
struct ObservationSpec {
    struct Term {
        std::size_t column;
        double weight;
    };
    std::vector<std::vector<Term>> rows;
    Eigen::VectorXd data;
    Eigen::VectorXd noise_std;

    [[nodiscard]] std::size_t size() const { return rows.size(); }

    /// Observes the given state entries directly.
    static ObservationSpec selection(const std::vector<std::size_t>& columns, Eigen::VectorXd data,
                                     Eigen::VectorXd noise_std) {
        ObservationSpec o;
        o.rows.reserve(columns.size());
        for (auto c : columns) o.rows.push_back({{c, 1.0}});
        o.data = std::move(data);
        o.noise_std = std::move(noise_std);
        return o;
    }

    void validate(std::size_t state_size) const {
        if (rows.empty()) throw ConfigError("observation: at least one observation required");
        if (static_cast<std::size_t>(data.size()) != rows.size() || static_cast<std::size_t>(noise_std.size()) != rows.size())
            throw ConfigError("observation: data and noise sizes must match the operator");
        for (Eigen::Index i = 0; i < noise_std.size(); ++i)
            if (!(noise_std[i] > 0.0)) throw ConfigError("observation: noise standard deviations must be positive");
        for (const auto& r : rows)
            for (const auto& t : r)
                if (t.column >= state_size) throw ConfigError("observation: operator column out of range");
    }

    /// H applied to every column of X.
    [[nodiscard]] Eigen::MatrixXd apply(const EnsembleMatrix& x) const {
        Eigen::MatrixXd hx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), x.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (const auto& t : rows[i]) hx.row(static_cast<Eigen::Index>(i)) += t.weight * x.row(static_cast<Eigen::Index>(t.column));
        return hx;
    }
};

struct EnsembleStats {
    StateVector mean;
    StateVector variance;  // unbiased, divisor N-1
};

inline EnsembleStats ensemble_stats(const EnsembleMatrix& x) {
    if (x.cols() < 2) throw ConfigError("ensemble_stats: need at least 2 members");
    EnsembleStats s;
    s.mean = x.rowwise().mean();
    const EnsembleMatrix a = x.colwise() - s.mean;
    s.variance = a.rowwise().squaredNorm() / static_cast<double>(x.cols() - 1);
    return s;
}

/// Analysis ensemble u_k + K (d + eps_k - H u_k) with the ensemble gain
/// K = A (HA)^T [(HA)(HA)^T + (N-1) R]^{-1}, eps_k ~ N(0, R), R diagonal.
/// Deterministic for a given seed.
inline EnsembleMatrix analyze(const EnsembleMatrix& x, const ObservationSpec& obs, std::uint64_t seed) {
    const auto n = x.cols();
    if (n < 2) throw ConfigError("analyze: need at least 2 members");
    obs.validate(static_cast<std::size_t>(x.rows()));
    const auto d = static_cast<Eigen::Index>(obs.size());

    const StateVector mean = x.rowwise().mean();
    const EnsembleMatrix anomalies = x.colwise() - mean;
    const Eigen::MatrixXd hx = obs.apply(x);
    const Eigen::MatrixXd y = hx.colwise() - hx.rowwise().mean();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd innovation(d, n);
    for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index i = 0; i < d; ++i) innovation(i, k) = obs.data[i] + obs.noise_std[i] * normal(rng) - hx(i, k);

    const Eigen::VectorXd r_scaled = static_cast<double>(n - 1) * obs.noise_std.array().square().matrix();
    Eigen::MatrixXd z;  // [Y Y^T + (N-1) R]^{-1} innovation
    if (d <= n) {
        Eigen::MatrixXd m = y * y.transpose();
        m.diagonal() += r_scaled;
        m.diagonal().array() += 1e-12 * m.trace();
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() != Eigen::Success) throw NumericalError("analyze: observation covariance not positive definite");
        z = llt.solve(innovation);
    } else {
        // Woodbury identity with C = (N-1) R diagonal:
        // (Y Y^T + C)^{-1} = C^{-1} - C^{-1} Y (I + Y^T C^{-1} Y)^{-1} Y^T C^{-1}
        const Eigen::VectorXd c_inv = r_scaled.cwiseInverse();
        const Eigen::MatrixXd ci_y = c_inv.asDiagonal() * y;
        const Eigen::MatrixXd ci_innov = c_inv.asDiagonal() * innovation;
        Eigen::MatrixXd w = y.transpose() * ci_y;
        w.diagonal().array() += 1.0;
        Eigen::LLT<Eigen::MatrixXd> llt(w);
        if (llt.info() != Eigen::Success) throw NumericalError("analyze: ensemble-space system not positive definite");
        z = ci_innov - ci_y * llt.solve(y.transpose() * ci_innov);
    }
    return x + anomalies * (y.transpose() * z);
}

}  // namespace morphenkf

#include <gtest/gtest.h>

#include <random>

#include "morphenkf/enkf.hpp"

using namespace morphenkf;

namespace {

EnsembleMatrix random_ensemble(Eigen::Index s, Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, scale);
    EnsembleMatrix x(s, n);
    for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index i = 0; i < s; ++i) x(i, k) = z(rng) + static_cast<double>(i);
    return x;
}

// Dense gain P H^T (H P H^T + R)^{-1} from the sample covariance, with H
// given as a dense matrix.
Eigen::MatrixXd dense_gain(const EnsembleMatrix& x, const Eigen::MatrixXd& h, const Eigen::VectorXd& sd) {
    const double n = static_cast<double>(x.cols());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.rows());
    for (Eigen::Index k = 0; k < x.cols(); ++k) mean += x.col(k);
    mean /= n;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(x.rows(), x.rows());
    for (Eigen::Index k = 0; k < x.cols(); ++k) p += (x.col(k) - mean) * (x.col(k) - mean).transpose();
    p /= n - 1.0;
    Eigen::MatrixXd s = h * p * h.transpose();
    for (Eigen::Index i = 0; i < sd.size(); ++i) s(i, i) += sd[i] * sd[i];
    return p * h.transpose() * s.inverse();
}

}  // namespace

TEST(EnsembleStats, TwoPointSample) {
    EnsembleMatrix x(2, 2);
    x << 3.0, -3.0, 0.5, -0.5;
    const auto s = ensemble_stats(x);
    EXPECT_EQ(s.mean[0], 0.0);
    EXPECT_EQ(s.variance[0], 18.0);
    EXPECT_EQ(s.variance[1], 0.5);
}

TEST(EnsembleStats, MatchesTwoPassOracle) {
    const auto x = random_ensemble(5, 3, 11);
    const auto s = ensemble_stats(x);
    for (Eigen::Index i = 0; i < 5; ++i) {
        double m = 0.0;
        for (Eigen::Index k = 0; k < 3; ++k) m += x(i, k);
        m /= 3.0;
        double v = 0.0;
        for (Eigen::Index k = 0; k < 3; ++k) v += (x(i, k) - m) * (x(i, k) - m);
        v /= 2.0;
        EXPECT_NEAR(s.mean[i], m, 1e-14);
        EXPECT_NEAR(s.variance[i], v, 1e-13);
    }
}

TEST(EnsembleStats, IdenticalMembersHaveZeroVariance) {
    EnsembleMatrix x = EnsembleMatrix::Constant(4, 6, 2.5);
    EXPECT_EQ(ensemble_stats(x).variance.norm(), 0.0);
    EXPECT_THROW(ensemble_stats(EnsembleMatrix::Zero(3, 1)), ConfigError);
}

TEST(Analyze, IdenticalMembersAreUnchanged) {
    EnsembleMatrix x(3, 4);
    for (Eigen::Index k = 0; k < 4; ++k) x.col(k) << 1.0, 2.0, 3.0;
    const auto obs = ObservationSpec::selection({0, 2}, Eigen::Vector2d(10.0, -4.0), Eigen::Vector2d(1.0, 1.0));
    EXPECT_EQ(analyze(x, obs, 5), x);
}

TEST(Analyze, VanishingGainForHugeNoise) {
    const auto x = random_ensemble(6, 8, 2);
    const double big = 1e8 * (x.colwise() - x.rowwise().mean()).norm();
    const auto obs = ObservationSpec::selection({1, 3}, Eigen::Vector2d(50.0, 60.0), Eigen::Vector2d(big, big));
    const auto xa = analyze(x, obs, 3);
    EXPECT_LE((xa - x).norm(), 1e-6 * x.norm());
}

TEST(Analyze, GainMatchesDenseFormula) {
    // Same seed, two data vectors: member increments differ by K (d1 - d2).
    for (const Eigen::Index nobs : {Eigen::Index{3}, Eigen::Index{9}}) {  // Cholesky and Woodbury paths
        const Eigen::Index s = 10, n = 6;
        const auto x = random_ensemble(s, n, 7);
        std::vector<std::size_t> cols;
        for (Eigen::Index i = 0; i < nobs; ++i) cols.push_back(static_cast<std::size_t>(i));
        Eigen::VectorXd sd(nobs), d1(nobs), d2(nobs);
        for (Eigen::Index i = 0; i < nobs; ++i) {
            sd[i] = 0.5 + 0.1 * static_cast<double>(i);
            d1[i] = 1.0 + static_cast<double>(i);
            d2[i] = d1[i] + (i % 2 == 0 ? 2.0 : -1.0);
        }
        const auto a1 = analyze(x, ObservationSpec::selection(cols, d1, sd), 99);
        const auto a2 = analyze(x, ObservationSpec::selection(cols, d2, sd), 99);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nobs, s);
        for (Eigen::Index i = 0; i < nobs; ++i) h(i, i) = 1.0;
        const Eigen::VectorXd expected = dense_gain(x, h, sd) * (d1 - d2);
        for (Eigen::Index k = 0; k < n; ++k)
            EXPECT_LT((a1.col(k) - a2.col(k) - expected).norm(), 1e-9 * (1.0 + expected.norm())) << "nobs " << nobs;
    }
}

TEST(Analyze, WeightedRowsActAsLinearOperator) {
    const auto x = random_ensemble(4, 5, 8);
    ObservationSpec obs;
    obs.rows = {{{0, 0.5}, {3, 0.5}}};
    obs.noise_std = Eigen::VectorXd::Constant(1, 0.3);
    obs.data = Eigen::VectorXd::Constant(1, 1.0);
    ObservationSpec obs2 = obs;
    obs2.data[0] = 3.0;
    const auto a1 = analyze(x, obs, 4), a2 = analyze(x, obs2, 4);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(1, 4);
    h(0, 0) = 0.5;
    h(0, 3) = 0.5;
    const Eigen::VectorXd expected = dense_gain(x, h, obs.noise_std) * (-2.0);
    EXPECT_LT((a1.col(0) - a2.col(0) - expected).norm(), 1e-10);
}

TEST(Analyze, IncrementsLieInAnomalySpan) {
    const auto x = random_ensemble(12, 5, 9);
    const auto obs = ObservationSpec::selection({0, 4, 8}, Eigen::Vector3d(3.0, 1.0, 9.0), Eigen::Vector3d(1.0, 2.0, 0.5));
    const auto xa = analyze(x, obs, 10);
    const EnsembleMatrix a = x.colwise() - x.rowwise().mean();
    const EnsembleMatrix inc = xa - x;
    const Eigen::MatrixXd coef = a.colPivHouseholderQr().solve(inc);
    EXPECT_LT((a * coef - inc).norm(), 1e-9 * inc.norm());
}

TEST(Analyze, DeterministicForSeed) {
    const auto x = random_ensemble(7, 4, 12);
    const auto obs = ObservationSpec::selection({2}, Eigen::VectorXd::Constant(1, 4.0), Eigen::VectorXd::Constant(1, 1.0));
    const auto a = analyze(x, obs, 42), b = analyze(x, obs, 42), c = analyze(x, obs, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(Analyze, ScalarCaseApproachesKalmanPosterior) {
    // Prior N(0, 1), datum 2 with unit error: posterior mean 1, variance 1/2.
    const Eigen::Index n = 10000;
    EnsembleMatrix x(1, n);
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> z(0.0, 1.0);
    for (Eigen::Index k = 0; k < n; ++k) x(0, k) = z(rng);
    const auto obs = ObservationSpec::selection({0}, Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0));
    const auto s = ensemble_stats(analyze(x, obs, 1));
    EXPECT_NEAR(s.mean[0], 1.0, 0.05);
    EXPECT_NEAR(s.variance[0], 0.5, 0.025);
}

TEST(Analyze, RejectsInvalidInput) {
    const auto x = random_ensemble(3, 4, 1);
    EXPECT_THROW(analyze(x.leftCols(1), ObservationSpec::selection({0}, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)), 1),
                 ConfigError);
    EXPECT_THROW(analyze(x, ObservationSpec::selection({5}, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)), 1),
                 ConfigError);
    EXPECT_THROW(analyze(x, ObservationSpec::selection({0}, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)), 1),
                 ConfigError);
    EXPECT_THROW(analyze(x, ObservationSpec::selection({}, Eigen::VectorXd(), Eigen::VectorXd()), 1), ConfigError);
}

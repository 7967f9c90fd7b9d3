#pragma once

#include "evdro/arima.hpp"
#include "evdro/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <vector>

namespace evdro {

inline constexpr double kEpsSigma = 1e-8;

// Moment-based uncertainty set for the forecast error delta:
//   (E[delta] - 0)' Sigma^{-1} (E[delta]) <= gamma1,  E[delta delta'] <= gamma2 * Sigma,
// shifted to live around `center` (the point forecast).
struct AmbiguitySet {
    Vec center;
    Mat Sigma;
    Mat sigma_sqrt;  // cached symmetric square root of Sigma
    double gamma1 = 0.0;
    double gamma2 = 1.0;
    double alpha = 0.25;

    long dim() const { return center.size(); }
};

struct BootstrapConfig {
    int NB = 200;
    double alpha = 0.25;
    std::uint64_t seed = 0;
};

namespace detail {

inline Mat symmetric_sqrt(const Mat& S) {
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    const Vec lam = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline Mat symmetric_inv_sqrt(const Mat& S) {
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    const Vec lam = es.eigenvalues();
    if (lam.minCoeff() <= 0.0)
        throw DomainError("symmetric_inv_sqrt: matrix is not positive definite");
    return es.eigenvectors() * lam.cwiseInverse().cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

// sample mean / covariance (divisor M-1) of the rows of a matrix
inline void row_moments(const Mat& rows, Vec& mu, Mat& cov) {
    const long M = rows.rows();
    mu = rows.colwise().mean();
    const Mat centered = rows.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(M - 1);
}

// empirical q-quantile of a sample (smallest order statistic with cdf >= q)
inline double empirical_quantile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    const auto n = static_cast<long>(xs.size());
    long idx = static_cast<long>(std::ceil(q * static_cast<double>(n))) - 1;
    idx = std::clamp<long>(idx, 0, n - 1);
    return xs[static_cast<size_t>(idx)];
}

}  // namespace detail

inline std::pair<Vec, Mat> estimate_moments(const ResidualSample& residuals) {
    const long M = residuals.deltas.rows();
    const long n = residuals.deltas.cols();
    if (M < 2) throw DataError("estimate_moments: need at least 2 residual rows");
    Vec mu;
    Mat cov;
    detail::row_moments(residuals.deltas, mu, cov);
    // regularize so Sigma^{-1} always exists; scale with the average variance
    const double scale = std::max(1.0, cov.trace() / static_cast<double>(n));
    cov += kEpsSigma * scale * Mat::Identity(n, n);
    return {mu, cov};
}

inline std::pair<double, double> bootstrap_thresholds(const ResidualSample& residuals,
                                                      const BootstrapConfig& cfg) {
    if (cfg.NB < 10) throw DomainError("bootstrap_thresholds: NB must be >= 10");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw DomainError("bootstrap_thresholds: alpha must lie in (0,1)");
    const long M = residuals.deltas.rows();
    if (M < 2) throw DataError("bootstrap_thresholds: need at least 2 residual rows");
    if (M < 30)
        std::cerr << "warning: bootstrap_thresholds on only " << M
                  << " residual rows; thresholds will be noisy\n";

    const auto [mu_hat, sigma_hat] = estimate_moments(residuals);
    const Mat inv_sqrt = detail::symmetric_inv_sqrt(sigma_hat);

    std::vector<double> stat1(static_cast<size_t>(cfg.NB)), stat2(static_cast<size_t>(cfg.NB));
    for (int b = 0; b < cfg.NB; ++b) {
        auto rng = derive_rng(cfg.seed, "bootstrap", static_cast<std::uint64_t>(b));
        std::uniform_int_distribution<long> pick(0, M - 1);
        Mat rows(M, residuals.deltas.cols());
        for (long i = 0; i < M; ++i) rows.row(i) = residuals.deltas.row(pick(rng));
        Vec mu_b;
        Mat cov_b;
        detail::row_moments(rows, mu_b, cov_b);

        const Vec d = inv_sqrt * (mu_b - mu_hat);
        stat1[static_cast<size_t>(b)] = d.squaredNorm();
        const Mat second = inv_sqrt * (cov_b + (mu_b - mu_hat) * (mu_b - mu_hat).transpose()) *
                           inv_sqrt;
        Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (second + second.transpose()));
        stat2[static_cast<size_t>(b)] = es.eigenvalues().maxCoeff();
    }

    const double q = 1.0 - cfg.alpha / 2.0;
    const double gamma1 = detail::empirical_quantile(stat1, q);
    const double gamma2 = std::max(1.0, detail::empirical_quantile(stat2, q));
    return {gamma1, gamma2};
}

inline AmbiguitySet build_set(const Vec& center, const Mat& Sigma, double gamma1, double gamma2,
                              double alpha) {
    const long n = center.size();
    if (Sigma.rows() != n || Sigma.cols() != n)
        throw DimensionError("build_set: Sigma shape does not match center");
    const double scale = std::max(1.0, Sigma.cwiseAbs().maxCoeff());
    if ((Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw DomainError("build_set: Sigma must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(Sigma);
    if (es.eigenvalues().minCoeff() < 0.5 * kEpsSigma)
        throw DomainError("build_set: Sigma must be positive definite (regularize first)");
    if (gamma1 < 0.0) throw DomainError("build_set: gamma1 must be nonnegative");
    if (gamma2 < gamma1) {
        std::ostringstream os;
        os << "build_set: gamma2 = " << gamma2 << " < gamma1 = " << gamma1
           << "; the second-moment bound must dominate the mean bound or the set is empty";
        throw DomainError(os.str());
    }
    AmbiguitySet set;
    set.center = center;
    set.Sigma = 0.5 * (Sigma + Sigma.transpose());
    set.sigma_sqrt =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();
    set.gamma1 = gamma1;
    set.gamma2 = gamma2;
    set.alpha = alpha;
    return set;
}

// sup over the set of E[z' xi] = z'center + sqrt(gamma1) * ||Sigma^{1/2} z||
inline double worst_case_linear(const AmbiguitySet& set, const Vec& z) {
    if (z.size() != set.dim())
        throw DimensionError("worst_case_linear: z dimension does not match the set");
    return z.dot(set.center) + std::sqrt(set.gamma1) * (set.sigma_sqrt * z).norm();
}

// per-coordinate sup/inf of E[xi_i]; the lower bound is floored at zero
// because demand and supply are nonnegative
inline std::pair<Vec, Vec> worst_case_coordinate_bounds(const AmbiguitySet& set) {
    const long n = set.dim();
    Vec upper(n), lower(n);
    const double root = std::sqrt(set.gamma1);
    for (long i = 0; i < n; ++i) {
        const double dev = root * set.sigma_sqrt.col(i).norm();
        upper(i) = set.center(i) + dev;
        lower(i) = std::max(0.0, set.center(i) - dev);
    }
    return {upper, lower};
}

}  // namespace evdro

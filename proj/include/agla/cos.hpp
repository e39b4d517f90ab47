#pragma once

// Compensated over-sampling: Mahalanobis likelihood-ratio weights for transformed
// copies of memory samples, batch normalization of those weights, and a linear
// regression Monte-Carlo that measures their effect on estimator MSE.

#include "agla/csv.hpp"
#include "agla/error.hpp"
#include "agla/ndmath.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace agla {

/// Per-origin feature means, pooled within-origin covariance (ridge included) and its factor.
struct CosStats {
    std::vector<Eigen::VectorXd> means;
    Eigen::MatrixXd covariance;
    double tau = 1.0;
    double ridge = 0.0;
    Eigen::LLT<Eigen::MatrixXd> factor;
    bool positive_definite = false;
};

namespace detail {

inline Eigen::MatrixXd pooled_scatter(const std::vector<Eigen::MatrixXd>& groups, std::vector<Eigen::VectorXd>& means) {
    if (groups.empty()) throw ParameterError("cos stats: no origin groups");
    const Eigen::Index d = groups.front().cols();
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
    std::size_t total = 0;
    means.clear();
    for (const Eigen::MatrixXd& g : groups) {
        if (g.cols() != d)
            throw DimensionError("cos stats: feature width " + std::to_string(g.cols()) + " differs from " +
                                 std::to_string(d));
        if (g.rows() == 0) throw ParameterError("cos stats: origin group without features");
        const Eigen::VectorXd mu = g.colwise().mean().transpose();
        const Eigen::MatrixXd centered = g.rowwise() - mu.transpose();
        scatter.noalias() += centered.transpose() * centered;
        total += static_cast<std::size_t>(g.rows());
        means.push_back(mu);
    }
    scatter /= static_cast<double>(total);
    return 0.5 * (scatter + scatter.transpose());
}

inline void finish_stats(CosStats& s) {
    s.covariance.diagonal().array() += s.ridge;
    s.factor.compute(s.covariance);
    s.positive_definite = s.factor.info() == Eigen::Success;
}

}  // namespace detail

/// mu_i = mean of group i; Sigma = (1 / total) sum_i sum_k (z - mu_i)(z - mu_i)^T + ridge*I.
/// Each group is an M_i x d matrix of features z_{i,k}.
inline CosStats compute_cos_stats(const std::vector<Eigen::MatrixXd>& groups, double tau, double ridge) {
    if (!(tau > 0)) throw ParameterError("cos stats: temperature must be positive");
    if (ridge < 0) throw ParameterError("cos stats: ridge must be >= 0");
    CosStats s;
    s.covariance = detail::pooled_scatter(groups, s.means);
    s.tau = tau;
    s.ridge = ridge;
    detail::finish_stats(s);
    return s;
}

/// As compute_cos_stats with ridge = scale * trace(Sigma) / d, falling back to `scale`
/// itself when the covariance is exactly zero.
inline CosStats compute_cos_stats_relative(const std::vector<Eigen::MatrixXd>& groups, double tau,
                                           double scale = 1e-6) {
    if (!(tau > 0)) throw ParameterError("cos stats: temperature must be positive");
    CosStats s;
    s.covariance = detail::pooled_scatter(groups, s.means);
    s.tau = tau;
    const double tr = s.covariance.trace() / static_cast<double>(s.covariance.rows());
    s.ridge = tr > 0 ? scale * tr : scale;
    detail::finish_stats(s);
    return s;
}

/// w = exp(-(z - mu)^T (tau Sigma)^{-1} (z - mu)).
inline double cos_weight(const Eigen::VectorXd& z, const Eigen::VectorXd& mu, const CosStats& stats) {
    if (z.size() != mu.size() || z.size() != stats.covariance.rows())
        throw DimensionError("cos_weight: feature width mismatch");
    if (!stats.positive_definite)
        throw LinearAlgebraError("cos_weight: covariance is singular; use a ridge > 0");
    const Eigen::VectorXd diff = z - mu;
    const double q = diff.dot(stats.factor.solve(diff)) / stats.tau;
    return std::exp(-q);
}

inline double cos_weight(const Eigen::VectorXd& z, const Eigen::VectorXd& mu, const Eigen::MatrixXd& covariance,
                         double tau) {
    if (!(tau > 0)) throw ParameterError("cos_weight: temperature must be positive");
    CosStats s;
    s.covariance = covariance;
    s.tau = tau;
    s.factor.compute(covariance);
    s.positive_definite = s.factor.info() == Eigen::Success;
    return cos_weight(z, mu, s);
}

/// w_bar = w / sum(w).
inline std::vector<double> normalize_weights(std::span<const double> weights) {
    if (weights.empty()) throw ParameterError("normalize_weights: empty batch");
    double total = 0;
    for (double w : weights) {
        if (!(w > 0)) throw ParameterError("normalize_weights: weights must be positive");
        total += w;
    }
    std::vector<double> out(weights.begin(), weights.end());
    for (double& w : out) w /= total;
    return out;
}

/// sum_i w_bar_i * loss_i with w_bar held constant (no gradient reaches the weights).
inline Tensor apply_cos_weights(const Tensor& per_sample_losses, std::span<const double> normalized) {
    if (per_sample_losses.size() != normalized.size())
        throw DimensionError("apply_cos_weights: " + std::to_string(per_sample_losses.size()) + " losses but " +
                             std::to_string(normalized.size()) + " weights");
    Tensor w(per_sample_losses.shape(), std::vector<double>(normalized.begin(), normalized.end()));
    return sum(mul(per_sample_losses, w));
}

/// Per-row factors n * w_bar for the n augmented rows of a batch, so that the augmented
/// part of a batch mean becomes the w_bar-weighted mean; uniform weights give 1.
inline std::vector<double> batch_cos_factors(std::span<const double> raw_weights) {
    auto normalized = normalize_weights(raw_weights);
    const double n = static_cast<double>(normalized.size());
    for (double& w : normalized) w *= n;
    return normalized;
}

// ---------------------------------------------------------------------------
// Weighted-augmentation regression Monte-Carlo
// ---------------------------------------------------------------------------

enum class AugmentationKind {
    identity,       // copies equal the original input
    gaussian,       // x + N(0, inlier_sigma^2 I)
    outlier_mixture // gaussian, except each copy is replaced by x + N(0, outlier_sigma^2 I) w.p. outlier_prob
};

struct MseExperimentConfig {
    std::size_t dim = 5;
    std::size_t clean_samples = 40;
    std::size_t copies = 10;         // M transformed copies per clean sample
    double label_noise = 0.5;
    AugmentationKind augmentation = AugmentationKind::outlier_mixture;
    double inlier_sigma = 0.05;
    double outlier_sigma = 3.0;
    double outlier_prob = 0.2;
    double tau = 1.0;
    double ridge = 1e-6;
    std::size_t seeds = 500;
    std::uint64_t base_seed = 1;
};

struct MseSeedResult {
    std::uint64_t seed = 0;
    double mse_unweighted = 0;
    double mse_weighted = 0;
    double mse_clean = 0;
};

struct MseReport {
    std::vector<MseSeedResult> rows;
    double mean_unweighted = 0;
    double mean_weighted = 0;
    double mean_clean = 0;
    double t_statistic = 0;
    double p_value = 1;  // one-sided paired test of mse_weighted < mse_unweighted
};

namespace detail {

inline Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& w) {
    const Eigen::MatrixXd xtw = X.transpose() * w.asDiagonal();
    Eigen::LDLT<Eigen::MatrixXd> solver(xtw * X);
    if (solver.info() != Eigen::Success) throw LinearAlgebraError("weighted least squares: singular normal matrix");
    return solver.solve(xtw * y);
}

}  // namespace detail

inline MseReport mse_reduction_experiment(const MseExperimentConfig& cfg) {
    if (cfg.seeds < 2) throw ParameterError("mse experiment: need at least 2 seeds");
    if (cfg.dim == 0 || cfg.clean_samples < cfg.dim || cfg.copies == 0)
        throw ParameterError("mse experiment: need dim >= 1, clean_samples >= dim, copies >= 1");
    const std::size_t d = cfg.dim, n = cfg.clean_samples, m = cfg.copies;
    Eigen::VectorXd theta0(d);
    for (std::size_t j = 0; j < d; ++j) theta0(j) = (j % 2 ? -1.0 : 1.0) / static_cast<double>(j + 1);

    MseReport report;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
        const std::uint64_t seed = cfg.base_seed + s;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> unit(0.0, 1.0);
        std::uniform_real_distribution<double> coin(0.0, 1.0);

        Eigen::MatrixXd Xc(n, d);
        Eigen::VectorXd yc(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) Xc(i, j) = unit(rng);
            yc(i) = Xc.row(i).dot(theta0) + cfg.label_noise * unit(rng);
        }

        Eigen::MatrixXd Xa(n * m, d);
        Eigen::VectorXd ya(n * m);
        std::vector<Eigen::MatrixXd> groups(n, Eigen::MatrixXd(m, d));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < m; ++k) {
                double sigma = 0;
                if (cfg.augmentation != AugmentationKind::identity) sigma = cfg.inlier_sigma;
                if (cfg.augmentation == AugmentationKind::outlier_mixture && coin(rng) < cfg.outlier_prob)
                    sigma = cfg.outlier_sigma;
                for (std::size_t j = 0; j < d; ++j) {
                    const double v = Xc(i, j) + sigma * unit(rng);
                    Xa(i * m + k, j) = v;
                    groups[i](k, j) = v;
                }
                ya(i * m + k) = yc(i);
            }

        const CosStats stats = compute_cos_stats(groups, cfg.tau, cfg.ridge);
        std::vector<double> raw(n * m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < m; ++k)
                raw[i * m + k] = cos_weight(groups[i].row(k).transpose(), stats.means[i], stats);
        for (double& w : raw) w = std::max(w, std::numeric_limits<double>::min());
        const auto factors = batch_cos_factors(raw);

        Eigen::MatrixXd X(n + n * m, d);
        X << Xc, Xa;
        Eigen::VectorXd y(n + n * m);
        y << yc, ya;
        Eigen::VectorXd uniform = Eigen::VectorXd::Ones(n + n * m);
        Eigen::VectorXd weighted = uniform;
        for (std::size_t r = 0; r < n * m; ++r) weighted(n + r) = factors[r];

        const auto err = [&](const Eigen::VectorXd& theta) { return (theta - theta0).squaredNorm(); };
        MseSeedResult row;
        row.seed = seed;
        row.mse_unweighted = err(detail::weighted_least_squares(X, y, uniform));
        row.mse_weighted = err(detail::weighted_least_squares(X, y, weighted));
        row.mse_clean = err(detail::weighted_least_squares(Xc, yc, Eigen::VectorXd::Ones(n)));
        report.rows.push_back(row);
    }

    const double R = static_cast<double>(report.rows.size());
    double mean_diff = 0;
    for (const auto& r : report.rows) {
        report.mean_unweighted += r.mse_unweighted / R;
        report.mean_weighted += r.mse_weighted / R;
        report.mean_clean += r.mse_clean / R;
        mean_diff += (r.mse_unweighted - r.mse_weighted) / R;
    }
    double var = 0;
    for (const auto& r : report.rows) {
        const double dlt = r.mse_unweighted - r.mse_weighted - mean_diff;
        var += dlt * dlt / (R - 1);
    }
    if (var > 0) {
        report.t_statistic = mean_diff / std::sqrt(var / R);
        const boost::math::students_t dist(R - 1);
        report.p_value = boost::math::cdf(boost::math::complement(dist, report.t_statistic));
    } else {
        report.t_statistic = 0;
        report.p_value = mean_diff > 0 ? 0.0 : 1.0;
    }
    return report;
}

inline void write_mse_csv(const std::string& path, const MseReport& report) {
    CsvWriter csv(path, {"seed", "mse_unweighted", "mse_weighted"});
    for (const auto& r : report.rows)
        csv.row({std::to_string(r.seed), format_double(r.mse_unweighted), format_double(r.mse_weighted)});
}

}  // namespace agla

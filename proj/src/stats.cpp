#include "tcost/stats.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace tcost {

Estimate mean_estimate(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("mean_estimate: empty sample");
  const Eigen::Map<const Eigen::ArrayXd> x(samples.data(), static_cast<Eigen::Index>(samples.size()));
  const double mean = x.mean();
  if (samples.size() < 2) return {mean, 0.0};
  const double var = (x - mean).square().sum() / static_cast<double>(samples.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(samples.size()))};
}

double sample_variance(std::span<const double> samples) {
  if (samples.size() < 2) return 0.0;
  const Eigen::Map<const Eigen::ArrayXd> x(samples.data(), static_cast<Eigen::Index>(samples.size()));
  return (x - x.mean()).square().sum() / static_cast<double>(samples.size() - 1);
}

double influence_se(std::span<const double> influence) {
  if (influence.size() < 2) return 0.0;
  return std::sqrt(sample_variance(influence) / static_cast<double>(influence.size()));
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y,
                     std::span<const double> y_se) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit: need >= 2 matched points");
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
  const Regression r = least_squares(design, y, y_se);
  return {r.coef[0], r.coef[1], r.se[0], r.se[1]};
}

Regression least_squares(const Eigen::MatrixXd& design, std::span<const double> y,
                         std::span<const double> y_se) {
  const Eigen::Index n = design.rows(), k = design.cols();
  if (static_cast<Eigen::Index>(y.size()) != n || n < k) {
    throw std::invalid_argument("least_squares: need at least as many observations as coefficients");
  }
  if (!y_se.empty() && y_se.size() != y.size()) throw std::invalid_argument("least_squares: se size mismatch");
  const Eigen::Map<const Eigen::VectorXd> rhs(y.data(), n);

  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (!y_se.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) w(i) = y_se[i] > 0.0 ? 1.0 / (y_se[i] * y_se[i]) : 1.0;
  }
  const Eigen::MatrixXd normal = design.transpose() * w.asDiagonal() * design;
  const Eigen::MatrixXd inv = normal.inverse();
  const Eigen::VectorXd beta = inv * (design.transpose() * w.asDiagonal() * rhs);

  Eigen::MatrixXd cov;
  if (!y_se.empty()) {
    cov = inv;
  } else if (n > k) {
    const double rss = (rhs - design * beta).squaredNorm();
    cov = inv * (rss / static_cast<double>(n - k));
  } else {
    cov = Eigen::MatrixXd::Zero(k, k);
  }
  Regression out;
  for (Eigen::Index j = 0; j < k; ++j) {
    out.coef.push_back(beta(j));
    out.se.push_back(std::sqrt(cov(j, j)));
  }
  return out;
}

}  // namespace tcost

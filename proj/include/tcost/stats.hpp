#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace tcost {

/// A Monte-Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Sample mean and its standard error (n-1 denominator).
Estimate mean_estimate(std::span<const double> samples);

double sample_variance(std::span<const double> samples);

/// Standard error of a delta-method estimator from its per-sample influence
/// values: sd(influence) / sqrt(n).
double influence_se(std::span<const double> influence);

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double intercept_se = 0.0;
  double slope_se = 0.0;
};

/// Weighted least squares y ~ a + b x. Standard errors come from the
/// supplied per-point standard errors of y when `y_se` is non-empty
/// (weights 1/se^2), otherwise from the residual variance.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y,
                     std::span<const double> y_se = {});

struct Regression {
  std::vector<double> coef;
  std::vector<double> se;
};

/// Weighted least squares for a general design matrix (one row per
/// observation), with the same standard-error convention as linear_fit.
Regression least_squares(const Eigen::MatrixXd& design, std::span<const double> y,
                         std::span<const double> y_se = {});

}  // namespace tcost

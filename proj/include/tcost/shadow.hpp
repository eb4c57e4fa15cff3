#pragma once

#include "tcost/band_simulator.hpp"
#include "tcost/frictionless.hpp"
#include "tcost/sde_core.hpp"
#include "tcost/stats.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace tcost {

/// alpha = (p/3) c_S / c_phi.
double shadow_alpha(double p, double c_S, double c_phi);

/// gamma = 3 alpha^{1/3} (eps S / 2)^{2/3}.
double shadow_gamma(double eps, double S, double alpha);

/// Deviation of the shadow price from mid: alpha x^3 - gamma x.
inline double shadow_cubic(double alpha, double gamma, double x) { return alpha * x * x * x - gamma * x; }
inline double shadow_cubic_slope(double alpha, double gamma, double x) { return 3.0 * alpha * x * x - gamma; }

/// Zero of the cubic's slope, sqrt(gamma / (3 alpha)); equals the band halfwidth.
inline double shadow_halfwidth(double alpha, double gamma) { return std::sqrt(gamma / (3.0 * alpha)); }

struct ShadowCoefficients {
  PathMatrix alpha;
  PathMatrix gamma;
};

ShadowCoefficients shadow_coefficients(double p, double eps, const PathMatrix& S, const PathMatrix& c_S,
                                       const PathMatrix& c_phi);

struct ShadowPath {
  PathMatrix delta_S;
  PathMatrix S_shadow;
  std::size_t steps = 0;
  std::size_t contained = 0;       // |delta_S| <= eps S
  std::size_t boundary_steps = 0;  // steps with a trade
  double max_boundary_mismatch = 0.0;  // relative to eps S
  std::vector<std::pair<std::size_t, std::size_t>> violations;  // (path, step)
};

/// Shadow deviation from the post-trade position deviation of a policy run.
/// `position` rows must match S; trades are detected from position changes.
ShadowPath shadow_path(const PolicyRunResult& policy, const BandSpec& band, const ShadowCoefficients& coeffs,
                       const PathSet& paths, double eps);

/// One bucket of deviation / halfwidth on [-1, 1].
struct DriftBucket {
  std::size_t count = 0;
  double mean_ratio = 0.0;
  double predicted = 0.0;  // mean of p * deviation * c_S
  Estimate estimated;      // mean of shadow-deviation increments per unit time
  Estimate residual;       // estimated - predicted
  Estimate density_drift;  // drift of Z^eps S^eps scaled by 1/Z
};

struct ShadowCheck {
  double eps = 0.0;
  std::size_t steps = 0;
  double contained_fraction = 1.0;          // post-trade
  double pretrade_contained_fraction = 1.0;
  double max_boundary_mismatch = 0.0;
  double cubic_identity_error = 0.0;        // max relative error of f(+-h) = -+eps S and f'(+-h) = 0
  double halfwidth_consistency = 0.0;       // max relative gap sqrt(gamma/3alpha) vs band halfwidth
  std::array<DriftBucket, 10> buckets;
  LinearFit drift_fit;                      // estimated ~ a + b * deviation c_S
  double drift_coefficient = 0.0;           // same slope with an extra even (r^2) column; should be p
  double drift_coefficient_se = 0.0;
  double sup_residual = 0.0;
  double sup_density_drift = 0.0;
  Estimate center_residual;                 // bucket(s) adjacent to zero deviation
  Estimate mean_density;                    // E[Z^eps_T]
  Estimate terminal_residual_rms;           // RMS of Z^eps_T - U'(.)/normalisation
  Estimate frictionless_martingale;         // E[Z_T (S_T - S_0)]
  std::vector<std::string> warnings;
};

struct ShadowSettings {
  InitialPlacement placement = InitialPlacement::Stationary;
  std::size_t min_bucket = 1000;
  unsigned threads = 0;
};

/// Streams Black-Scholes band-policy paths and evaluates containment, the
/// drift condition and the density conditions for every eps on common paths.
std::vector<ShadowCheck> shadow_experiment(const BlackScholesMarket& market, const ExponentialPreference& pref,
                                           const std::vector<double>& eps_list, const TimeGrid& grid,
                                           std::size_t n_paths, std::uint64_t seed,
                                           const ShadowSettings& settings = {});

struct ShadowScaling {
  std::vector<ShadowCheck> rows;
  LinearFit residual_fit;    // ln sup residual vs ln eps
  LinearFit density_fit;     // ln sup density drift vs ln eps
  LinearFit terminal_fit;    // ln terminal residual RMS vs ln eps
  double drift_coefficient = 0.0;  // from the smallest positive eps
  double drift_coefficient_se = 0.0;
};

ShadowScaling shadow_scaling(const BlackScholesMarket& market, const ExponentialPreference& pref,
                             const std::vector<double>& eps_list, const TimeGrid& grid, std::size_t n_paths,
                             std::uint64_t seed, const ShadowSettings& settings = {});

/// Columns: eps, decile, count, mean_ratio, predicted, estimated, se.
void write_drift_csv(const std::vector<ShadowCheck>& checks, std::ostream& out);

}  // namespace tcost

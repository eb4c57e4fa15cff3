#pragma once

#include "tcost/sde_core.hpp"
#include "tcost/stats.hpp"

#include <functional>
#include <string>

namespace tcost {

struct BlackScholesMarket {
  double S0 = 100.0;
  double mu = 0.08;
  double sigma = 0.2;

  void validate() const;
  GbmParams params() const { return {S0, mu, sigma}; }
};

/// A traded asset S and a non-traded factor Y with correlated Brownian drivers.
struct BasisRiskMarket {
  GbmParams traded;
  GbmParams nontraded;
  double rho = 0.0;

  void validate() const;
};

struct ExponentialPreference {
  double p = 1.0;
  double x0 = 0.0;

  void validate() const;
};

/// Risk aversion after discounting with a constant short rate: p -> e^{rT} p.
inline double discounted_risk_aversion(double p, double rate, double T) { return std::exp(rate * T) * p; }

enum class ClaimKind { Call, Put, Log, Custom };
enum class Underlying { Traded, NonTraded };

/// A European claim of `quantity` units written on S or Y.
struct ClaimSpec {
  ClaimKind kind = ClaimKind::Call;
  double strike = 100.0;
  double maturity = 1.0;
  Underlying underlying = Underlying::Traded;
  double quantity = 1.0;
  std::function<double(double)> payoff_fn;  // Custom only
  std::string label;

  static ClaimSpec call(double strike, double maturity);
  static ClaimSpec put(double strike, double maturity);
  static ClaimSpec custom(std::function<double(double)> payoff, double maturity, std::string label = "custom");
  /// Payoff -ln(S_T / strike); its cash gamma is identically one.
  static ClaimSpec log_contract(double strike, double maturity);

  void validate(double horizon) const;
  double payoff(double s) const;
};

struct Greeks {
  double delta = 0.0;
  double gamma = 0.0;
  double value = 0.0;
};

/// Frictionless exponential-utility holding mu / (p sigma^2 S): the monetary
/// position mu / (p sigma^2) is constant.
double bs_pure_investment(const BlackScholesMarket& market, const ExponentialPreference& pref,
                          double t, double S);

/// d phi / dS of the pure-investment holding.
double bs_pure_investment_sensitivity(const BlackScholesMarket& market,
                                      const ExponentialPreference& pref, double S);

/// Value, delta and gamma of E[H(X_T) | X_t = x] for a lognormal X with drift
/// `drift` and volatility `sigma`. Closed form for calls and puts, Gauss
/// Closed form for calls, puts and the log contract. Custom payoffs use
/// adaptive Gauss-Kronrod quadrature with likelihood-ratio weights for the
/// greeks, so kinked payoffs get a proper gamma.
Greeks lognormal_claim(const ClaimSpec& claim, double t, double x, double drift, double sigma);

struct ClaimMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of H(X_T) given X_t = x for the same lognormal model.
/// Closed form except for custom payoffs.
ClaimMoments lognormal_claim_moments(const ClaimSpec& claim, double t, double x, double drift, double sigma);

/// Zero-rate Black-Scholes value, delta and gamma (scaled by claim.quantity).
/// At or after maturity the payoff is returned with zero gamma.
Greeks bs_delta_gamma(const ClaimSpec& claim, double t, double S, double sigma);

/// d phi = Gamma dS + a dt along each path.
struct StrategyDecomposition {
  PathMatrix gamma;
  PathMatrix drift;
  PathMatrix cash_gamma;
  std::size_t undefined_steps = 0;  // where sigma^S vanished; entries are NaN
};

/// Windowed estimate Gamma = c^{phi,S} / c^S (signed), a = b^phi - Gamma b^S.
StrategyDecomposition decompose_strategy(const PathMatrix& strategy, const PathSet& paths,
                                         std::optional<std::size_t> window = std::nullopt);

/// Decomposition from an analytic sensitivity d strategy / dS evaluated on
/// the path; drift is estimated from increments.
StrategyDecomposition decompose_strategy(const PathMatrix& strategy, const PathSet& paths,
                                         const std::function<double(double, double)>& sensitivity);

/// phi^H = phi + n Delta^H, pointwise.
PathMatrix combined_target(const PathMatrix& phi, const PathMatrix& hedge, double n = 1.0);

/// Drift adjustments defining the minimal-entropy martingale measure.
struct MeasureShift {
  double s_drift = 0.0;
  double y_drift = 0.0;
  bool has_y = false;
};

MeasureShift entropy_measure_shift(const BlackScholesMarket& market);
MeasureShift entropy_measure_shift(const BasisRiskMarket& market);

/// The basis-risk market with drifts replaced by their entropy-measure values.
BasisRiskMarket under_entropy_measure(const BasisRiskMarket& market);

struct ValueHedge {
  double value = 0.0;
  double xi = 0.0;
};

/// Q-value of a claim on Y and its mean-variance hedge in S.
ValueHedge basis_claim_value_hedge(const BasisRiskMarket& market, const ClaimSpec& claim, double t,
                                   double S, double Y);

/// Sensitivities of the mean-variance hedge xi(t, S, Y), by central differences.
struct HedgeSensitivity {
  double xi = 0.0;
  double d_s = 0.0;
  double d_y = 0.0;
};

HedgeSensitivity basis_hedge_sensitivity(const BasisRiskMarket& market, const ClaimSpec& claim,
                                         double t, double S, double Y, double rel_bump = 1e-4);

struct HedgingError {
  Estimate second_moment;  // E_Q[(H - E_Q[H] - int xi dS)^2]
  Estimate variance_h;     // sample Var_Q(H)
  Estimate mean_h;
  double value0 = 0.0;     // closed-form / quadrature E_Q[H]
  std::size_t n_paths = 0;
};

/// Monte-Carlo minimal Q-expected squared hedging error on the given grid.
HedgingError hedging_error_second_moment(const BasisRiskMarket& market, const ClaimSpec& claim,
                                         const TimeGrid& grid, std::size_t n_paths,
                                         std::uint64_t seed, unsigned threads = 0);

}  // namespace tcost

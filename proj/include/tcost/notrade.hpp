#pragma once

#include "tcost/frictionless.hpp"
#include "tcost/sde_core.hpp"
#include "tcost/stats.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tcost {

/// |x|^{4/3} computed as (x^2)^{2/3}, well defined through zero.
inline double abs_pow43(double x) {
  const double c = std::cbrt(x * x);
  return c * c;
}

/// Halfwidth (shares) of the no-trade region around a target with local
/// variation c_phi: (3/(2p) * c_phi/c_S * eps * S)^{1/3}. The band is symmetric.
double band_halfwidth(double p, double eps, double S, double c_phi, double c_S);
PathMatrix band_halfwidth(double p, double eps, const PathMatrix& S, const PathMatrix& c_phi,
                          const PathMatrix& c_S);

/// Same formula around the claim-adjusted target phi + Delta^H.
inline double band_halfwidth_with_claim(double p, double eps, double S, double c_phiH, double c_S) {
  return band_halfwidth(p, eps, S, c_phiH, c_S);
}

/// Monetary halfwidth from the total cash gamma of the target:
/// (3/(2p))^{1/3} |cash_gamma|^{2/3} eps^{1/3}.
double monetary_halfwidth_cash_gamma(double p, double eps, double cash_gamma);
PathMatrix monetary_halfwidth_cash_gamma(double p, double eps, const PathMatrix& cash_gamma);

/// Target position and halfwidth along each path of a PathSet.
struct BandSpec {
  TimeGrid grid;
  PathMatrix center;
  PathMatrix halfwidth;

  void validate() const;
};

struct LossEstimate {
  double value = 0.0;
  double std_error = 0.0;
  Measure measure = Measure::Q;
  std::vector<double> samples;  // per-path losses, kept for paired comparisons
  PathRow integrand_trace;      // cross-path mean of the integrand, per step
};

/// (p/2) E[int (halfwidth)^2 d<S>] with left-point sums of c_S dt. Rejects
/// paths simulated under P.
LossEstimate welfare_loss(double p, const BandSpec& band, const PathMatrix& c_S, const PathSet& paths);

enum class PriceRegime {
  General,
  Complete,
  MarginalInvestment,
  MarginalOption,
  IncompleteMartingale,
  IncompleteSmallN
};

std::string to_string(PriceRegime r);

struct PriceQuote {
  double frictionless = 0.0;
  double correction = 0.0;
  double total = 0.0;
  double correction_se = 0.0;
  PriceRegime regime = PriceRegime::General;
};

/// pi0 + (loss_with - loss_without) / quantity. When both losses carry
/// per-path samples of equal length the standard error is paired.
PriceQuote indifference_price(const LossEstimate& loss_with, const LossEstimate& loss_without, double pi0,
                              double quantity = 1.0);

/// Per-path mean of int f(i, k) dt over the grid, left-point rule.
template <class F>
Estimate path_integral_mean(const PathSet& paths, F&& f, std::vector<double>* samples = nullptr) {
  const auto& grid = paths.grid();
  const std::size_t n = paths.n_paths();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < grid.n_steps(); ++k) acc += f(i, k) * grid.dt(k);
    out[i] = acc;
  }
  const Estimate e = mean_estimate(out);
  if (samples) *samples = std::move(out);
  return e;
}

/// Correction for the whole position in a complete market:
/// (9p/32)^{1/3} eps^{2/3} E[int (|CG_phi + CG_H|^{4/3} - |CG_phi|^{4/3}) c_S/S^2 dt].
Estimate complete_price_correction(double p, double eps, const PathMatrix& cash_gamma_phi,
                                   const PathMatrix& cash_gamma_H, const PathMatrix& c_S,
                                   const PathSet& paths);

/// Per-claim price when the investor holds no risky position of their own.
/// cash_gamma_H is per unit claim.
PriceQuote marginal_investment_price(double p, double n, double eps, const PathMatrix& cash_gamma_H,
                                     const PathMatrix& c_S, const PathSet& paths, double pi0);

struct MarginalOptionExpansion {
  PriceQuote quote;          // per claim, first plus second order
  Estimate first_order;      // per claim, independent of n
  Estimate second_order;     // per claim, proportional to n
  PathMatrix band_factor;    // 1 + (2/3) n CG_H / CG_phi
};

/// Small-n expansion of the per-claim correction around a nonzero own cash gamma.
MarginalOptionExpansion marginal_option_expansion(double p, double eps, double n,
                                                  const PathMatrix& cash_gamma_phi,
                                                  const PathMatrix& cash_gamma_H, const PathMatrix& c_S,
                                                  const PathSet& paths, double pi0);

/// E[int |CG_H - n' CG_H'|^{4/3} c_S/S^2 dt] for one n'.
double semistatic_objective(const PathMatrix& cash_gamma_H, const PathMatrix& cash_gamma_Hprime,
                            const PathMatrix& c_S, const PathSet& paths, double n_prime);

struct SemistaticResult {
  double n_star = 0.0;
  double objective = 0.0;
  double scale = 0.0;  // objective at n' = 0
  double lower = 0.0;  // search interval finally used
  double upper = 0.0;
  std::size_t evaluations = 0;
};

/// Golden-section minimisation of the semi-static objective over [lower, upper].
/// A minimiser at an endpoint widens the interval ten-fold once, then fails.
SemistaticResult semistatic_gamma_hedge(const PathMatrix& cash_gamma_H, const PathMatrix& cash_gamma_Hprime,
                                        const PathMatrix& c_S, const PathSet& paths, double lower = -10.0,
                                        double upper = 10.0, double tol = 1e-11);

struct IncompleteQuote {
  PriceQuote quote;        // per claim
  Estimate hedging_error;  // E_Q[(H - E_Q H - int xi dS)^2] per unit claim
  Estimate hedge_term;     // (p n / 2) * hedging_error
  Estimate cost_term;      // (9 p n eps^2/32)^{1/3} E[int (c^xi/c^S S^4)^{2/3} d<S>/S^2]
};

/// Per-claim price of n claims on the non-traded factor when the traded
/// asset has no drift, so the investor holds nothing else.
IncompleteQuote incomplete_martingale_price(double p, double n, double eps, const BasisRiskMarket& market,
                                            const ClaimSpec& claim, const TimeGrid& grid,
                                            std::size_t n_paths, std::uint64_t seed, unsigned threads = 0);

struct SmallNCorrections {
  Estimate band_term;         // (p/2) E_Q[int (4n/3) h^2 (c^{phi,xi}/c^phi) d<S>]
  Estimate covariance_term;   // (p/2) n p E_Q[(H - E_Q H - int xi dS) int h^2 d<S>]
  Estimate impact;            // sum of the two
  Estimate covariance_density_form;  // same covariance term through the exponential density
  double mean_band_factor = 1.0;
  double min_band_factor = 1.0;
  double max_band_factor = 1.0;
};

/// Corrections for n claims on Y when the traded asset carries a risk
/// premium. Paths are simulated under P and reweighted with exact densities.
SmallNCorrections incomplete_smalln_corrections(double p, double n, double eps, const BasisRiskMarket& market,
                                                const ClaimSpec& claim, const TimeGrid& grid,
                                                std::size_t n_paths, std::uint64_t seed,
                                                unsigned threads = 0);

}  // namespace tcost

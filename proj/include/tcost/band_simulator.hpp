#pragma once

#include "tcost/frictionless.hpp"
#include "tcost/notrade.hpp"
#include "tcost/sde_core.hpp"
#include "tcost/stats.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tcost {

struct BandPoint {
  double center = 0.0;
  double halfwidth = 0.0;
};

/// Target position and halfwidth (shares) as a function of (t, S).
using BandRule = std::function<BandPoint(double t, double S)>;

/// Band around the Black-Scholes pure-investment holding.
BandRule pure_investment_band(const BlackScholesMarket& market, const ExponentialPreference& pref, double eps);

/// Where the position sits right after the opening trade.
/// Stationary draws the deviation uniformly over the band (the ergodic law of
/// the reflected deviation); Center starts exactly on target.
enum class InitialPlacement { Stationary, Center };

std::string to_string(InitialPlacement placement);
InitialPlacement parse_placement(const std::string& text);

struct TradeEntry {
  std::size_t step = 0;
  double shares = 0.0;  // signed, positive = buy
  double price = 0.0;   // execution price
  double cost = 0.0;    // eps * S * |shares|
};

struct TradeLedger {
  std::vector<TradeEntry> entries;
  double cumulative_cost = 0.0;  // includes the opening trade
  double initial_cost = 0.0;
};

/// Summary of one path under the band policy.
struct PathPolicyStats {
  double terminal_wealth = 0.0;  // x0 + sum theta dS - all costs, marked at mid
  double gain = 0.0;             // sum theta_k (S_{k+1} - S_k)
  double total_cost = 0.0;       // excluding the opening trade
  double initial_cost = 0.0;
  std::size_t n_trades = 0;
  double ratio2_mean = 0.0;      // time average of (deviation / halfwidth)^2
  std::size_t outside = 0;       // post-trade positions outside the applied band
  bool degenerate = false;       // a zero halfwidth forced trading to the target
};

/// Band policy on one path. At step 0 the position moves from `initial_shares`
/// to `start_shares`; at steps k = 1..n-1 it is projected onto
/// [center_k - halfwidth_{k-1}, center_k + halfwidth_{k-1}], buying at (1+eps)S
/// and selling at (1-eps)S. No trade happens at the horizon. `position`
/// (optional, size n_points) receives the post-trade holding at each point.
/// The ergodic ratio uses the current halfwidth.
PathPolicyStats run_band_path(std::span<const double> S, std::span<const double> center,
                              std::span<const double> halfwidth, double eps, double x0, double initial_shares,
                              double start_shares, std::span<double> position = {}, TradeLedger* ledger = nullptr);

struct PolicyRunResult {
  std::vector<double> terminal_wealth;
  std::vector<double> total_cost;    // excluding opening trades
  std::vector<double> initial_cost;
  PathMatrix position;
  PathMatrix deviation;
  std::vector<TradeLedger> ledgers;
  Estimate ergodic_ratio;
  std::size_t outside = 0;
  bool degenerate = false;
};

/// Runs the policy on every path of `paths` for a precomputed band.
PolicyRunResult run_band_policy(const PathSet& paths, const BandSpec& band, double eps, double x0,
                                double initial_shares, InitialPlacement placement = InitialPlacement::Center,
                                unsigned threads = 0);

/// Stationary placement draw u in [-1, 1] for a path, shared by all eps values.
double placement_draw(std::uint64_t seed, std::uint64_t path);

/// -(1/p) ln mean(exp(-p X)) with a delta-method standard error.
Estimate certainty_equivalent(std::span<const double> wealth, double p);

/// Per-sample influence values of CE(a) - CE(b) on paired samples.
std::vector<double> ce_gap_influence(std::span<const double> a, std::span<const double> b, double p);

/// CE(a) - CE(b) on paired samples with a delta-method standard error.
Estimate certainty_equivalent_gap(std::span<const double> a, std::span<const double> b, double p);

struct WelfareReport {
  double eps = 0.0;
  Estimate ce_friction;
  Estimate ce_frictionless;        // simulated frictionless strategy, same paths
  double ce_frictionless_exact = 0.0;
  Estimate loss;
  Estimate displacement_loss;
  Estimate direct_cost_loss;
  Estimate ergodic_ratio;
  Estimate mean_cost;              // trading cost after the opening trade
  Estimate initial_cost;
  double predicted_loss = 0.0;
  double cv_beta = 0.0;            // control variate coefficient
  std::size_t trades = 0;
  std::size_t outside = 0;
  bool degenerate = false;
};

struct WelfareSettings {
  InitialPlacement placement = InitialPlacement::Stationary;
  bool control_variate = true;
  unsigned threads = 0;
};

/// Closed-form Black-Scholes loss (p/2)(3eps/(2p))^{2/3}(mu/(p sigma^2))^{4/3} sigma^2 T.
double bs_predicted_loss(const BlackScholesMarket& market, const ExponentialPreference& pref, double eps, double T);

/// Runs the band policy for every eps on the same simulated paths.
std::vector<WelfareReport> welfare_sweep(const BlackScholesMarket& market, const ExponentialPreference& pref,
                                         const std::vector<double>& eps_list, const TimeGrid& grid,
                                         std::size_t n_paths, std::uint64_t seed,
                                         const WelfareSettings& settings = {});

WelfareReport welfare_experiment(const BlackScholesMarket& market, const ExponentialPreference& pref, double eps,
                                 const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                 const WelfareSettings& settings = {});

struct ScalingStudy {
  std::vector<WelfareReport> rows;
  LinearFit fit;  // ln loss = a + slope ln eps
  std::vector<std::string> warnings;
};

/// ln(loss) vs ln(eps) regression with common random numbers. Needs at least
/// three eps values; zero or nonpositive losses are excluded with a warning.
ScalingStudy scaling_study(const BlackScholesMarket& market, const ExponentialPreference& pref,
                           const std::vector<double>& eps_list, const TimeGrid& grid, std::size_t n_paths,
                           std::uint64_t seed, const WelfareSettings& settings = {});

/// Columns: path_id, step, t, S, phi_center, halfwidth, position, trade, cost.
void write_ledger_csv(const PathSet& paths, const BandSpec& band, const PolicyRunResult& result,
                      std::ostream& out);

}  // namespace tcost

#include "tcost/band_simulator.hpp"

#include "tcost/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace tcost {

BandRule pure_investment_band(const BlackScholesMarket& market, const ExponentialPreference& pref, double eps) {
  market.validate();
  pref.validate();
  if (!(eps >= 0.0)) throw ParameterError("pure_investment_band: eps must be >= 0");
  const double m = market.mu / (pref.p * market.sigma * market.sigma);
  // cash gamma of the holding is -m, so the monetary halfwidth is constant
  const double monetary = monetary_halfwidth_cash_gamma(pref.p, eps, -m);
  return [m, monetary](double, double S) { return BandPoint{m / S, monetary / S}; };
}

std::string to_string(InitialPlacement placement) {
  return placement == InitialPlacement::Center ? "center" : "stationary";
}

InitialPlacement parse_placement(const std::string& text) {
  if (text == "center") return InitialPlacement::Center;
  if (text == "stationary") return InitialPlacement::Stationary;
  throw ParameterError("unknown initial placement '" + text + "' (expected center or stationary)");
}

PathPolicyStats run_band_path(std::span<const double> S, std::span<const double> center,
                              std::span<const double> halfwidth, double eps, double x0, double initial_shares,
                              double start_shares, std::span<double> position, TradeLedger* ledger) {
  const std::size_t n_points = S.size();
  if (n_points < 2 || center.size() != n_points || halfwidth.size() != n_points) {
    throw ParameterError("run_band_path: price, center and halfwidth must share the grid");
  }
  if (!position.empty() && position.size() != n_points) throw ParameterError("run_band_path: position size");
  if (!std::isfinite(start_shares) || !std::isfinite(initial_shares)) {
    throw ParameterError("run_band_path: non-finite initial position");
  }
  const std::size_t n = n_points - 1;
  PathPolicyStats st;
  auto record = [&](std::size_t k, double trade) {
    const double cost = eps * S[k] * std::abs(trade);
    if (ledger) {
      const double price = trade > 0.0 ? (1.0 + eps) * S[k] : (1.0 - eps) * S[k];
      ledger->entries.push_back({k, trade, price, cost});
      ledger->cumulative_cost += cost;
    }
    return cost;
  };

  double theta = initial_shares;
  if (start_shares != theta) {
    st.initial_cost = record(0, start_shares - theta);
    if (ledger) ledger->initial_cost = st.initial_cost;
    theta = start_shares;
  }
  if (!position.empty()) position[0] = theta;
  double gain = theta * (S[1] - S[0]);
  double ratio_sum = 0.0;
  std::size_t ratio_n = 0;

  for (std::size_t k = 1; k < n; ++k) {
    // the halfwidth applied at t_k is the one known at t_{k-1}
    const double c = center[k], h = halfwidth[k - 1];
    if (!std::isfinite(c) || !std::isfinite(h) || !std::isfinite(halfwidth[k]) || !std::isfinite(S[k])) {
      throw ParameterError("run_band_path: NaN in band or price inputs");
    }
    double target = theta;
    if (h <= 0.0) {
      target = c;
      st.degenerate = true;
    } else {
      target = std::clamp(theta, c - h, c + h);
      if (std::abs(target - c) > h * (1.0 + 1e-12)) ++st.outside;
    }
    if (target != theta) {
      st.total_cost += record(k, target - theta);
      ++st.n_trades;
      theta = target;
    }
    if (halfwidth[k] > 0.0) {
      const double r = (theta - c) / halfwidth[k];
      ratio_sum += r * r;
      ++ratio_n;
    }
    if (!position.empty()) position[k] = theta;
    gain += theta * (S[k + 1] - S[k]);
  }
  if (!position.empty()) position[n] = theta;
  st.gain = gain;
  st.terminal_wealth = x0 + gain - st.total_cost - st.initial_cost;
  st.ratio2_mean = ratio_n ? ratio_sum / static_cast<double>(ratio_n) : 0.0;
  return st;
}

double placement_draw(std::uint64_t seed, std::uint64_t path) {
  PathRng rng(seed, path, 1);
  return 2.0 * norm_cdf(rng.normal()) - 1.0;
}

PolicyRunResult run_band_policy(const PathSet& paths, const BandSpec& band, double eps, double x0,
                                double initial_shares, InitialPlacement placement, unsigned threads) {
  band.validate();
  if (!(band.grid == paths.grid())) throw ParameterError("run_band_policy: band and paths use different grids");
  if (!(eps >= 0.0)) throw ParameterError("run_band_policy: eps must be >= 0");
  const auto& S = paths.factor("S");
  if (band.center.rows() != S.rows()) throw ParameterError("run_band_policy: band rows differ from path count");
  const std::size_t n_paths = paths.n_paths();

  PolicyRunResult out;
  out.terminal_wealth.resize(n_paths);
  out.total_cost.resize(n_paths);
  out.initial_cost.resize(n_paths);
  out.position.resize(S.rows(), S.cols());
  out.ledgers.resize(n_paths);
  std::vector<double> ratio(n_paths);
  std::vector<std::size_t> outside(n_paths);
  std::vector<char> degenerate(n_paths);

  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      auto row = [&](const PathMatrix& m) { return std::span<const double>(m.row(r).data(), m.cols()); };
      const double c0 = band.center(r, 0), h0 = band.halfwidth(r, 0);
      const double start = placement == InitialPlacement::Stationary ? c0 + placement_draw(paths.seed(), i) * h0 : c0;
      const auto st = run_band_path(row(S), row(band.center), row(band.halfwidth), eps, x0, initial_shares, start,
                                    std::span<double>(out.position.row(r).data(), out.position.cols()),
                                    &out.ledgers[i]);
      out.terminal_wealth[i] = st.terminal_wealth;
      out.total_cost[i] = st.total_cost;
      out.initial_cost[i] = st.initial_cost;
      ratio[i] = st.ratio2_mean;
      outside[i] = st.outside;
      degenerate[i] = st.degenerate;
    }
  });
  out.deviation = out.position - band.center;
  out.ergodic_ratio = mean_estimate(ratio);
  for (std::size_t i = 0; i < n_paths; ++i) {
    out.outside += outside[i];
    out.degenerate = out.degenerate || degenerate[i];
  }
  return out;
}

namespace {

/// exp(-p (x - min x)) and its mean; the shift keeps every term <= 1.
struct Weights {
  std::vector<double> w;
  double mean = 0.0;
  double shift = 0.0;
};

Weights utility_weights(std::span<const double> x, double p) {
  if (x.empty()) throw ParameterError("certainty_equivalent: empty sample");
  if (!(p > 0.0)) throw ParameterError("certainty_equivalent: p must be positive");
  Weights out;
  out.shift = *std::min_element(x.begin(), x.end());
  if (!std::isfinite(out.shift)) throw ParameterError("certainty_equivalent: non-finite wealth");
  out.w.resize(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw ParameterError("certainty_equivalent: non-finite wealth");
    sum += (out.w[i] = std::exp(-p * (x[i] - out.shift)));
  }
  out.mean = sum / static_cast<double>(x.size());
  return out;
}

double ce_value(const Weights& w, double p) { return w.shift - std::log(w.mean) / p; }

}  // namespace

Estimate certainty_equivalent(std::span<const double> wealth, double p) {
  const Weights w = utility_weights(wealth, p);
  std::vector<double> infl(wealth.size());
  for (std::size_t i = 0; i < wealth.size(); ++i) infl[i] = -(w.w[i] / w.mean - 1.0) / p;
  return {ce_value(w, p), influence_se(infl)};
}

std::vector<double> ce_gap_influence(std::span<const double> a, std::span<const double> b, double p) {
  if (a.size() != b.size()) throw ParameterError("ce_gap: samples must be paired");
  const Weights wa = utility_weights(a, p), wb = utility_weights(b, p);
  std::vector<double> infl(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) infl[i] = (wb.w[i] / wb.mean - wa.w[i] / wa.mean) / p;
  return infl;
}

Estimate certainty_equivalent_gap(std::span<const double> a, std::span<const double> b, double p) {
  if (a.size() != b.size()) throw ParameterError("ce_gap: samples must be paired");
  const double v = ce_value(utility_weights(a, p), p) - ce_value(utility_weights(b, p), p);
  return {v, influence_se(ce_gap_influence(a, b, p))};
}

double bs_predicted_loss(const BlackScholesMarket& market, const ExponentialPreference& pref, double eps, double T) {
  const double m = market.mu / (pref.p * market.sigma * market.sigma);
  const double h = monetary_halfwidth_cash_gamma(pref.p, eps, -m);
  return 0.5 * pref.p * h * h * market.sigma * market.sigma * T;
}

std::vector<WelfareReport> welfare_sweep(const BlackScholesMarket& market, const ExponentialPreference& pref,
                                         const std::vector<double>& eps_list, const TimeGrid& grid,
                                         std::size_t n_paths, std::uint64_t seed, const WelfareSettings& settings) {
  market.validate();
  pref.validate();
  if (eps_list.empty()) throw ParameterError("welfare: no eps values");
  for (double e : eps_list)
    if (!(e >= 0.0)) throw ParameterError("welfare: eps must be >= 0");
  if (n_paths < 2) throw ParameterError("welfare: need at least two paths");

  const std::size_t n_eps = eps_list.size();
  std::vector<BandRule> rules;
  for (double e : eps_list) rules.push_back(pure_investment_band(market, pref, e));
  const double theta = market.mu / market.sigma;
  const double x0 = pref.x0;

  // per-path outputs, eps-major
  std::vector<double> X0(n_paths), Z(n_paths);
  std::vector<std::vector<double>> Xm(n_eps, std::vector<double>(n_paths)), Xe = Xm, ratio = Xm, cost = Xm,
                                                                                 init = Xm;
  std::vector<std::vector<std::size_t>> trades(n_eps, std::vector<std::size_t>(n_paths)), outside = trades;
  std::vector<std::vector<char>> degenerate(n_eps, std::vector<char>(n_paths));

  for_each_chunk(n_paths, settings.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> s(grid.n_points()), dW(grid.n_steps()), c(grid.n_points()), h(grid.n_points());
    for (std::size_t i = begin; i < end; ++i) {
      if (!gbm_path(market.params(), grid, seed, i, s, dW)) throw ParameterError("welfare: price path overflowed");
      double x = x0, log_z = 0.0;
      for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        x += rules[0](grid.t(k), s[k]).center * (s[k + 1] - s[k]);
        log_z += -theta * dW[k] - 0.5 * theta * theta * grid.dt(k);
      }
      X0[i] = x;
      Z[i] = std::exp(log_z);
      const double u = placement_draw(seed, i);
      for (std::size_t j = 0; j < n_eps; ++j) {
        for (std::size_t k = 0; k < grid.n_points(); ++k) {
          const BandPoint b = rules[j](grid.t(k), s[k]);
          c[k] = b.center;
          h[k] = b.halfwidth;
        }
        const double start = settings.placement == InitialPlacement::Stationary ? c[0] + u * h[0] : c[0];
        const auto st = run_band_path(s, c, h, eps_list[j], x0, 0.0, start);
        Xm[j][i] = x0 + st.gain;
        Xe[j][i] = Xm[j][i] - st.total_cost;
        ratio[j][i] = st.ratio2_mean;
        cost[j][i] = st.total_cost;
        init[j][i] = st.initial_cost;
        trades[j][i] = st.n_trades;
        outside[j][i] = st.outside;
        degenerate[j][i] = st.degenerate;
      }
    }
  });

  const double p = pref.p;
  const double T = grid.T() - grid.t0();
  const Estimate ce0 = certainty_equivalent(X0, p);
  std::vector<WelfareReport> reports;
  for (std::size_t j = 0; j < n_eps; ++j) {
    WelfareReport r;
    r.eps = eps_list[j];
    r.ce_frictionless = ce0;
    r.ce_frictionless_exact = x0 + market.mu * market.mu * T / (2.0 * p * market.sigma * market.sigma);
    r.ce_friction = certainty_equivalent(Xe[j], p);
    r.predicted_loss = bs_predicted_loss(market, pref, eps_list[j], T);
    r.ergodic_ratio = mean_estimate(ratio[j]);
    r.mean_cost = mean_estimate(cost[j]);
    r.initial_cost = mean_estimate(init[j]);
    for (std::size_t i = 0; i < n_paths; ++i) {
      r.trades += trades[j][i];
      r.outside += outside[j][i];
      r.degenerate = r.degenerate || degenerate[j][i];
    }

    const auto psi_disp = ce_gap_influence(X0, Xm[j], p);
    const auto psi_dir = ce_gap_influence(Xm[j], Xe[j], p);
    const double raw_disp = certainty_equivalent_gap(X0, Xm[j], p).value;
    const double raw_dir = certainty_equivalent_gap(Xm[j], Xe[j], p).value;

    // Z_T * (X^mid - X^0) is a discrete martingale transform with zero mean.
    std::vector<double> g(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) g[i] = Z[i] * (Xm[j][i] - X0[i]);
    const Estimate gbar = mean_estimate(g);
    const double var_g = sample_variance(g);
    double beta = 0.0;
    if (settings.control_variate && var_g > 0.0) {
      const double mp = mean_estimate(psi_disp).value;
      double cov = 0.0;
      for (std::size_t i = 0; i < n_paths; ++i) cov += (psi_disp[i] - mp) * (g[i] - gbar.value);
      beta = cov / static_cast<double>(n_paths - 1) / var_g;
    }
    r.cv_beta = beta;
    std::vector<double> adj_disp(n_paths), adj_tot(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) {
      adj_disp[i] = psi_disp[i] - beta * g[i];
      adj_tot[i] = psi_disp[i] + psi_dir[i] - beta * g[i];
    }
    r.displacement_loss = {raw_disp - beta * gbar.value, influence_se(adj_disp)};
    r.direct_cost_loss = {raw_dir, influence_se(psi_dir)};
    r.loss = {r.displacement_loss.value + r.direct_cost_loss.value, influence_se(adj_tot)};
    reports.push_back(r);
  }
  return reports;
}

WelfareReport welfare_experiment(const BlackScholesMarket& market, const ExponentialPreference& pref, double eps,
                                 const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                 const WelfareSettings& settings) {
  return welfare_sweep(market, pref, {eps}, grid, n_paths, seed, settings).front();
}

ScalingStudy scaling_study(const BlackScholesMarket& market, const ExponentialPreference& pref,
                           const std::vector<double>& eps_list, const TimeGrid& grid, std::size_t n_paths,
                           std::uint64_t seed, const WelfareSettings& settings) {
  if (eps_list.size() < 3) throw ParameterError("scaling_study: at least three eps values are required");
  ScalingStudy out;
  out.rows = welfare_sweep(market, pref, eps_list, grid, n_paths, seed, settings);
  std::vector<double> x, y, se;
  for (const auto& r : out.rows) {
    if (r.eps == 0.0) {
      out.warnings.push_back("eps=0 excluded from the log-log fit");
      continue;
    }
    if (!(r.loss.value > 0.0)) {
      out.warnings.push_back("eps=" + std::to_string(r.eps) + ": nonpositive loss estimate excluded from the fit");
      continue;
    }
    x.push_back(std::log(r.eps));
    y.push_back(std::log(r.loss.value));
    se.push_back(r.loss.se / r.loss.value);
  }
  if (x.size() < 2) throw ParameterError("scaling_study: fewer than two usable eps values");
  out.fit = linear_fit(x, y, se);
  return out;
}

void write_ledger_csv(const PathSet& paths, const BandSpec& band, const PolicyRunResult& result,
                      std::ostream& out) {
  const auto& S = paths.factor("S");
  const auto& grid = paths.grid();
  const auto old_precision = out.precision(17);
  out << "path_id,step,t,S,phi_center,halfwidth,position,trade,cost\n";
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    const auto& entries = result.ledgers[static_cast<std::size_t>(i)].entries;
    std::size_t next = 0;
    for (std::size_t k = 0; k < grid.n_points(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      double trade = 0.0, cost = 0.0;
      if (next < entries.size() && entries[next].step == k) {
        trade = entries[next].shares;
        cost = entries[next].cost;
        ++next;
      }
      out << i << ',' << k << ',' << grid.t(k) << ',' << S(i, c) << ',' << band.center(i, c) << ','
          << band.halfwidth(i, c) << ',' << result.position(i, c) << ',' << trade << ',' << cost << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace tcost

#include "tcost/frictionless.hpp"

#include "tcost/parallel.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace tcost {

void BlackScholesMarket::validate() const { params().validate(); }

void BasisRiskMarket::validate() const {
  traded.validate();
  nontraded.validate();
  if (!(std::abs(rho) <= 1.0)) throw ParameterError("BasisRiskMarket: |rho| must be <= 1");
}

void ExponentialPreference::validate() const {
  if (!(p > 0.0)) throw ParameterError("ExponentialPreference: p must be positive");
  if (!std::isfinite(x0)) throw ParameterError("ExponentialPreference: x0 must be finite");
}

// ---------------------------------------------------------------------------
// Claims

ClaimSpec ClaimSpec::call(double strike, double maturity) {
  ClaimSpec c;
  c.kind = ClaimKind::Call;
  c.strike = strike;
  c.maturity = maturity;
  c.label = "call";
  return c;
}

ClaimSpec ClaimSpec::put(double strike, double maturity) {
  ClaimSpec c = call(strike, maturity);
  c.kind = ClaimKind::Put;
  c.label = "put";
  return c;
}

ClaimSpec ClaimSpec::custom(std::function<double(double)> payoff, double maturity, std::string label) {
  ClaimSpec c;
  c.kind = ClaimKind::Custom;
  c.maturity = maturity;
  c.payoff_fn = std::move(payoff);
  c.label = std::move(label);
  return c;
}

ClaimSpec ClaimSpec::log_contract(double strike, double maturity) {
  if (!(strike > 0.0)) throw ParameterError("log contract: strike must be positive");
  ClaimSpec c = call(strike, maturity);
  c.kind = ClaimKind::Log;
  c.label = "log";
  return c;
}

void ClaimSpec::validate(double horizon) const {
  if (!(maturity > 0.0)) throw ParameterError("claim: maturity must be positive");
  if (maturity > horizon * (1.0 + 1e-12)) throw ParameterError("claim: maturity beyond the horizon");
  if (kind != ClaimKind::Custom && !(strike > 0.0)) throw ParameterError("claim: strike must be positive");
  if (kind == ClaimKind::Custom && !payoff_fn) throw ParameterError("claim: custom payoff missing");
  if (!std::isfinite(quantity)) throw ParameterError("claim: quantity must be finite");
}

double ClaimSpec::payoff(double s) const {
  switch (kind) {
    case ClaimKind::Call: return quantity * std::max(s - strike, 0.0);
    case ClaimKind::Put: return quantity * std::max(strike - s, 0.0);
    case ClaimKind::Log: return -quantity * std::log(s / strike);
    case ClaimKind::Custom: return quantity * payoff_fn(s);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Pricing

namespace {

/// E[w(Z) payoff(x exp((m - s^2/2) tau + s sqrt(tau) Z))] by adaptive
/// Gauss-Kronrod over z in [-9, 9]. With w = 1, z / (s x) and
/// (z^2 - 1 - s z) / (s x)^2 this gives value, delta and gamma.
Greeks quadrature_greeks(const std::function<double(double)>& payoff, double x, double drift, double sigma,
                         double tau) {
  using boost::math::quadrature::gauss_kronrod;
  const double vol = sigma * std::sqrt(tau);
  const double shift = (drift - 0.5 * sigma * sigma) * tau;
  auto integrate = [&](auto weight) {
    auto f = [&](double z) { return weight(z) * payoff(x * std::exp(shift + vol * z)) * norm_pdf(z); };
    double total = 0.0;
    for (int i = 0; i < 6; ++i) total += gauss_kronrod<double, 31>::integrate(f, -9.0 + 3.0 * i, -6.0 + 3.0 * i, 20, 1e-13);
    return total;
  };
  const double value = integrate([](double) { return 1.0; });
  const double delta = integrate([&](double z) { return z / (vol * x); });
  const double gamma = integrate([&](double z) { return (z * z - 1.0 - vol * z) / (vol * vol * x * x); });
  return {delta, gamma, value};
}

}  // namespace

Greeks lognormal_claim(const ClaimSpec& claim, double t, double x, double drift, double sigma) {
  if (!(x > 0.0)) throw ParameterError("lognormal_claim: underlying must be positive");
  const double tau = claim.maturity - t;
  const double q = claim.quantity;

  if (tau <= 0.0) {
    Greeks g{0.0, 0.0, claim.payoff(x)};
    if (claim.kind == ClaimKind::Call) g.delta = x > claim.strike ? q : 0.0;
    if (claim.kind == ClaimKind::Put) g.delta = x < claim.strike ? -q : 0.0;
    if (claim.kind == ClaimKind::Log) g.delta = -q / x;
    if (claim.kind == ClaimKind::Custom) {
      const double h = 1e-4 * x;
      g.delta = (claim.payoff(x + h) - claim.payoff(x - h)) / (2.0 * h);
    }
    return g;
  }

  if (claim.kind == ClaimKind::Log) {
    const double mean = -std::log(x / claim.strike) - (drift - 0.5 * sigma * sigma) * tau;
    return {-q / x, q / (x * x), q * mean};
  }
  if (claim.kind == ClaimKind::Custom) {
    const Greeks g = quadrature_greeks(claim.payoff_fn, x, drift, sigma, tau);
    return {q * g.delta, q * g.gamma, q * g.value};
  }

  const double vol = sigma * std::sqrt(tau);
  const double growth = std::exp(drift * tau);
  const double d1 = (std::log(x / claim.strike) + (drift + 0.5 * sigma * sigma) * tau) / vol;
  const double d2 = d1 - vol;
  const double call = x * growth * norm_cdf(d1) - claim.strike * norm_cdf(d2);
  const double gamma = growth * norm_pdf(d1) / (x * vol);
  if (claim.kind == ClaimKind::Call) return {q * growth * norm_cdf(d1), q * gamma, q * call};
  // put-call parity: P = C - x e^{m tau} + K
  return {q * (growth * norm_cdf(d1) - growth), q * gamma, q * (call - x * growth + claim.strike)};
}

ClaimMoments lognormal_claim_moments(const ClaimSpec& claim, double t, double x, double drift, double sigma) {
  if (!(x > 0.0)) throw ParameterError("lognormal_claim_moments: underlying must be positive");
  const double tau = claim.maturity - t;
  if (tau <= 0.0) return {claim.payoff(x), 0.0};
  const double q = claim.quantity;
  if (claim.kind == ClaimKind::Log) {
    const double mean = -std::log(x / claim.strike) - (drift - 0.5 * sigma * sigma) * tau;
    return {q * mean, q * q * sigma * sigma * tau};
  }
  if (claim.kind == ClaimKind::Custom) {
    const double m1 = quadrature_greeks(claim.payoff_fn, x, drift, sigma, tau).value;
    const double m2 =
        quadrature_greeks([&claim](double s) { const double v = claim.payoff_fn(s); return v * v; }, x, drift, sigma, tau)
            .value;
    return {q * m1, q * q * (m2 - m1 * m1)};
  }
  // E[X^k 1{X > K}] = x^k exp(k m tau + k(k-1) sigma^2 tau / 2) N(d_k)
  const double vol = sigma * std::sqrt(tau);
  const double K = claim.strike;
  auto partial = [&](int k, bool above) {
    const double d = (std::log(x / K) + (drift + (k - 0.5) * sigma * sigma) * tau) / vol;
    const double scale = std::pow(x, k) * std::exp(k * drift * tau + 0.5 * k * (k - 1) * sigma * sigma * tau);
    return scale * norm_cdf(above ? d : -d);
  };
  const bool call = claim.kind == ClaimKind::Call;
  const double sign = call ? 1.0 : -1.0;
  const double m1 = sign * (partial(1, call) - K * partial(0, call));
  const double m2 = partial(2, call) - 2.0 * K * partial(1, call) + K * K * partial(0, call);
  return {q * m1, q * q * (m2 - m1 * m1)};
}

Greeks bs_delta_gamma(const ClaimSpec& claim, double t, double S, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("bs_delta_gamma: sigma must be positive");
  return lognormal_claim(claim, t, S, 0.0, sigma);
}

double bs_pure_investment(const BlackScholesMarket& market, const ExponentialPreference& pref,
                          double /*t*/, double S) {
  if (!(S > 0.0)) throw ParameterError("bs_pure_investment: S must be positive");
  return market.mu / (pref.p * market.sigma * market.sigma * S);
}

double bs_pure_investment_sensitivity(const BlackScholesMarket& market,
                                      const ExponentialPreference& pref, double S) {
  return -market.mu / (pref.p * market.sigma * market.sigma * S * S);
}

// ---------------------------------------------------------------------------
// Strategy decomposition

namespace {

void check_same_shape(const PathMatrix& strategy, const PathSet& paths) {
  const auto& s = paths.factor("S");
  if (strategy.rows() != s.rows() || strategy.cols() != s.cols()) {
    throw ParameterError("strategy and price paths are not on the same grid");
  }
}

std::size_t window_start(std::size_t k, std::size_t w, std::size_t n) {
  const std::size_t lo = k > w / 2 ? k - w / 2 : 0;
  return std::min(lo, n - w);
}

}  // namespace

StrategyDecomposition decompose_strategy(const PathMatrix& strategy, const PathSet& paths,
                                         std::optional<std::size_t> window) {
  check_same_shape(strategy, paths);
  const auto& s = paths.factor("S");
  const auto& grid = paths.grid();
  const std::size_t n = grid.n_steps();
  const std::size_t w = window.value_or(default_window(grid));
  if (w == 0 || w > n) throw ParameterError("decompose_strategy: bad window");

  StrategyDecomposition out{PathMatrix(s.rows(), s.cols()), PathMatrix(s.rows(), s.cols()),
                            PathMatrix(s.rows(), s.cols()), 0};
  std::vector<double> tp(n + 1, 0.0), cross(n + 1), ss(n + 1), dphi(n + 1), ds(n + 1);
  for (std::size_t k = 0; k < n; ++k) tp[k + 1] = tp[k] + grid.dt(k);

  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto a = static_cast<Eigen::Index>(k);
      const double dx = strategy(i, a + 1) - strategy(i, a);
      const double dS = s(i, a + 1) - s(i, a);
      cross[k + 1] = cross[k] + dx * dS;
      ss[k + 1] = ss[k] + dS * dS;
      dphi[k + 1] = dphi[k] + dx;
      ds[k + 1] = ds[k] + dS;
    }
    for (std::size_t k = 0; k <= n; ++k) {
      const std::size_t lo = window_start(k, w, n), hi = lo + w;
      const auto kk = static_cast<Eigen::Index>(k);
      const double var_s = ss[hi] - ss[lo];
      const double span_t = tp[hi] - tp[lo];
      if (!(var_s > 0.0)) {
        out.gamma(i, kk) = out.drift(i, kk) = out.cash_gamma(i, kk) = std::numeric_limits<double>::quiet_NaN();
        ++out.undefined_steps;
        continue;
      }
      const double g = (cross[hi] - cross[lo]) / var_s;
      out.gamma(i, kk) = g;
      out.drift(i, kk) = ((dphi[hi] - dphi[lo]) - g * (ds[hi] - ds[lo])) / span_t;
      out.cash_gamma(i, kk) = g * s(i, kk) * s(i, kk);
    }
  }
  return out;
}

StrategyDecomposition decompose_strategy(const PathMatrix& strategy, const PathSet& paths,
                                         const std::function<double(double, double)>& sensitivity) {
  check_same_shape(strategy, paths);
  const auto& s = paths.factor("S");
  const auto& grid = paths.grid();
  const std::size_t n = grid.n_steps();
  StrategyDecomposition out{PathMatrix(s.rows(), s.cols()), PathMatrix(s.rows(), s.cols()),
                            PathMatrix(s.rows(), s.cols()), 0};
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (std::size_t k = 0; k <= n; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double g = sensitivity(grid.t(k), s(i, kk));
      // forward increment, backward at the last point
      const auto a = k < n ? kk : kk - 1;
      const double dt = grid.dt(static_cast<std::size_t>(a));
      out.gamma(i, kk) = g;
      out.drift(i, kk) = ((strategy(i, a + 1) - strategy(i, a)) - g * (s(i, a + 1) - s(i, a))) / dt;
      out.cash_gamma(i, kk) = g * s(i, kk) * s(i, kk);
    }
  }
  return out;
}

PathMatrix combined_target(const PathMatrix& phi, const PathMatrix& hedge, double n) {
  if (phi.rows() != hedge.rows() || phi.cols() != hedge.cols()) {
    throw ParameterError("combined_target: grid mismatch");
  }
  return phi + n * hedge;
}

// ---------------------------------------------------------------------------
// Measures and basis risk

MeasureShift entropy_measure_shift(const BlackScholesMarket& market) {
  market.validate();
  return {0.0, 0.0, false};
}

MeasureShift entropy_measure_shift(const BasisRiskMarket& market) {
  market.validate();
  const double lambda = market.traded.mu / market.traded.sigma;
  return {0.0, market.nontraded.mu - market.rho * market.nontraded.sigma * lambda, true};
}

BasisRiskMarket under_entropy_measure(const BasisRiskMarket& market) {
  const auto shift = entropy_measure_shift(market);
  BasisRiskMarket q = market;
  q.traded.mu = shift.s_drift;
  q.nontraded.mu = shift.y_drift;
  return q;
}

ValueHedge basis_claim_value_hedge(const BasisRiskMarket& market, const ClaimSpec& claim, double t,
                                   double S, double Y) {
  if (claim.underlying != Underlying::NonTraded) {
    throw ParameterError("basis_claim_value_hedge: claim must be written on the non-traded factor");
  }
  if (!(std::abs(market.rho) <= 1.0)) throw ParameterError("basis_claim_value_hedge: rho undefined");
  const double m = entropy_measure_shift(market).y_drift;
  const Greeks g = lognormal_claim(claim, t, Y, m, market.nontraded.sigma);
  if (t >= claim.maturity) return {g.value, 0.0};
  const double xi = market.rho * market.nontraded.sigma * Y * g.delta / (market.traded.sigma * S);
  return {g.value, xi};
}

HedgeSensitivity basis_hedge_sensitivity(const BasisRiskMarket& market, const ClaimSpec& claim,
                                         double t, double S, double Y, double rel_bump) {
  auto xi = [&](double s, double y) { return basis_claim_value_hedge(market, claim, t, s, y).xi; };
  const double hs = rel_bump * S, hy = rel_bump * Y;
  return {xi(S, Y), (xi(S + hs, Y) - xi(S - hs, Y)) / (2.0 * hs),
          (xi(S, Y + hy) - xi(S, Y - hy)) / (2.0 * hy)};
}

HedgingError hedging_error_second_moment(const BasisRiskMarket& market, const ClaimSpec& claim,
                                         const TimeGrid& grid, std::size_t n_paths,
                                         std::uint64_t seed, unsigned threads) {
  market.validate();
  claim.validate(grid.T());
  if (n_paths < 2) throw ParameterError("hedging_error_second_moment: need at least two paths");
  const BasisRiskMarket q = under_entropy_measure(market);
  const std::size_t k_mat = grid.index_at_or_before(claim.maturity);
  const double v0 = basis_claim_value_hedge(market, claim, grid.t0(), market.traded.S0, market.nontraded.S0).value;

  std::vector<double> err2(n_paths), h(n_paths);
  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> s(grid.n_points()), y(grid.n_points());
    for (std::size_t i = begin; i < end; ++i) {
      correlated_pair_path(q.traded, q.nontraded, q.rho, grid, seed, i, s, y);
      double gain = 0.0;
      for (std::size_t k = 0; k < k_mat; ++k) {
        gain += basis_claim_value_hedge(market, claim, grid.t(k), s[k], y[k]).xi * (s[k + 1] - s[k]);
      }
      h[i] = claim.payoff(y[k_mat]);
      const double e = h[i] - v0 - gain;
      err2[i] = e * e;
    }
  });

  HedgingError out;
  out.second_moment = mean_estimate(err2);
  out.mean_h = mean_estimate(h);
  out.value0 = v0;
  out.n_paths = n_paths;
  std::vector<double> centred(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) centred[i] = (h[i] - out.mean_h.value) * (h[i] - out.mean_h.value);
  out.variance_h = {sample_variance(h), influence_se(centred)};
  return out;
}

}  // namespace tcost

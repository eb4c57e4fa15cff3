#include "tcost/notrade.hpp"

#include "tcost/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcost {

double band_halfwidth(double p, double eps, double S, double c_phi, double c_S) {
  if (!(p > 0.0)) throw ParameterError("band_halfwidth: p must be positive");
  if (!(eps >= 0.0)) throw ParameterError("band_halfwidth: eps must be >= 0");
  if (!(c_S > 0.0)) throw ParameterError("band_halfwidth: c_S must be positive (degenerate market)");
  if (!(c_phi >= 0.0)) throw ParameterError("band_halfwidth: c_phi must be >= 0");
  return std::cbrt(1.5 / p * (c_phi / c_S) * eps * S);
}

PathMatrix band_halfwidth(double p, double eps, const PathMatrix& S, const PathMatrix& c_phi,
                          const PathMatrix& c_S) {
  if (S.rows() != c_phi.rows() || S.cols() != c_phi.cols() || S.rows() != c_S.rows() ||
      S.cols() != c_S.cols()) {
    throw ParameterError("band_halfwidth: shape mismatch");
  }
  PathMatrix out(S.rows(), S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) out(i, k) = band_halfwidth(p, eps, S(i, k), c_phi(i, k), c_S(i, k));
  return out;
}

double monetary_halfwidth_cash_gamma(double p, double eps, double cash_gamma) {
  if (!(p > 0.0)) throw ParameterError("monetary_halfwidth_cash_gamma: p must be positive");
  if (!(eps >= 0.0)) throw ParameterError("monetary_halfwidth_cash_gamma: eps must be >= 0");
  return std::cbrt(1.5 / p * cash_gamma * cash_gamma * eps);
}

PathMatrix monetary_halfwidth_cash_gamma(double p, double eps, const PathMatrix& cash_gamma) {
  return cash_gamma.unaryExpr([&](double g) { return monetary_halfwidth_cash_gamma(p, eps, g); });
}

void BandSpec::validate() const {
  const auto cols = static_cast<Eigen::Index>(grid.n_points());
  if (center.cols() != cols || halfwidth.cols() != cols || center.rows() != halfwidth.rows()) {
    throw ParameterError("BandSpec: series do not match the grid");
  }
  if (!center.allFinite() || !halfwidth.allFinite()) throw ParameterError("BandSpec: non-finite values");
  if ((halfwidth.array() < 0.0).any()) throw ParameterError("BandSpec: negative halfwidth");
}

LossEstimate welfare_loss(double p, const BandSpec& band, const PathMatrix& c_S, const PathSet& paths) {
  if (paths.measure() == Measure::P) {
    throw ParameterError("welfare_loss: expectation must be taken under Q or Q^H, got paths under P");
  }
  band.validate();
  if (!(band.grid == paths.grid())) throw ParameterError("welfare_loss: band and paths use different grids");
  if (c_S.rows() != band.halfwidth.rows() || c_S.cols() != band.halfwidth.cols()) {
    throw ParameterError("welfare_loss: c_S shape mismatch");
  }
  if (static_cast<std::size_t>(band.halfwidth.rows()) != paths.n_paths()) {
    throw ParameterError("welfare_loss: band rows differ from path count");
  }
  LossEstimate out;
  out.measure = paths.measure();
  const auto& h = band.halfwidth;
  auto integrand = [&](std::size_t i, std::size_t k) {
    const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(k);
    return 0.5 * p * h(r, c) * h(r, c) * c_S(r, c);
  };
  const Estimate e = path_integral_mean(paths, integrand, &out.samples);
  out.value = e.value;
  out.std_error = e.se;
  out.integrand_trace = (0.5 * p * (h.array().square() * c_S.array()).colwise().mean()).matrix();
  return out;
}

std::string to_string(PriceRegime r) {
  switch (r) {
    case PriceRegime::General: return "general";
    case PriceRegime::Complete: return "complete";
    case PriceRegime::MarginalInvestment: return "marginal_investment";
    case PriceRegime::MarginalOption: return "marginal_option";
    case PriceRegime::IncompleteMartingale: return "incomplete_martingale";
    case PriceRegime::IncompleteSmallN: return "incomplete_smalln";
  }
  return "general";
}

PriceQuote indifference_price(const LossEstimate& loss_with, const LossEstimate& loss_without, double pi0,
                              double quantity) {
  if (quantity == 0.0) throw ParameterError("indifference_price: quantity must be nonzero");
  PriceQuote q;
  q.regime = PriceRegime::General;
  q.frictionless = pi0;
  q.correction = (loss_with.value - loss_without.value) / quantity;
  if (!loss_with.samples.empty() && loss_with.samples.size() == loss_without.samples.size()) {
    std::vector<double> diff(loss_with.samples.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = loss_with.samples[i] - loss_without.samples[i];
    q.correction_se = mean_estimate(diff).se / std::abs(quantity);
  } else {
    q.correction_se = std::hypot(loss_with.std_error, loss_without.std_error) / std::abs(quantity);
  }
  q.total = q.frictionless + q.correction;
  return q;
}

namespace {

void check_series(const PathMatrix& m, const PathSet& paths, const char* what) {
  const auto& s = paths.factor("S");
  if (m.rows() != s.rows() || m.cols() != s.cols()) {
    throw ParameterError(std::string(what) + ": series shape does not match the paths");
  }
}

double cost_scale(double p, double eps) { return std::cbrt(9.0 * p / 32.0) * std::cbrt(eps * eps); }

}  // namespace

Estimate complete_price_correction(double p, double eps, const PathMatrix& cash_gamma_phi,
                                   const PathMatrix& cash_gamma_H, const PathMatrix& c_S,
                                   const PathSet& paths) {
  if (!(p > 0.0) || !(eps >= 0.0)) throw ParameterError("complete_price_correction: need p > 0, eps >= 0");
  check_series(cash_gamma_phi, paths, "complete_price_correction");
  check_series(cash_gamma_H, paths, "complete_price_correction");
  check_series(c_S, paths, "complete_price_correction");
  const auto& S = paths.factor("S");
  const double scale = cost_scale(p, eps);
  const Estimate e = path_integral_mean(paths, [&](std::size_t i, std::size_t k) {
    const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(k);
    const double a = cash_gamma_phi(r, c), b = cash_gamma_H(r, c);
    return (abs_pow43(a + b) - abs_pow43(a)) * c_S(r, c) / (S(r, c) * S(r, c));
  });
  return {scale * e.value, scale * e.se};
}

PriceQuote marginal_investment_price(double p, double n, double eps, const PathMatrix& cash_gamma_H,
                                     const PathMatrix& c_S, const PathSet& paths, double pi0) {
  if (!(p > 0.0) || !(eps >= 0.0) || !(n > 0.0)) {
    throw ParameterError("marginal_investment_price: need p > 0, n > 0, eps >= 0");
  }
  check_series(cash_gamma_H, paths, "marginal_investment_price");
  check_series(c_S, paths, "marginal_investment_price");
  const auto& S = paths.factor("S");
  const double scale = std::cbrt(9.0 * p * n * eps * eps / 32.0);
  const Estimate e = path_integral_mean(paths, [&](std::size_t i, std::size_t k) {
    const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(k);
    return abs_pow43(cash_gamma_H(r, c)) * c_S(r, c) / (S(r, c) * S(r, c));
  });
  PriceQuote q;
  q.regime = PriceRegime::MarginalInvestment;
  q.frictionless = pi0;
  q.correction = scale * e.value;
  q.correction_se = scale * e.se;
  q.total = pi0 + q.correction;
  return q;
}

MarginalOptionExpansion marginal_option_expansion(double p, double eps, double n,
                                                  const PathMatrix& cash_gamma_phi,
                                                  const PathMatrix& cash_gamma_H, const PathMatrix& c_S,
                                                  const PathSet& paths, double pi0) {
  if (!(p > 0.0) || !(eps >= 0.0)) throw ParameterError("marginal_option_expansion: need p > 0, eps >= 0");
  check_series(cash_gamma_phi, paths, "marginal_option_expansion");
  check_series(cash_gamma_H, paths, "marginal_option_expansion");
  check_series(c_S, paths, "marginal_option_expansion");
  const std::size_t steps = paths.grid().n_steps();
  for (Eigen::Index i = 0; i < cash_gamma_phi.rows(); ++i)
    for (std::size_t k = 0; k < steps; ++k)
      if (cash_gamma_phi(i, static_cast<Eigen::Index>(k)) == 0.0) {
        throw ParameterError(
            "marginal_option_expansion: own cash gamma vanishes on a path; use the marginal investment regime");
      }

  const auto& S = paths.factor("S");
  const double scale = cost_scale(p, eps);
  auto base = [&](std::size_t i, std::size_t k, int order) {
    const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(k);
    const double a = cash_gamma_phi(r, c), ratio = cash_gamma_H(r, c) / a;
    const double w = abs_pow43(a) * c_S(r, c) / (S(r, c) * S(r, c));
    return order == 1 ? (4.0 / 3.0) * ratio * w : (2.0 / 9.0) * ratio * ratio * w;
  };
  MarginalOptionExpansion out;
  std::vector<double> s1, s2;
  const Estimate first = path_integral_mean(paths, [&](std::size_t i, std::size_t k) { return base(i, k, 1); }, &s1);
  const Estimate second = path_integral_mean(paths, [&](std::size_t i, std::size_t k) { return base(i, k, 2); }, &s2);
  out.first_order = {scale * first.value, scale * first.se};
  out.second_order = {scale * n * second.value, scale * std::abs(n) * second.se};
  std::vector<double> total(s1.size());
  for (std::size_t i = 0; i < total.size(); ++i) total[i] = scale * (s1[i] + n * s2[i]);
  const Estimate t = mean_estimate(total);
  out.quote.regime = PriceRegime::MarginalOption;
  out.quote.frictionless = pi0;
  out.quote.correction = t.value;
  out.quote.correction_se = t.se;
  out.quote.total = pi0 + t.value;
  out.band_factor = (1.0 + (2.0 / 3.0) * n * (cash_gamma_H.array() / cash_gamma_phi.array())).matrix();
  return out;
}

namespace {

/// Flattened (a, b, weight) triples so the objective is a single pass.
struct SemistaticData {
  std::vector<double> a, b, w;

  double operator()(double n) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += abs_pow43(a[j] - n * b[j]) * w[j];
    return acc;
  }
};

SemistaticData flatten(const PathMatrix& H, const PathMatrix& Hp, const PathMatrix& c_S, const PathSet& paths) {
  check_series(H, paths, "semistatic_gamma_hedge");
  check_series(Hp, paths, "semistatic_gamma_hedge");
  check_series(c_S, paths, "semistatic_gamma_hedge");
  const auto& S = paths.factor("S");
  const auto& grid = paths.grid();
  const double inv_n = 1.0 / static_cast<double>(paths.n_paths());
  SemistaticData d;
  const std::size_t size = paths.n_paths() * grid.n_steps();
  d.a.reserve(size);
  d.b.reserve(size);
  d.w.reserve(size);
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      d.a.push_back(H(i, c));
      d.b.push_back(Hp(i, c));
      d.w.push_back(c_S(i, c) / (S(i, c) * S(i, c)) * grid.dt(k) * inv_n);
    }
  }
  return d;
}

}  // namespace

double semistatic_objective(const PathMatrix& cash_gamma_H, const PathMatrix& cash_gamma_Hprime,
                            const PathMatrix& c_S, const PathSet& paths, double n_prime) {
  return flatten(cash_gamma_H, cash_gamma_Hprime, c_S, paths)(n_prime);
}

SemistaticResult semistatic_gamma_hedge(const PathMatrix& cash_gamma_H, const PathMatrix& cash_gamma_Hprime,
                                        const PathMatrix& c_S, const PathSet& paths, double lower,
                                        double upper, double tol) {
  if (!(lower < upper)) throw ParameterError("semistatic_gamma_hedge: empty search interval");
  const SemistaticData f = flatten(cash_gamma_H, cash_gamma_Hprime, c_S, paths);
  SemistaticResult res;
  res.scale = f(0.0);
  if (!std::isfinite(res.scale)) throw ParameterError("semistatic_gamma_hedge: objective is not finite");

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto golden = [&](double lo, double hi) {
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    res.evaluations += 2;
    while (hi - lo > tol * std::max(1.0, std::abs(lo) + std::abs(hi))) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - inv_phi * (hi - lo);
        f1 = f(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + inv_phi * (hi - lo);
        f2 = f(x2);
      }
      ++res.evaluations;
    }
    return 0.5 * (lo + hi);
  };
  auto at_edge = [&](double x, double lo, double hi) {
    const double margin = 1e-6 * (hi - lo);
    return x - lo < margin || hi - x < margin;
  };

  double lo = lower, hi = upper;
  double x = golden(lo, hi);
  if (at_edge(x, lo, hi)) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    lo = mid - 10.0 * half;
    hi = mid + 10.0 * half;
    x = golden(lo, hi);
    if (at_edge(x, lo, hi)) {
      throw ParameterError("semistatic_gamma_hedge: minimiser not bracketed by the widened interval");
    }
  }
  res.n_star = x;
  res.objective = f(x);
  res.lower = lo;
  res.upper = hi;
  return res;
}

namespace {

struct XiGreeks {
  double xi = 0.0, d_s = 0.0, d_y = 0.0;
};

XiGreeks xi_greeks(const BasisRiskMarket& market, const ClaimSpec& claim, double t, double s, double y) {
  const auto h = basis_hedge_sensitivity(market, claim, t, s, y);
  return {h.xi, h.d_s, h.d_y};
}

}  // namespace

IncompleteQuote incomplete_martingale_price(double p, double n, double eps, const BasisRiskMarket& market,
                                            const ClaimSpec& claim, const TimeGrid& grid,
                                            std::size_t n_paths, std::uint64_t seed, unsigned threads) {
  market.validate();
  claim.validate(grid.T());
  if (market.traded.mu != 0.0) {
    throw ParameterError(
        "incomplete_martingale_price: traded drift must be zero; use incomplete_smalln_corrections otherwise");
  }
  if (!(p > 0.0) || !(n > 0.0) || !(eps >= 0.0)) throw ParameterError("incomplete_martingale_price: bad p, n or eps");
  if (n_paths < 2) throw ParameterError("incomplete_martingale_price: need at least two paths");

  const BasisRiskMarket q = under_entropy_measure(market);
  const std::size_t k_mat = grid.index_at_or_before(claim.maturity);
  const double v0 = basis_claim_value_hedge(market, claim, grid.t0(), market.traded.S0, market.nontraded.S0).value;
  const double ss = market.traded.sigma, sy = market.nontraded.sigma, rho = market.rho;

  std::vector<double> err2(n_paths), cost(n_paths);
  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> s(grid.n_points()), y(grid.n_points());
    for (std::size_t i = begin; i < end; ++i) {
      correlated_pair_path(q.traded, q.nontraded, rho, grid, seed, i, s, y);
      double gain = 0.0, integral = 0.0;
      for (std::size_t k = 0; k < k_mat; ++k) {
        const XiGreeks g = xi_greeks(market, claim, grid.t(k), s[k], y[k]);
        gain += g.xi * (s[k + 1] - s[k]);
        const double cs = ss * ss * s[k] * s[k];
        const double cxi = g.d_s * g.d_s * cs + g.d_y * g.d_y * sy * sy * y[k] * y[k] +
                           2.0 * rho * g.d_s * g.d_y * ss * sy * s[k] * y[k];
        const double s4 = s[k] * s[k] * s[k] * s[k];
        const double base = std::max(cxi, 0.0) / cs * s4;
        integral += std::cbrt(base * base) * ss * ss * grid.dt(k);
      }
      const double e = claim.payoff(y[k_mat]) - v0 - gain;
      err2[i] = e * e;
      cost[i] = integral;
    }
  });

  IncompleteQuote out;
  out.hedging_error = mean_estimate(err2);
  out.hedge_term = {0.5 * p * n * out.hedging_error.value, 0.5 * p * n * out.hedging_error.se};
  const double scale = std::cbrt(9.0 * p * n * eps * eps / 32.0);
  const Estimate c = mean_estimate(cost);
  out.cost_term = {scale * c.value, scale * c.se};
  out.quote.regime = PriceRegime::IncompleteMartingale;
  out.quote.frictionless = v0 + out.hedge_term.value;
  out.quote.correction = out.cost_term.value;
  out.quote.correction_se = out.cost_term.se;
  out.quote.total = out.quote.frictionless + out.quote.correction;
  return out;
}

SmallNCorrections incomplete_smalln_corrections(double p, double n, double eps, const BasisRiskMarket& market,
                                                const ClaimSpec& claim, const TimeGrid& grid,
                                                std::size_t n_paths, std::uint64_t seed, unsigned threads) {
  market.validate();
  claim.validate(grid.T());
  if (!(p > 0.0) || !(eps >= 0.0)) throw ParameterError("incomplete_smalln_corrections: bad p or eps");
  if (market.traded.mu == 0.0) {
    throw ParameterError("incomplete_smalln_corrections: c^phi vanishes without a risk premium");
  }
  if (n_paths < 2) throw ParameterError("incomplete_smalln_corrections: need at least two paths");

  const double mu = market.traded.mu, ss = market.traded.sigma, sy = market.nontraded.sigma;
  const double rho = market.rho, s0 = market.traded.S0;
  const double m = mu / (p * ss * ss);  // monetary frictionless holding
  const double theta = mu / ss;
  const double T = grid.T() - grid.t0();
  const std::size_t k_mat = grid.index_at_or_before(claim.maturity);
  const double v0 = basis_claim_value_hedge(market, claim, grid.t0(), s0, market.nontraded.S0).value;

  // per path: Z_T, L = int h^2 d<S>, band integrand, e, log densities
  std::vector<double> z(n_paths), L(n_paths), band(n_paths), e(n_paths), log_w0(n_paths), log_wn(n_paths);
  std::vector<double> fmin(n_paths), fmax(n_paths), fsum(n_paths);
  std::size_t count_steps = grid.n_steps();
  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> s(grid.n_points()), y(grid.n_points());
    for (std::size_t i = begin; i < end; ++i) {
      correlated_pair_path(market.traded, market.nontraded, rho, grid, seed, i, s, y);
      double l = 0.0, b = 0.0, gain_phi = 0.0, gain_xi = 0.0;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
      for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        const double dt = grid.dt(k), S = s[k], Y = y[k], dS = s[k + 1] - S;
        const double cs = ss * ss * S * S;
        const double phi_s = -m / (S * S);
        const double c_phi = phi_s * phi_s * cs;
        const double h = band_halfwidth(p, eps, S, c_phi, cs);
        gain_phi += (m / S) * dS;
        double ratio = 0.0;
        if (k < k_mat) {
          const XiGreeks g = xi_greeks(market, claim, grid.t(k), S, Y);
          gain_xi += g.xi * dS;
          ratio = (g.d_s * cs + g.d_y * rho * ss * sy * S * Y) / (phi_s * cs);
        }
        l += h * h * cs * dt;
        b += (4.0 * n / 3.0) * h * h * ratio * cs * dt;
        const double factor = 1.0 + (2.0 * n / 3.0) * ratio;
        lo = std::min(lo, factor);
        hi = std::max(hi, factor);
        sum += factor;
      }
      const double H = claim.payoff(y[k_mat]);
      const double w_T = (std::log(s.back() / s0) - (mu - 0.5 * ss * ss) * T) / ss;
      z[i] = std::exp(-theta * w_T - 0.5 * theta * theta * T);
      L[i] = l;
      band[i] = b;
      e[i] = H - v0 - gain_xi;
      log_w0[i] = -p * gain_phi;
      log_wn[i] = -p * (gain_phi + n * gain_xi - n * H);
      fmin[i] = lo;
      fmax[i] = hi;
      fsum[i] = sum;
    }
  });

  // Q expectations via the exact density Z_T; ratio estimators with influence SEs
  const double zbar = mean_estimate(z).value;
  auto q_mean = [&](const std::vector<double>& x) {
    std::vector<double> zx(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) zx[i] = z[i] * x[i];
    const double v = mean_estimate(zx).value / zbar;
    std::vector<double> infl(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) infl[i] = z[i] * (x[i] - v) / zbar;
    return Estimate{v, influence_se(infl)};
  };

  SmallNCorrections out;
  const Estimate bt = q_mean(band);
  out.band_term = {0.5 * p * bt.value, 0.5 * p * bt.se};
  std::vector<double> eL(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) eL[i] = e[i] * L[i];
  const Estimate ct = q_mean(eL);
  const double c = 0.5 * p * n * p;
  out.covariance_term = {c * ct.value, std::abs(c) * ct.se};

  std::vector<double> tot(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) tot[i] = 0.5 * p * band[i] + c * eL[i];
  out.impact = q_mean(tot);

  // density form: (p/2) (E_{Q^{nH}}[L] - E_Q[L]) with self-normalised exponential weights
  auto weighted = [&](const std::vector<double>& logw) {
    const double shift = *std::max_element(logw.begin(), logw.end());
    std::vector<double> w(n_paths);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) wsum += (w[i] = std::exp(logw[i] - shift));
    const double wbar = wsum / static_cast<double>(n_paths);
    double v = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) v += w[i] * L[i];
    v /= wsum;
    std::vector<double> infl(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) infl[i] = w[i] * (L[i] - v) / wbar;
    return std::pair{v, infl};
  };
  const auto [vn, in] = weighted(log_wn);
  const auto [v0w, i0] = weighted(log_w0);
  std::vector<double> dinf(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) dinf[i] = in[i] - i0[i];
  out.covariance_density_form = {0.5 * p * (vn - v0w), 0.5 * p * influence_se(dinf)};

  out.min_band_factor = *std::min_element(fmin.begin(), fmin.end());
  out.max_band_factor = *std::max_element(fmax.begin(), fmax.end());
  double total = 0.0;
  for (double v : fsum) total += v;
  out.mean_band_factor = total / static_cast<double>(n_paths * count_steps);
  return out;
}

}  // namespace tcost

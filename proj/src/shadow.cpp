#include "tcost/shadow.hpp"

#include "tcost/notrade.hpp"
#include "tcost/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace tcost {

double shadow_alpha(double p, double c_S, double c_phi) {
  if (!(c_phi > 0.0)) throw ParameterError("shadow_alpha: c_phi must be positive (no cubic ansatz otherwise)");
  if (!(p > 0.0) || !(c_S > 0.0)) throw ParameterError("shadow_alpha: p and c_S must be positive");
  return p / 3.0 * c_S / c_phi;
}

double shadow_gamma(double eps, double S, double alpha) {
  if (!(eps >= 0.0)) throw ParameterError("shadow_gamma: eps must be >= 0");
  const double half = 0.5 * eps * S;
  return 3.0 * std::cbrt(alpha) * std::cbrt(half * half);
}

ShadowCoefficients shadow_coefficients(double p, double eps, const PathMatrix& S, const PathMatrix& c_S,
                                       const PathMatrix& c_phi) {
  if (S.rows() != c_S.rows() || S.cols() != c_S.cols() || S.rows() != c_phi.rows() || S.cols() != c_phi.cols()) {
    throw ParameterError("shadow_coefficients: shape mismatch");
  }
  ShadowCoefficients out{PathMatrix(S.rows(), S.cols()), PathMatrix(S.rows(), S.cols())};
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const double a = shadow_alpha(p, c_S(i, k), c_phi(i, k));
      out.alpha(i, k) = a;
      out.gamma(i, k) = shadow_gamma(eps, S(i, k), a);
    }
  }
  return out;
}

ShadowPath shadow_path(const PolicyRunResult& policy, const BandSpec& band, const ShadowCoefficients& coeffs,
                       const PathSet& paths, double eps) {
  const auto& S = paths.factor("S");
  if (policy.deviation.rows() != S.rows() || policy.deviation.cols() != S.cols() ||
      coeffs.alpha.rows() != S.rows() || coeffs.alpha.cols() != S.cols()) {
    throw ParameterError("shadow_path: policy, coefficients and paths disagree in shape");
  }
  ShadowPath out;
  out.delta_S = PathMatrix(S.rows(), S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k)
      out.delta_S(i, k) = shadow_cubic(coeffs.alpha(i, k), coeffs.gamma(i, k), policy.deviation(i, k));
  out.S_shadow = S + out.delta_S;

  // The horizon carries no trade, so only interior points are checked.
  const Eigen::Index last = S.cols() - 1;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    for (Eigen::Index k = 1; k < last; ++k) {
      ++out.steps;
      const double bound = eps * S(i, k);
      if (std::abs(out.delta_S(i, k)) <= bound * (1.0 + 1e-12)) {
        ++out.contained;
      } else {
        out.violations.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(k));
      }
      const double trade = policy.position(i, k) - policy.position(i, k - 1);
      if (trade != 0.0 && band.halfwidth(i, k) > 0.0) {
        ++out.boundary_steps;
        // buying lands on the lower edge where the shadow price is the ask
        const double target = trade > 0.0 ? bound : -bound;
        out.max_boundary_mismatch = std::max(out.max_boundary_mismatch, std::abs(out.delta_S(i, k) - target) / bound);
      }
    }
  }
  return out;
}

namespace {

constexpr int kBuckets = 10;

int bucket_of(double r) {
  const int b = static_cast<int>(std::floor((r + 1.0) / (2.0 / kBuckets)));
  return std::clamp(b, 0, kBuckets - 1);
}

struct BucketSums {
  std::size_t n = 0;
  double r = 0.0, r2 = 0.0, x = 0.0, y = 0.0, y2 = 0.0, res = 0.0, res2 = 0.0, d = 0.0, d2 = 0.0;

  void add(const BucketSums& o) {
    n += o.n;
    r += o.r;
    r2 += o.r2;
    x += o.x;
    y += o.y;
    y2 += o.y2;
    res += o.res;
    res2 += o.res2;
    d += o.d;
    d2 += o.d2;
  }
};

struct EpsSums {
  std::array<BucketSums, kBuckets> buckets{};
  std::size_t steps = 0, contained = 0, pre_contained = 0;
  double max_mismatch = 0.0, cubic_err = 0.0, hw_err = 0.0;

  void add(const EpsSums& o) {
    for (int b = 0; b < kBuckets; ++b) buckets[b].add(o.buckets[b]);
    steps += o.steps;
    contained += o.contained;
    pre_contained += o.pre_contained;
    max_mismatch = std::max(max_mismatch, o.max_mismatch);
    cubic_err = std::max(cubic_err, o.cubic_err);
    hw_err = std::max(hw_err, o.hw_err);
  }
};

Estimate bucket_mean(double sum, double sum2, std::size_t n) {
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = n > 1 ? std::max(0.0, (sum2 - nn * mean * mean) / (nn - 1.0)) : 0.0;
  return {mean, std::sqrt(var / nn)};
}

Estimate rms_estimate(const std::vector<double>& r) {
  std::vector<double> sq(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) sq[i] = r[i] * r[i];
  const Estimate m = mean_estimate(sq);
  const double rms = std::sqrt(m.value);
  return {rms, rms > 0.0 ? m.se / (2.0 * rms) : 0.0};
}

}  // namespace

std::vector<ShadowCheck> shadow_experiment(const BlackScholesMarket& market, const ExponentialPreference& pref,
                                           const std::vector<double>& eps_list, const TimeGrid& grid,
                                           std::size_t n_paths, std::uint64_t seed, const ShadowSettings& settings) {
  market.validate();
  pref.validate();
  if (eps_list.empty()) throw ParameterError("shadow_experiment: no eps values");
  for (double e : eps_list)
    if (!(e >= 0.0)) throw ParameterError("shadow_experiment: eps must be >= 0");
  if (n_paths < 2) throw ParameterError("shadow_experiment: need at least two paths");
  if (grid.n_steps() < 3) throw ParameterError("shadow_experiment: grid too coarse");

  const std::size_t n_eps = eps_list.size();
  const std::size_t n = grid.n_steps();
  const double p = pref.p, sigma = market.sigma;
  const double m = market.mu / (p * sigma * sigma);
  const double theta = market.mu / sigma;
  const double s0 = market.S0;
  std::vector<BandRule> rules;
  for (double e : eps_list) rules.push_back(pure_investment_band(market, pref, e));

  const std::size_t chunks = chunk_count(n_paths);
  std::vector<std::vector<EpsSums>> partial(chunks, std::vector<EpsSums>(n_eps));
  std::vector<std::vector<double>> z_eps_T(n_eps, std::vector<double>(n_paths)), resid = z_eps_T;
  std::vector<double> frictionless(n_paths);

  for_each_chunk(n_paths, settings.threads, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    std::vector<double> s(grid.n_points()), dW(n), c(grid.n_points()), h(grid.n_points()), pos(grid.n_points());
    std::vector<double> alpha(grid.n_points()), gamma(grid.n_points()), delta(grid.n_points());
    for (std::size_t i = begin; i < end; ++i) {
      if (!gbm_path(market.params(), grid, seed, i, s, dW)) throw ParameterError("shadow: price path overflowed");
      double log_zT = 0.0;
      for (std::size_t k = 0; k < n; ++k) log_zT += -theta * dW[k] - 0.5 * theta * theta * grid.dt(k);
      frictionless[i] = std::exp(log_zT) * (s[n] - s0);
      const double u = placement_draw(seed, i);

      for (std::size_t j = 0; j < n_eps; ++j) {
        const double eps = eps_list[j];
        EpsSums& acc = partial[chunk][j];
        for (std::size_t k = 0; k <= n; ++k) {
          const BandPoint b = rules[j](grid.t(k), s[k]);
          c[k] = b.center;
          h[k] = b.halfwidth;
        }
        const double start = settings.placement == InitialPlacement::Stationary ? c[0] + u * h[0] : c[0];
        run_band_path(s, c, h, eps, pref.x0, 0.0, start, pos);

        for (std::size_t k = 0; k <= n; ++k) {
          const double cs = sigma * sigma * s[k] * s[k];
          const double phi_s = -m / (s[k] * s[k]);
          alpha[k] = shadow_alpha(p, cs, phi_s * phi_s * cs);
          gamma[k] = shadow_gamma(eps, s[k], alpha[k]);
          delta[k] = shadow_cubic(alpha[k], gamma[k], pos[k] - c[k]);
          const double bound = eps * s[k];
          if (h[k] > 0.0) {
            const double hs = shadow_halfwidth(alpha[k], gamma[k]);
            acc.hw_err = std::max(acc.hw_err, std::abs(hs - h[k]) / h[k]);
            acc.cubic_err = std::max({acc.cubic_err, std::abs(shadow_cubic(alpha[k], gamma[k], h[k]) + bound) / bound,
                                      std::abs(shadow_cubic(alpha[k], gamma[k], -h[k]) - bound) / bound,
                                      std::abs(shadow_cubic_slope(alpha[k], gamma[k], h[k])) / gamma[k]});
          }
          if (k >= 1 && k < n) {
            ++acc.steps;
            if (std::abs(delta[k]) <= bound * (1.0 + 1e-12)) ++acc.contained;
            const double pre = shadow_cubic(alpha[k], gamma[k], pos[k - 1] - c[k]);
            if (std::abs(pre) <= bound * (1.0 + 1e-12)) ++acc.pre_contained;
            const double trade = pos[k] - pos[k - 1];
            if (trade != 0.0 && h[k] > 0.0) {
              const double target = trade > 0.0 ? bound : -bound;
              acc.max_mismatch = std::max(acc.max_mismatch, std::abs(delta[k] - target) / bound);
            }
          }
        }

        double z = 1.0, N = 0.0, gain_shadow = 0.0, gain_target = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double dt = grid.dt(k), dS = s[k + 1] - s[k], dev = pos[k] - c[k];
          const double z_next = z * std::exp(-theta * dW[k] - 0.5 * theta * theta * dt);
          const double N_next = N + dev * dS;
          const double ze = z * (1.0 - p * N), ze_next = z_next * (1.0 - p * N_next);
          if (k + 1 < n && h[k] > 0.0) {
            const double r = dev / h[k];
            BucketSums& b = acc.buckets[bucket_of(r)];
            const double x = p * dev * sigma * sigma * s[k] * s[k];
            const double y = (delta[k + 1] - delta[k]) / dt;
            // E[Z_{k+1} S_{k+1} dS | F_k] is known in closed form, so only the
            // Z^eps * delta part is sampled.
            const double known = -p * dev * z * s[k] * s[k] * std::expm1(sigma * sigma * dt);
            const double d = (known + ze_next * delta[k + 1] - ze * delta[k]) / (dt * z);
            ++b.n;
            b.r += r;
            b.r2 += r * r;
            b.x += x;
            b.y += y;
            b.y2 += y * y;
            b.res += y - x;
            b.res2 += (y - x) * (y - x);
            b.d += d;
            b.d2 += d * d;
          }
          gain_shadow += pos[k] * ((s[k + 1] + delta[k + 1]) - (s[k] + delta[k]));
          gain_target += c[k] * dS;
          z = z_next;
          N = N_next;
        }
        const double ze_T = z * (1.0 - p * N);
        z_eps_T[j][i] = ze_T;
        resid[j][i] = ze_T - z * std::exp(-p * (gain_shadow - gain_target));
      }
    }
  });

  std::vector<ShadowCheck> out;
  const Estimate fr = mean_estimate(frictionless);
  for (std::size_t j = 0; j < n_eps; ++j) {
    EpsSums tot;
    for (std::size_t c = 0; c < chunks; ++c) tot.add(partial[c][j]);
    ShadowCheck chk;
    chk.eps = eps_list[j];
    chk.steps = tot.steps;
    chk.contained_fraction = static_cast<double>(tot.contained) / static_cast<double>(tot.steps);
    chk.pretrade_contained_fraction = static_cast<double>(tot.pre_contained) / static_cast<double>(tot.steps);
    chk.max_boundary_mismatch = tot.max_mismatch;
    chk.cubic_identity_error = tot.cubic_err;
    chk.halfwidth_consistency = tot.hw_err;
    chk.frictionless_martingale = fr;
    chk.mean_density = mean_estimate(z_eps_T[j]);
    chk.terminal_residual_rms = rms_estimate(resid[j]);

    std::vector<double> xs, ys, ses, evens;
    Estimate centre_sum{0.0, 0.0};
    std::size_t centre_n = 0;
    for (int b = 0; b < kBuckets; ++b) {
      const BucketSums& s = tot.buckets[b];
      DriftBucket& db = chk.buckets[b];
      db.count = s.n;
      if (s.n < settings.min_bucket) {
        if (chk.eps > 0.0) {
          chk.warnings.push_back("eps=" + std::to_string(chk.eps) + ": bucket " + std::to_string(b) +
                                 " dropped (" + std::to_string(s.n) + " observations)");
        }
        continue;
      }
      const double nn = static_cast<double>(s.n);
      db.mean_ratio = s.r / nn;
      db.predicted = s.x / nn;
      db.estimated = bucket_mean(s.y, s.y2, s.n);
      db.residual = bucket_mean(s.res, s.res2, s.n);
      db.density_drift = bucket_mean(s.d, s.d2, s.n);
      chk.sup_residual = std::max(chk.sup_residual, std::abs(db.residual.value));
      chk.sup_density_drift = std::max(chk.sup_density_drift, std::abs(db.density_drift.value));
      xs.push_back(db.predicted / p);
      evens.push_back(s.r2 / nn);
      ys.push_back(db.estimated.value);
      ses.push_back(db.estimated.se);
      if (b == kBuckets / 2 - 1 || b == kBuckets / 2) {
        centre_sum.value += db.residual.value * nn;
        centre_sum.se += db.residual.se * db.residual.se * nn * nn;
        centre_n += s.n;
      }
    }
    if (centre_n > 0) {
      const double nn = static_cast<double>(centre_n);
      chk.center_residual = {centre_sum.value / nn, std::sqrt(centre_sum.se) / nn};
    }
    if (xs.size() >= 4) {
      chk.drift_fit = linear_fit(xs, ys, ses);
      // The leading correction -f'(deviation) b^phi is even in the deviation;
      // an (r^2) column absorbs it so the odd slope isolates the p term.
      Eigen::MatrixXd design(static_cast<Eigen::Index>(xs.size()), 3);
      for (std::size_t q = 0; q < xs.size(); ++q) {
        const auto row = static_cast<Eigen::Index>(q);
        design(row, 0) = 1.0;
        design(row, 1) = xs[q];
        design(row, 2) = evens[q];
      }
      const Regression reg = least_squares(design, ys, ses);
      chk.drift_coefficient = reg.coef[1];
      chk.drift_coefficient_se = reg.se[1];
    } else if (chk.eps > 0.0) {
      chk.warnings.push_back("eps=" + std::to_string(chk.eps) + ": too few occupied buckets for the drift fit");
    }
    out.push_back(std::move(chk));
  }
  return out;
}

ShadowScaling shadow_scaling(const BlackScholesMarket& market, const ExponentialPreference& pref,
                             const std::vector<double>& eps_list, const TimeGrid& grid, std::size_t n_paths,
                             std::uint64_t seed, const ShadowSettings& settings) {
  ShadowScaling out;
  out.rows = shadow_experiment(market, pref, eps_list, grid, n_paths, seed, settings);
  std::vector<double> x, r, d, t;
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& row : out.rows) {
    if (!(row.eps > 0.0)) continue;
    if (row.sup_residual > 0.0 && row.sup_density_drift > 0.0 && row.terminal_residual_rms.value > 0.0) {
      x.push_back(std::log(row.eps));
      r.push_back(std::log(row.sup_residual));
      d.push_back(std::log(row.sup_density_drift));
      t.push_back(std::log(row.terminal_residual_rms.value));
    }
    if (row.eps < smallest) {
      smallest = row.eps;
      out.drift_coefficient = row.drift_coefficient;
      out.drift_coefficient_se = row.drift_coefficient_se;
    }
  }
  if (x.size() >= 2) {
    out.residual_fit = linear_fit(x, r);
    out.density_fit = linear_fit(x, d);
    out.terminal_fit = linear_fit(x, t);
  }
  return out;
}

void write_drift_csv(const std::vector<ShadowCheck>& checks, std::ostream& out) {
  const auto old_precision = out.precision(17);
  out << "eps,decile,count,mean_ratio,predicted,estimated,se\n";
  for (const auto& c : checks) {
    for (int b = 0; b < kBuckets; ++b) {
      const auto& db = c.buckets[b];
      out << c.eps << ',' << b << ',' << db.count << ',' << db.mean_ratio << ',' << db.predicted << ','
          << db.estimated.value << ',' << db.estimated.se << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace tcost

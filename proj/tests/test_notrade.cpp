#include "tcost/notrade.hpp"

#include "tcost/shadow.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace tcost;

namespace {

// mu = 0.08, sigma = 0.2, p = 1: monetary target m = 2, cash gamma -2
constexpr double kMu = 0.08, kSigma = 0.2, kP = 1.0, kEps = 0.01, kS = 100.0;

double oracle_monetary_halfwidth(double p, double eps, double mu, double sigma) {
  return std::cbrt(3.0 * eps / (2.0 * p)) * std::pow(mu / (p * sigma * sigma), 2.0 / 3.0);
}

PathSet q_paths(std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
  return simulate_gbm({100.0, 0.0, kSigma}, TimeGrid::uniform(0.0, 1.0, n_steps), n_paths, seed, Measure::Q);
}

PathMatrix c_S_of(const PathSet& ps) { return (kSigma * kSigma * ps.factor("S").array().square()).matrix(); }

}  // namespace

TEST_CASE("Black-Scholes band from the share formula and from cash gamma") {
  const double oracle = oracle_monetary_halfwidth(kP, kEps, kMu, kSigma);
  CHECK(oracle == doctest::Approx(0.3915).epsilon(1e-4));
  const double c_S = kSigma * kSigma * kS * kS;
  const double phi_S = -2.0 / (kS * kS);
  const double h = band_halfwidth(kP, kEps, kS, phi_S * phi_S * c_S, c_S);
  CHECK(std::abs(h * kS / oracle - 1.0) < 1e-10);
  CHECK(std::abs(monetary_halfwidth_cash_gamma(kP, kEps, -2.0) / oracle - 1.0) < 1e-10);
}

TEST_CASE("cube-root scaling and price-scale invariance") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int i = 0; i < 200; ++i) {
    const double p = u(rng), eps = 0.01 * u(rng), S = 20.0 * u(rng), cp = u(rng), cs = u(rng);
    const double h = band_halfwidth(p, eps, S, cp, cs);
    CHECK(band_halfwidth(p, 8.0 * eps, S, cp, cs) == doctest::Approx(2.0 * h).epsilon(1e-13));
    CHECK(band_halfwidth(8.0 * p, eps, S, cp, cs) == doctest::Approx(0.5 * h).epsilon(1e-13));
    // S -> l S with the same monetary target: shares scale by 1/l, c_S by l^2, c_phi by 1/l^2
    const double l = u(rng);
    CHECK(l * band_halfwidth(p, eps, l * S, cp / (l * l), cs * l * l) == doctest::Approx(h).epsilon(1e-12));
    const double cg = u(rng) - 2.5;
    CHECK(monetary_halfwidth_cash_gamma(p, eps, cg) == doctest::Approx(monetary_halfwidth_cash_gamma(p, eps, -cg)));
  }
  CHECK(band_halfwidth(1.0, 0.0, 100.0, 1.0, 1.0) == 0.0);
  CHECK(abs_pow43(-8.0) == doctest::Approx(16.0).epsilon(1e-14));
  CHECK(abs_pow43(0.0) == 0.0);
}

TEST_CASE("band halfwidth rejects invalid inputs") {
  CHECK_THROWS_AS(band_halfwidth(1.0, 0.01, 100.0, 1.0, 0.0), ParameterError);
  CHECK_THROWS_AS(band_halfwidth(0.0, 0.01, 100.0, 1.0, 1.0), ParameterError);
  CHECK_THROWS_AS(band_halfwidth(1.0, -0.01, 100.0, 1.0, 1.0), ParameterError);
  CHECK_THROWS_AS(band_halfwidth(1.0, 0.01, 100.0, -1.0, 1.0), ParameterError);
}

TEST_CASE("welfare loss equals the left-point integral of the squared band") {
  const PathSet ps = q_paths(50, 40, 3);
  const auto& S = ps.factor("S");
  const PathMatrix cs = c_S_of(ps);
  BandSpec band{ps.grid(), PathMatrix::Zero(S.rows(), S.cols()), (0.01 + 0.001 * S.array()).matrix()};
  const LossEstimate L = welfare_loss(2.0, band, cs, ps);
  double oracle = 0.0;
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < 40; ++k) oracle += std::pow(band.halfwidth(i, k), 2) * cs(i, k) / 40.0;
  oracle *= 1.0 / S.rows();  // (p/2) = 1
  CHECK(L.value == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(L.samples.size() == 50);
  CHECK(L.integrand_trace.size() == 41);

  const PathSet p_paths = simulate_gbm({100.0, 0.08, kSigma}, ps.grid(), 50, 3, Measure::P);
  CHECK_THROWS_AS(welfare_loss(2.0, band, cs, p_paths), ParameterError);
}

TEST_CASE("indifference price uses paired differences") {
  LossEstimate a, b;
  a.samples = {1.0, 2.0, 3.0};
  b.samples = {0.5, 1.5, 2.5};
  a.value = 2.0;
  b.value = 1.5;
  a.std_error = b.std_error = 0.5;
  const PriceQuote q = indifference_price(a, b, 10.0, 2.0);
  CHECK(q.correction == doctest::Approx(0.25));
  CHECK(q.total == doctest::Approx(10.25));
  CHECK(q.correction_se == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("full correction through bands equals the cash-gamma formula on the same paths") {
  const PathSet ps = q_paths(200, 100, 5);
  const auto& S = ps.factor("S");
  const PathMatrix cs = c_S_of(ps);
  const TimeGrid& g = ps.grid();
  const ClaimSpec call = ClaimSpec::call(100.0, 1.0);
  PathMatrix cg_phi = PathMatrix::Constant(S.rows(), S.cols(), -2.0), cg_H(S.rows(), S.cols());
  BandSpec with{g, PathMatrix::Zero(S.rows(), S.cols()), PathMatrix(S.rows(), S.cols())};
  BandSpec without = with;
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const double s = S(i, k);
      cg_H(i, k) = bs_delta_gamma(call, g.t(k), s, kSigma).gamma * s * s;
      // share variation of the target: (cash gamma / S^2)^2 c_S
      const double v0 = std::pow(-2.0 / (s * s), 2) * cs(i, k);
      const double v1 = std::pow((cg_H(i, k) - 2.0) / (s * s), 2) * cs(i, k);
      without.halfwidth(i, k) = band_halfwidth(kP, kEps, s, v0, cs(i, k));
      with.halfwidth(i, k) = band_halfwidth(kP, kEps, s, v1, cs(i, k));
    }
  const Estimate full = complete_price_correction(kP, kEps, cg_phi, cg_H, cs, ps);
  const PriceQuote pipe = indifference_price(welfare_loss(kP, with, cs, ps), welfare_loss(kP, without, cs, ps), 0.0);
  CHECK(pipe.correction == doctest::Approx(full.value).epsilon(1e-10));
  CHECK(full.value > 0.0);

  // zero own gamma: both reduce to the marginal-investment price
  const PriceQuote mi = marginal_investment_price(kP, 1.0, kEps, cg_H, cs, ps, 0.0);
  const Estimate z = complete_price_correction(kP, kEps, PathMatrix::Zero(S.rows(), S.cols()), cg_H, cs, ps);
  CHECK(z.value == doctest::Approx(mi.correction).epsilon(1e-12));
  // per-claim marginal-investment correction scales like n^{1/3}
  const PriceQuote mi8 = marginal_investment_price(kP, 8.0, kEps, cg_H, cs, ps, 0.0);
  CHECK(mi8.correction == doctest::Approx(2.0 * mi.correction).epsilon(1e-12));
  // no claim, no correction
  CHECK(complete_price_correction(kP, kEps, cg_phi, PathMatrix::Zero(S.rows(), S.cols()), cs, ps).value == 0.0);
}

TEST_CASE("marginal option expansion matches the exact derivative of |a + n b|^{4/3}") {
  const PathSet ps = q_paths(20, 50, 6);
  const auto& S = ps.factor("S");
  const PathMatrix cs = c_S_of(ps);
  const PathMatrix a = PathMatrix::Constant(S.rows(), S.cols(), -2.0);
  const PathMatrix b = PathMatrix::Constant(S.rows(), S.cols(), 1.0);
  const double n = 1e-3;
  const MarginalOptionExpansion e = marginal_option_expansion(kP, kEps, n, a, b, cs, ps, 0.0);
  const Estimate full = complete_price_correction(kP, kEps, a, (n * b.array()).matrix(), cs, ps);
  CHECK(e.quote.correction == doctest::Approx(full.value / n).epsilon(1e-6));
  // first order is (4/3) |a|^{1/3} sign(a) b times the constant
  const double k = std::cbrt(9.0 * kP / 32.0) * std::pow(kEps, 2.0 / 3.0);
  double integral = 0.0;
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index j = 0; j < 50; ++j) integral += cs(i, j) / (S(i, j) * S(i, j)) / 50.0;
  integral /= S.rows();
  CHECK(e.first_order.value == doctest::Approx(k * (4.0 / 3.0) * std::cbrt(2.0) * (-1.0) * integral).epsilon(1e-12));
  CHECK(e.band_factor(0, 0) == doctest::Approx(1.0 + (2.0 / 3.0) * n * 1.0 / -2.0));

  PathMatrix bad = a;
  bad(3, 7) = 0.0;
  CHECK_THROWS_AS(marginal_option_expansion(kP, kEps, n, bad, b, cs, ps, 0.0), ParameterError);
}

TEST_CASE("semi-static hedge") {
  const PathSet ps = q_paths(100, 60, 8);
  const auto& S = ps.factor("S");
  const PathMatrix cs = c_S_of(ps);
  PathMatrix h(S.rows(), S.cols()), h2(S.rows(), S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const double s = S(i, k), t = ps.grid().t(k);
      h(i, k) = bs_delta_gamma(ClaimSpec::call(100.0, 1.0), t, s, kSigma).gamma * s * s;
      h2(i, k) = bs_delta_gamma(ClaimSpec::call(110.0, 1.0), t, s, kSigma).gamma * s * s;
    }
  SUBCASE("identical claim") {
    const SemistaticResult r = semistatic_gamma_hedge(h, h, cs, ps);
    CHECK(std::abs(r.n_star - 1.0) < 1e-6);
    CHECK(r.objective <= 1e-12 * r.scale);
  }
  SUBCASE("half-size hedge claim") {
    const PathMatrix doubled = (2.0 * h.array()).matrix();
    const SemistaticResult r = semistatic_gamma_hedge(h, doubled, cs, ps);
    CHECK(std::abs(r.n_star - 0.5) < 1e-6);
  }
  SUBCASE("general case against a dense grid") {
    const SemistaticResult r = semistatic_gamma_hedge(h, h2, cs, ps, 0.0, 3.0);
    double best = 0.0, best_val = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= 3000; ++j) {
      const double v = semistatic_objective(h, h2, cs, ps, 1e-3 * j);
      if (v < best_val) {
        best_val = v;
        best = 1e-3 * j;
      }
    }
    CHECK(std::abs(r.n_star - best) <= 1e-3);
    CHECK(r.objective <= best_val * (1.0 + 1e-12));
  }
  SUBCASE("edge minimiser widens the interval once") {
    const SemistaticResult r = semistatic_gamma_hedge(h, h, cs, ps, 2.0, 3.0);
    CHECK(std::abs(r.n_star - 1.0) < 1e-6);
    CHECK(r.upper - r.lower > 1.0 + 1e-9);
    CHECK_THROWS_AS(semistatic_gamma_hedge(h, (1e-3 * h.array()).matrix(), cs, ps, 0.0, 1.0), ParameterError);
  }
}

TEST_CASE("incomplete-market pricing guards and limits") {
  BasisRiskMarket mk{{100.0, 0.05, 0.2}, {100.0, 0.05, 0.25}, 0.5};
  ClaimSpec c = ClaimSpec::call(100.0, 1.0);
  c.underlying = Underlying::NonTraded;
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 20);
  CHECK_THROWS_AS(incomplete_martingale_price(1.0, 1.0, 0.01, mk, c, g, 100, 1), ParameterError);
  mk.traded.mu = 0.0;
  CHECK_THROWS_AS(incomplete_smalln_corrections(1.0, 0.1, 0.01, mk, c, g, 100, 1), ParameterError);
  const IncompleteQuote q = incomplete_martingale_price(0.01, 0.5, 0.0, mk, c, g, 2000, 1);
  CHECK(q.cost_term.value == 0.0);
  CHECK(q.hedge_term.value == doctest::Approx(0.5 * 0.01 * 0.5 * q.hedging_error.value));
  CHECK(q.quote.total == doctest::Approx(q.quote.frictionless));
}

TEST_CASE("small-n corrections vanish with the claim") {
  const BasisRiskMarket mk{{100.0, 0.08, 0.2}, {100.0, 0.05, 0.25}, 0.7};
  ClaimSpec c = ClaimSpec::call(100.0, 1.0);
  c.underlying = Underlying::NonTraded;
  const SmallNCorrections s = incomplete_smalln_corrections(1.0, 0.0, 0.01, mk, c, TimeGrid::uniform(0.0, 1.0, 20),
                                                            500, 2);
  CHECK(s.band_term.value == 0.0);
  CHECK(s.covariance_term.value == 0.0);
  CHECK(s.mean_band_factor == doctest::Approx(1.0));
}

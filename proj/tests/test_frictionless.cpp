#include "tcost/frictionless.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace tcost;

namespace {

double ncdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// textbook zero-rate Black-Scholes call
double bs_call(double S, double K, double tau, double sigma) {
  const double d1 = (std::log(S / K) + 0.5 * sigma * sigma * tau) / (sigma * std::sqrt(tau));
  return S * ncdf(d1) - K * ncdf(d1 - sigma * std::sqrt(tau));
}

// E[g(X_T)] for X lognormal by a plain trapezoid over the standard normal
template <class G>
double lognormal_expect(G g, double x, double drift, double sigma, double tau) {
  const int n = 40000;
  const double a = -10.0, h = 20.0 / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = a + i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    const double xt = x * std::exp((drift - 0.5 * sigma * sigma) * tau + sigma * std::sqrt(tau) * z);
    acc += w * g(xt) * std::exp(-0.5 * z * z);
  }
  return acc * h / std::sqrt(2.0 * M_PI);
}

}  // namespace

TEST_CASE("call and put values match the textbook formula and parity") {
  for (double S : {80.0, 100.0, 125.0}) {
    for (double t : {0.0, 0.5, 0.9}) {
      const Greeks c = bs_delta_gamma(ClaimSpec::call(100.0, 1.0), t, S, 0.2);
      const Greeks p = bs_delta_gamma(ClaimSpec::put(100.0, 1.0), t, S, 0.2);
      CHECK(c.value == doctest::Approx(bs_call(S, 100.0, 1.0 - t, 0.2)).epsilon(1e-12));
      CHECK(c.value - p.value == doctest::Approx(S - 100.0).epsilon(1e-12));
      CHECK(c.delta - p.delta == doctest::Approx(1.0).epsilon(1e-12));
      // finite differences of the oracle
      const double h = 1e-3 * S;
      const double up = bs_call(S + h, 100.0, 1.0 - t, 0.2), dn = bs_call(S - h, 100.0, 1.0 - t, 0.2);
      CHECK(c.delta == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
      CHECK(c.gamma == doctest::Approx((up - 2 * c.value + dn) / (h * h)).epsilon(1e-4));
    }
  }
}

TEST_CASE("quantity scales value and greeks") {
  ClaimSpec c = ClaimSpec::call(110.0, 1.0);
  const Greeks one = bs_delta_gamma(c, 0.2, 100.0, 0.25);
  c.quantity = -3.0;
  const Greeks three = bs_delta_gamma(c, 0.2, 100.0, 0.25);
  CHECK(three.value == doctest::Approx(-3.0 * one.value));
  CHECK(three.gamma == doctest::Approx(-3.0 * one.gamma));
}

TEST_CASE("at maturity the payoff is returned with zero gamma") {
  const Greeks g = bs_delta_gamma(ClaimSpec::call(100.0, 1.0), 1.0, 104.0, 0.2);
  CHECK(g.value == doctest::Approx(4.0));
  CHECK(g.gamma == 0.0);
}

TEST_CASE("custom payoff through quadrature agrees with the closed form") {
  const ClaimSpec custom = ClaimSpec::custom([](double s) { return std::max(s - 95.0, 0.0); }, 1.0);
  const Greeks q = lognormal_claim(custom, 0.25, 100.0, 0.0, 0.2);
  CHECK(q.value == doctest::Approx(bs_call(100.0, 95.0, 0.75, 0.2)).epsilon(1e-9));
  const Greeks c = lognormal_claim(ClaimSpec::call(95.0, 1.0), 0.25, 100.0, 0.0, 0.2);
  CHECK(q.delta == doctest::Approx(c.delta).epsilon(1e-8));
  CHECK(q.gamma == doctest::Approx(c.gamma).epsilon(1e-7));
  // with drift, against the closed form
  const Greeks qd = lognormal_claim(custom, 0.25, 100.0, 0.07, 0.2);
  const Greeks cd = lognormal_claim(ClaimSpec::call(95.0, 1.0), 0.25, 100.0, 0.07, 0.2);
  CHECK(qd.value == doctest::Approx(cd.value).epsilon(1e-9));
  CHECK(qd.gamma == doctest::Approx(cd.gamma).epsilon(1e-7));
  const ClaimSpec lg = ClaimSpec::custom([](double s) { return -std::log(s / 100.0); }, 1.0);
  const Greeks a = lognormal_claim(lg, 0.5, 120.0, 0.03, 0.3);
  const Greeks b = lognormal_claim(ClaimSpec::log_contract(100.0, 1.0), 0.5, 120.0, 0.03, 0.3);
  CHECK(a.value == doctest::Approx(b.value).epsilon(1e-9));
  CHECK(a.delta == doctest::Approx(b.delta).epsilon(1e-9));
  CHECK(a.gamma == doctest::Approx(b.gamma).epsilon(1e-8));
}

TEST_CASE("log contract has unit cash gamma everywhere") {
  const ClaimSpec lc = ClaimSpec::log_contract(100.0, 1.0);
  CHECK(lc.payoff(100.0 * std::exp(0.3)) == doctest::Approx(-0.3));
  for (double S : {60.0, 100.0, 170.0}) {
    const Greeks g = bs_delta_gamma(lc, 0.3, S, 0.2);
    CHECK(g.gamma * S * S == doctest::Approx(1.0).epsilon(1e-14));
    // E[-ln S_T/K] = -ln(S/K) + sigma^2 tau / 2 under zero drift
    CHECK(g.value == doctest::Approx(-std::log(S / 100.0) + 0.02 * 0.7).epsilon(1e-8));
  }
}

TEST_CASE("claim moments against direct integration") {
  const ClaimSpec cubic = ClaimSpec::custom([](double s) { return std::max(s - 100.0, 0.0) * s / 100.0; }, 1.0);
  for (const ClaimSpec& c : {ClaimSpec::call(100.0, 1.0), ClaimSpec::put(90.0, 1.0), ClaimSpec::call(130.0, 1.0),
                             ClaimSpec::log_contract(110.0, 1.0), cubic}) {
    const double m1 = lognormal_expect([&](double x) { return c.payoff(x); }, 100.0, 0.05, 0.25, 1.0);
    const double m2 = lognormal_expect([&](double x) { return c.payoff(x) * c.payoff(x); }, 100.0, 0.05, 0.25, 1.0);
    const ClaimMoments m = lognormal_claim_moments(c, 0.0, 100.0, 0.05, 0.25);
    CHECK(m.mean == doctest::Approx(m1).epsilon(1e-7));
    CHECK(m.variance == doctest::Approx(m2 - m1 * m1).epsilon(1e-6));
  }
}

TEST_CASE("pure investment holding and its sensitivity") {
  const BlackScholesMarket mk{100.0, 0.08, 0.2};
  const ExponentialPreference pref{1.0, 0.0};
  CHECK(bs_pure_investment(mk, pref, 0.3, 100.0) == doctest::Approx(0.02).epsilon(1e-14));
  CHECK(bs_pure_investment(mk, pref, 0.3, 50.0) * 50.0 == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(bs_pure_investment_sensitivity(mk, pref, 100.0) == doctest::Approx(-2e-4).epsilon(1e-14));
}

TEST_CASE("entropy measure drift of the non-traded factor") {
  const BasisRiskMarket mk{{100.0, 0.06, 0.2}, {80.0, 0.1, 0.3}, 0.5};
  const MeasureShift s = entropy_measure_shift(mk);
  CHECK(s.s_drift == 0.0);
  CHECK(s.y_drift == doctest::Approx(0.1 - 0.5 * 0.3 * 0.06 / 0.2).epsilon(1e-14));
  const BasisRiskMarket q = under_entropy_measure(mk);
  CHECK(q.traded.mu == 0.0);
  CHECK(q.nontraded.mu == doctest::Approx(s.y_drift));
}

TEST_CASE("perfectly correlated basis hedge reduces to the delta hedge") {
  const BasisRiskMarket mk{{100.0, 0.05, 0.2}, {100.0, 0.05, 0.2}, 1.0};
  ClaimSpec c = ClaimSpec::call(100.0, 1.0);
  c.underlying = Underlying::NonTraded;
  const ValueHedge vh = basis_claim_value_hedge(mk, c, 0.2, 100.0, 100.0);
  CHECK(vh.value == doctest::Approx(bs_call(100.0, 100.0, 0.8, 0.2)).epsilon(1e-10));
  const double d1 = 0.5 * 0.2 * std::sqrt(0.8);
  CHECK(vh.xi == doctest::Approx(ncdf(d1)).epsilon(1e-10));
}

TEST_CASE("uncorrelated basis risk leaves the full variance unhedged") {
  const BasisRiskMarket mk{{100.0, 0.0, 0.2}, {100.0, 0.0, 0.25}, 0.0};
  ClaimSpec c = ClaimSpec::call(100.0, 1.0);
  c.underlying = Underlying::NonTraded;
  const HedgingError h = hedging_error_second_moment(mk, c, TimeGrid::uniform(0.0, 1.0, 20), 20000, 4);
  const double m1 = lognormal_expect([&](double x) { return c.payoff(x); }, 100.0, 0.0, 0.25, 1.0);
  const double m2 = lognormal_expect([&](double x) { return c.payoff(x) * c.payoff(x); }, 100.0, 0.0, 0.25, 1.0);
  CHECK(h.value0 == doctest::Approx(m1).epsilon(1e-6));
  CHECK(std::abs(h.second_moment.value - (m2 - m1 * m1)) < 4.0 * h.second_moment.se);
}

TEST_CASE("strategy decomposition recovers a known sensitivity") {
  const PathSet ps = simulate_gbm({100.0, 0.0, 0.2}, TimeGrid::uniform(0.0, 1.0, 500), 20, 8);
  const PathMatrix strat = (0.5 * ps.factor("S").array()).matrix();
  const StrategyDecomposition a = decompose_strategy(strat, ps, [](double, double) { return 0.5; });
  CHECK((a.gamma.array() - 0.5).abs().maxCoeff() < 1e-14);
  const StrategyDecomposition w = decompose_strategy(strat, ps);
  CHECK(w.gamma(3, 250) == doctest::Approx(0.5).epsilon(1e-8));
  const PathMatrix ct = combined_target(strat, strat, 2.0);
  CHECK(ct(1, 7) == doctest::Approx(3.0 * strat(1, 7)));
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(BlackScholesMarket({-1.0, 0.08, 0.2}).validate(), ParameterError);
  CHECK_THROWS_AS(ExponentialPreference({0.0, 0.0}).validate(), ParameterError);
  CHECK_THROWS_AS(ClaimSpec::call(100.0, 2.0).validate(1.0), ParameterError);
  CHECK_THROWS_AS(BasisRiskMarket({{100.0, 0.0, 0.2}, {100.0, 0.0, 0.2}, 1.5}).validate(), ParameterError);
}

#include "tcost/band_simulator.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

using namespace tcost;

namespace {

const BlackScholesMarket kMarket{100.0, 0.08, 0.2};
const ExponentialPreference kPref{1.0, 0.0};

BandSpec bs_band(const PathSet& ps, double eps) {
  const BandRule rule = pure_investment_band(kMarket, kPref, eps);
  const auto& S = ps.factor("S");
  BandSpec b{ps.grid(), PathMatrix(S.rows(), S.cols()), PathMatrix(S.rows(), S.cols())};
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const BandPoint pt = rule(ps.grid().t(k), S(i, k));
      b.center(i, k) = pt.center;
      b.halfwidth(i, k) = pt.halfwidth;
    }
  return b;
}

}  // namespace

TEST_CASE("scripted five-step ledger") {
  const std::vector<double> S{100.0, 101.0, 99.0, 102.0, 100.0, 103.0};
  const std::vector<double> c{1.0, 1.8, 1.2, 0.2, 0.5, 9.0};
  const std::vector<double> h(6, 0.5);
  std::vector<double> pos(6);
  TradeLedger ledger;
  const PathPolicyStats st = run_band_path(S, c, h, 0.01, 0.0, 0.0, 1.0, pos, &ledger);

  const std::vector<double> expected_pos{1.0, 1.3, 1.3, 0.7, 0.7, 0.7};
  for (int k = 0; k < 6; ++k) CHECK(pos[k] == doctest::Approx(expected_pos[k]).epsilon(1e-14));
  REQUIRE(ledger.entries.size() == 3);
  CHECK(ledger.entries[0].step == 0);
  CHECK(ledger.entries[0].price == doctest::Approx(101.0));
  CHECK(ledger.entries[0].cost == doctest::Approx(1.0));
  CHECK(ledger.entries[1].step == 1);
  CHECK(ledger.entries[1].shares == doctest::Approx(0.3));
  CHECK(ledger.entries[1].price == doctest::Approx(102.01));
  CHECK(ledger.entries[1].cost == doctest::Approx(0.303));
  CHECK(ledger.entries[2].step == 3);
  CHECK(ledger.entries[2].shares == doctest::Approx(-0.6));
  CHECK(ledger.entries[2].price == doctest::Approx(100.98));
  CHECK(ledger.entries[2].cost == doctest::Approx(0.612));
  CHECK(st.initial_cost == doctest::Approx(1.0));
  CHECK(st.total_cost == doctest::Approx(0.915));
  CHECK(ledger.cumulative_cost == doctest::Approx(1.915));
  CHECK(st.gain == doctest::Approx(3.0).epsilon(1e-13));
  CHECK(st.terminal_wealth == doctest::Approx(3.0 - 1.915).epsilon(1e-13));
  CHECK(st.n_trades == 2);
  CHECK(st.outside == 0);
}

TEST_CASE("the band applied at a step is the previous halfwidth") {
  const std::vector<double> S{100.0, 100.0, 100.0, 100.0};
  const std::vector<double> c{0.0, 0.0, 0.0, 0.0};
  const std::vector<double> h{1.0, 0.1, 0.1, 0.1};
  std::vector<double> pos(4);
  run_band_path(S, c, h, 0.0, 0.0, 0.0, 0.6, pos);
  CHECK(pos[1] == doctest::Approx(0.6));  // uses h_0 = 1
  CHECK(pos[2] == doctest::Approx(0.1));  // uses h_1 = 0.1
}

TEST_CASE("wealth identity and containment on simulated paths") {
  const PathSet ps = simulate_gbm(kMarket.params(), TimeGrid::uniform(0.0, 1.0, 500), 40, 13);
  const BandSpec band = bs_band(ps, 0.01);
  const PolicyRunResult r = run_band_policy(ps, band, 0.01, 5.0, 0.0, InitialPlacement::Stationary, 2);
  const auto& S = ps.factor("S");
  CHECK(r.outside == 0);
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    double gain = 0.0;
    for (Eigen::Index k = 0; k < 500; ++k) gain += r.position(i, k) * (S(i, k + 1) - S(i, k));
    const double w = 5.0 + gain - r.ledgers[i].cumulative_cost;
    CHECK(std::abs(w - r.terminal_wealth[i]) <= 1e-10 * std::max(1.0, std::abs(w)));
    // post-trade position within the lagged band
    for (Eigen::Index k = 1; k < 500; ++k) {
      CHECK(std::abs(r.position(i, k) - band.center(i, k)) <= band.halfwidth(i, k - 1) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("a band wider than the price range never trades after the opening") {
  const PathSet ps = simulate_gbm(kMarket.params(), TimeGrid::uniform(0.0, 1.0, 200), 20, 2);
  BandSpec band = bs_band(ps, 0.01);
  band.halfwidth.setConstant(1e3);
  const PolicyRunResult r = run_band_policy(ps, band, 0.01, 0.0, 0.0, InitialPlacement::Center, 1);
  for (const auto& l : r.ledgers) CHECK(l.entries.size() == 1);
  for (double c : r.total_cost) CHECK(c == 0.0);
}

TEST_CASE("zero halfwidth tracks the target at every step") {
  const PathSet ps = simulate_gbm(kMarket.params(), TimeGrid::uniform(0.0, 1.0, 100), 5, 2);
  BandSpec band = bs_band(ps, 0.0);
  CHECK(band.halfwidth.maxCoeff() == 0.0);
  const PolicyRunResult r = run_band_policy(ps, band, 0.01, 0.0, 0.0, InitialPlacement::Center, 1);
  CHECK(r.degenerate);
  for (Eigen::Index k = 1; k < 100; ++k) CHECK(r.position(0, k) == doctest::Approx(band.center(0, k)).epsilon(1e-14));
  CHECK(r.ledgers[0].entries.size() == 100);
}

TEST_CASE("stationary placement is uniform on [-1, 1] and seed driven") {
  double m1 = 0.0, m2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = placement_draw(77, i);
    CHECK(std::abs(u) <= 1.0);
    m1 += u / n;
    m2 += u * u / n;
  }
  CHECK(std::abs(m1) < 4.0 * std::sqrt(1.0 / 3.0 / n));
  CHECK(m2 == doctest::Approx(1.0 / 3.0).epsilon(0.02));
  CHECK(placement_draw(77, 5) == placement_draw(77, 5));
  CHECK(placement_draw(77, 5) != placement_draw(78, 5));
  CHECK(parse_placement("center") == InitialPlacement::Center);
  CHECK_THROWS_AS(parse_placement("edge"), ParameterError);
}

TEST_CASE("certainty equivalents against two-point oracles") {
  const std::vector<double> w{0.0, 1.0};
  for (double p : {0.5, 1.0, 3.0}) {
    const double oracle = -std::log(0.5 * (1.0 + std::exp(-p))) / p;
    CHECK(certainty_equivalent(w, p).value == doctest::Approx(oracle).epsilon(1e-13));
  }
  // large wealth does not overflow
  const std::vector<double> big{1e4, 1e4 + 1.0};
  CHECK(certainty_equivalent(big, 1.0).value == doctest::Approx(1e4 + 0.3798854930417224).epsilon(1e-13));
  // a sure shift moves the CE one for one with zero error
  const std::vector<double> a{0.3, -1.2, 2.5, 0.7}, b{0.8, -0.7, 3.0, 1.2};
  const Estimate gap = certainty_equivalent_gap(a, b, 2.0);
  CHECK(gap.value == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(gap.se < 1e-12);
}

TEST_CASE("closed-form loss") {
  const double oracle = 0.5 * std::pow(1.5 * 0.01, 2.0 / 3.0) * std::pow(2.0, 4.0 / 3.0) * 0.04;
  CHECK(bs_predicted_loss(kMarket, kPref, 0.01, 1.0) == doctest::Approx(oracle).epsilon(1e-13));
  CHECK(oracle == doctest::Approx(3.0652e-3).epsilon(1e-4));
}

TEST_CASE("welfare run: split adds up and threads do not change results") {
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 1000);
  WelfareSettings s1;
  s1.threads = 1;
  WelfareSettings s4 = s1;
  s4.threads = 4;
  const WelfareReport a = welfare_experiment(kMarket, kPref, 0.01, g, 300, 42, s1);
  const WelfareReport b = welfare_experiment(kMarket, kPref, 0.01, g, 300, 42, s4);
  CHECK(a.loss.value == b.loss.value);
  CHECK(a.loss.se == b.loss.se);
  CHECK(a.ergodic_ratio.value == b.ergodic_ratio.value);
  CHECK(a.loss.value == doctest::Approx(a.displacement_loss.value + a.direct_cost_loss.value).epsilon(1e-12));
  CHECK(a.ce_frictionless_exact == doctest::Approx(0.08 * 0.08 / (2.0 * 0.04)).epsilon(1e-14));
  CHECK(a.loss.value > 0.0);
}

TEST_CASE("welfare sweep shares paths across eps") {
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 500);
  const auto rows = welfare_sweep(kMarket, kPref, {0.02, 0.0}, g, 100, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].loss.value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rows[0].loss.value > rows[1].loss.value);
}

TEST_CASE("scaling study input checks") {
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 100);
  CHECK_THROWS_AS(scaling_study(kMarket, kPref, {0.01, 0.02}, g, 10, 1), ParameterError);
  const ScalingStudy st = scaling_study(kMarket, kPref, {0.0, 0.02, 0.01, 0.005}, g, 50, 1);
  CHECK(!st.warnings.empty());
}

TEST_CASE("ledger csv layout") {
  const PathSet ps = simulate_gbm(kMarket.params(), TimeGrid::uniform(0.0, 1.0, 50), 2, 1);
  const BandSpec band = bs_band(ps, 0.01);
  const PolicyRunResult r = run_band_policy(ps, band, 0.01, 0.0, 0.0);
  std::ostringstream out;
  write_ledger_csv(ps, band, r, out);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "path_id,step,t,S,phi_center,halfwidth,position,trade,cost");
}

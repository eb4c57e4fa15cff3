#include "tcost/shadow.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace tcost;

TEST_CASE("cubic identities at the band edges") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 4.0);
  for (int i = 0; i < 500; ++i) {
    const double p = u(rng), eps = 0.005 * u(rng), S = 30.0 * u(rng), cs = u(rng), cp = u(rng);
    const double a = shadow_alpha(p, cs, cp);
    const double g = shadow_gamma(eps, S, a);
    const double h = shadow_halfwidth(a, g);
    CHECK(a == doctest::Approx(p * cs / (3.0 * cp)).epsilon(1e-14));
    CHECK(std::abs(shadow_cubic(a, g, h) + eps * S) <= 1e-12 * eps * S);
    CHECK(std::abs(shadow_cubic(a, g, -h) - eps * S) <= 1e-12 * eps * S);
    CHECK(std::abs(shadow_cubic_slope(a, g, h)) <= 1e-12 * g);
    CHECK(std::abs(h / band_halfwidth(p, eps, S, cp, cs) - 1.0) < 1e-12);
    // strictly inside the band the deviation stays inside the spread
    const double x = h * (2.0 * u(rng) / 4.05 - 1.0);
    CHECK(std::abs(shadow_cubic(a, g, x)) <= eps * S * (1.0 + 1e-12));
  }
}

TEST_CASE("Black-Scholes coefficients from the reference values") {
  // c_S = 400, c_phi = 1.6e-5, alpha = p S^4 / (3 m^2)
  const double a = shadow_alpha(1.0, 400.0, 1.6e-5);
  CHECK(a == doctest::Approx(1e8 / 12.0).epsilon(1e-13));
  const double g = shadow_gamma(0.01, 100.0, a);
  CHECK(g == doctest::Approx(3.0 * std::cbrt(a) * std::pow(0.5, 2.0 / 3.0)).epsilon(1e-13));
  CHECK(shadow_halfwidth(a, g) * 100.0 == doctest::Approx(0.39149).epsilon(1e-4));
  CHECK_THROWS_AS(shadow_alpha(1.0, 400.0, 0.0), ParameterError);
}

TEST_CASE("shadow experiment on a short run") {
  const BlackScholesMarket mk{100.0, 0.08, 0.2};
  const ExponentialPreference pref{1.0, 0.0};
  ShadowSettings s;
  s.min_bucket = 10;
  s.threads = 1;
  const auto rows = shadow_experiment(mk, pref, {0.02, 0.01}, TimeGrid::uniform(0.0, 1.0, 2000), 100, 4, s);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.contained_fraction == 1.0);
    CHECK(r.cubic_identity_error < 1e-12);
    CHECK(r.halfwidth_consistency < 1e-12);
    std::size_t total = 0;
    for (const auto& b : r.buckets) total += b.count;
    CHECK(total == r.steps);
    // drift points the right way: positive slope in deviation
    CHECK(r.drift_coefficient > 0.0);
  }
  s.threads = 3;
  const auto again = shadow_experiment(mk, pref, {0.02, 0.01}, TimeGrid::uniform(0.0, 1.0, 2000), 100, 4, s);
  CHECK(again[1].drift_coefficient == rows[1].drift_coefficient);
  CHECK(again[1].sup_residual == rows[1].sup_residual);
  CHECK(again[0].terminal_residual_rms.value == rows[0].terminal_residual_rms.value);

  std::ostringstream out;
  write_drift_csv(rows, out);
  CHECK(out.str().rfind("eps,decile,count,mean_ratio,predicted,estimated,se\n", 0) == 0);
}

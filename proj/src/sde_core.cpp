#include "tcost/sde_core.hpp"

#include "tcost/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace tcost {

std::string to_string(Measure m) {
  switch (m) {
    case Measure::P: return "P";
    case Measure::Q: return "Q";
    case Measure::QH: return "QH";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// TimeGrid

TimeGrid::TimeGrid(std::vector<double> points, bool uniform)
    : points_(std::move(points)), uniform_(uniform) {}

TimeGrid TimeGrid::uniform(double t0, double T, std::size_t n_steps) {
  if (!(t0 < T)) throw ParameterError("TimeGrid: need t0 < T");
  if (n_steps == 0) throw ParameterError("TimeGrid: n_steps must be positive");
  std::vector<double> pts(n_steps + 1);
  const double h = (T - t0) / static_cast<double>(n_steps);
  for (std::size_t k = 0; k <= n_steps; ++k) pts[k] = t0 + h * static_cast<double>(k);
  pts.back() = T;
  return TimeGrid(std::move(pts), true);
}

TimeGrid TimeGrid::from_points(std::vector<double> points) {
  if (points.size() < 2) throw ParameterError("TimeGrid: need at least two points");
  for (std::size_t k = 1; k < points.size(); ++k) {
    if (!(points[k] > points[k - 1])) throw ParameterError("TimeGrid: points must be strictly increasing");
  }
  return TimeGrid(std::move(points), false);
}

TimeGrid TimeGrid::with_density(double T, double steps_per_year) {
  if (!(T > 0.0) || !(steps_per_year > 0.0)) throw ParameterError("TimeGrid: T and density must be positive");
  const auto n = static_cast<std::size_t>(std::ceil(T * steps_per_year - 1e-9));
  return uniform(0.0, T, std::max<std::size_t>(n, 1));
}

std::size_t TimeGrid::index_at_or_before(double t) const {
  const double tol = 1e-12 * std::max(1.0, std::abs(T()));
  const auto it = std::upper_bound(points_.begin(), points_.end(), t + tol);
  if (it == points_.begin()) return 0;
  return static_cast<std::size_t>(std::distance(points_.begin(), it) - 1);
}

// ---------------------------------------------------------------------------
// RNG

namespace {

std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t path, std::uint64_t stream) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  return std::seed_seq{lo(seed), hi(seed), lo(path), hi(path), lo(stream), hi(stream), 0x7c0u};
}

}  // namespace

PathRng::PathRng(std::uint64_t seed, std::uint64_t path, std::uint64_t stream) {
  auto seq = make_seed_seq(seed, path, stream);
  engine_.seed(seq);
}

// ---------------------------------------------------------------------------
// PathSet

PathSet::PathSet(TimeGrid grid, std::uint64_t seed, Measure measure)
    : grid_(std::move(grid)), seed_(seed), measure_(measure) {}

std::size_t PathSet::n_paths() const {
  return factors_.empty() ? 0 : static_cast<std::size_t>(factors_.begin()->second.rows());
}

const PathMatrix& PathSet::factor(const std::string& name) const {
  const auto it = factors_.find(name);
  if (it == factors_.end()) throw ParameterError("PathSet: unknown factor '" + name + "'");
  return it->second;
}

std::vector<std::string> PathSet::factor_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : factors_) names.push_back(name);
  return names;
}

void PathSet::add_factor(const std::string& name, PathMatrix values) {
  if (values.cols() != static_cast<Eigen::Index>(grid_.n_points())) {
    throw ParameterError("PathSet: factor '" + name + "' does not match the grid");
  }
  if (!factors_.empty() && values.rows() != static_cast<Eigen::Index>(n_paths())) {
    throw ParameterError("PathSet: factor '" + name + "' has a different path count");
  }
  if (!values.allFinite()) throw ParameterError("PathSet: factor '" + name + "' has non-finite values");
  factors_.insert_or_assign(name, std::move(values));
}

// ---------------------------------------------------------------------------
// Simulation

void GbmParams::validate() const {
  if (!(S0 > 0.0)) throw ParameterError("GBM: S0 must be positive");
  if (!(sigma > 0.0)) throw ParameterError("GBM: sigma must be positive");
  if (!std::isfinite(mu)) throw ParameterError("GBM: mu must be finite");
}

namespace {

bool lognormal_fill(const GbmParams& p, const TimeGrid& grid, PathRng& rng, std::span<double> out,
                    std::span<double> dW) {
  double log_s = std::log(p.S0);
  out[0] = p.S0;
  const double drift = p.mu - 0.5 * p.sigma * p.sigma;
  bool valid = true;
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    const double dt = grid.dt(k);
    const double w = std::sqrt(dt) * rng.normal();
    if (!dW.empty()) dW[k] = w;
    log_s += drift * dt + p.sigma * w;
    out[k + 1] = std::exp(log_s);
    if (!std::isfinite(out[k + 1]) || out[k + 1] <= 0.0) valid = false;
  }
  return valid;
}

/// Drops rows flagged invalid, preserving path order.
PathMatrix compact_rows(const PathMatrix& m, const std::vector<char>& valid) {
  const auto n_valid = static_cast<Eigen::Index>(std::count(valid.begin(), valid.end(), 1));
  if (n_valid == m.rows()) return m;
  PathMatrix out(n_valid, m.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (valid[static_cast<std::size_t>(i)]) out.row(r++) = m.row(i);
  }
  return out;
}

std::span<double> row_span(PathMatrix& m, Eigen::Index i) {
  return {m.row(i).data(), static_cast<std::size_t>(m.cols())};
}

}  // namespace

bool gbm_path(const GbmParams& params, const TimeGrid& grid, std::uint64_t seed,
              std::uint64_t path, std::span<double> out) {
  return gbm_path(params, grid, seed, path, out, {});
}

bool gbm_path(const GbmParams& params, const TimeGrid& grid, std::uint64_t seed,
              std::uint64_t path, std::span<double> out, std::span<double> dW) {
  if (out.size() != grid.n_points()) throw ParameterError("gbm_path: output size mismatch");
  if (!dW.empty() && dW.size() != grid.n_steps()) throw ParameterError("gbm_path: dW size mismatch");
  PathRng rng(seed, path);
  return lognormal_fill(params, grid, rng, out, dW);
}

PathSet simulate_gbm(const GbmParams& params, const TimeGrid& grid, std::size_t n_paths,
                     std::uint64_t seed, Measure measure, unsigned threads) {
  params.validate();
  if (n_paths == 0) throw ParameterError("simulate_gbm: n_paths must be >= 1");
  PathMatrix s(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(grid.n_points()));
  std::vector<char> valid(n_paths, 1);
  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      valid[i] = gbm_path(params, grid, seed, i, row_span(s, static_cast<Eigen::Index>(i))) ? 1 : 0;
    }
  });
  PathSet out(grid, seed, measure);
  const auto bad = static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0));
  out.add_factor("S", compact_rows(s, valid));
  out.set_invalid_count(bad);
  return out;
}

bool correlated_pair_path(const GbmParams& s, const GbmParams& y, double rho, const TimeGrid& grid,
                          std::uint64_t seed, std::uint64_t path, std::span<double> s_out,
                          std::span<double> y_out) {
  if (!(std::abs(rho) <= 1.0)) throw ParameterError("correlated pair: |rho| must be <= 1");
  PathRng rng(seed, path);
  const bool degenerate = std::abs(rho) == 1.0;
  const double orth = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  double log_s = std::log(s.S0), log_y = std::log(y.S0);
  s_out[0] = s.S0;
  y_out[0] = y.S0;
  const double ds = s.mu - 0.5 * s.sigma * s.sigma;
  const double dy = y.mu - 0.5 * y.sigma * y.sigma;
  bool valid = true;
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    const double dt = grid.dt(k);
    const double sq = std::sqrt(dt);
    const double z1 = rng.normal();
    const double zy = degenerate ? rho * z1 : rho * z1 + orth * rng.normal();
    log_s += ds * dt + s.sigma * sq * z1;
    log_y += dy * dt + y.sigma * sq * zy;
    s_out[k + 1] = std::exp(log_s);
    y_out[k + 1] = std::exp(log_y);
    if (!std::isfinite(s_out[k + 1]) || !std::isfinite(y_out[k + 1])) valid = false;
  }
  return valid;
}

PathSet simulate_correlated_pair(const GbmParams& s, const GbmParams& y, double rho,
                                 const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                 Measure measure, unsigned threads) {
  s.validate();
  y.validate();
  if (!(std::abs(rho) <= 1.0)) throw ParameterError("simulate_correlated_pair: |rho| must be <= 1");
  if (n_paths == 0) throw ParameterError("simulate_correlated_pair: n_paths must be >= 1");
  const auto rows = static_cast<Eigen::Index>(n_paths);
  const auto cols = static_cast<Eigen::Index>(grid.n_points());
  PathMatrix ms(rows, cols), my(rows, cols);
  std::vector<char> valid(n_paths, 1);
  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      valid[i] = correlated_pair_path(s, y, rho, grid, seed, i, row_span(ms, r), row_span(my, r)) ? 1 : 0;
    }
  });
  PathSet out(grid, seed, measure);
  out.add_factor("S", compact_rows(ms, valid));
  out.add_factor("Y", compact_rows(my, valid));
  out.set_invalid_count(static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0)));
  return out;
}

PathSet euler_maruyama(const ItoModel& model, double x0, const TimeGrid& grid,
                       std::size_t n_paths, std::uint64_t seed, unsigned threads) {
  if (!model.drift || !model.diffusion) throw ParameterError("euler_maruyama: coefficient functions required");
  if (n_paths == 0) throw ParameterError("euler_maruyama: n_paths must be >= 1");
  PathMatrix x(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(grid.n_points()));
  std::vector<char> valid(n_paths, 1);
  for_each_chunk(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      PathRng rng(seed, i);
      auto row = x.row(static_cast<Eigen::Index>(i));
      double v = x0;
      row(0) = v;
      bool ok = std::isfinite(v);
      for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        const double t = grid.t(k), dt = grid.dt(k);
        v += model.drift(t, v) * dt + model.diffusion(t, v) * std::sqrt(dt) * rng.normal();
        row(static_cast<Eigen::Index>(k + 1)) = v;
        if (!std::isfinite(v)) {
          ok = false;
          row.tail(row.size() - static_cast<Eigen::Index>(k) - 1).setZero();
          break;
        }
      }
      valid[i] = ok ? 1 : 0;
    }
  });
  PathSet out(grid, seed, Measure::P);
  out.add_factor("X", compact_rows(x, valid));
  out.set_invalid_count(static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0)));
  return out;
}

// ---------------------------------------------------------------------------
// Coefficient estimation

std::size_t default_window(const TimeGrid& grid) {
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(0.01 * static_cast<double>(grid.n_steps()))));
}

namespace {

std::size_t checked_window(const TimeGrid& grid, std::optional<std::size_t> window) {
  const std::size_t w = window.value_or(default_window(grid));
  if (w == 0) throw ParameterError("local coefficients: window must be positive");
  if (w > grid.n_steps()) throw ParameterError("local coefficients: window larger than grid");
  return w;
}

/// Centred window of increments [lo, lo + w) for grid point k.
std::size_t window_start(std::size_t k, std::size_t w, std::size_t n_steps) {
  const std::size_t half = w / 2;
  const std::size_t lo = k > half ? k - half : 0;
  return std::min(lo, n_steps - w);
}

}  // namespace

CoefficientSeries local_coefficients(const PathSet& paths, const std::string& factor,
                                     std::optional<std::size_t> window) {
  const auto& x = paths.factor(factor);
  const auto& grid = paths.grid();
  const std::size_t w = checked_window(grid, window);
  const std::size_t n = grid.n_steps();

  std::vector<double> time_prefix(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) time_prefix[k + 1] = time_prefix[k] + grid.dt(k);

  CoefficientSeries out{grid, PathMatrix(x.rows(), x.cols()), PathMatrix(x.rows(), x.cols()), std::nullopt};
  std::vector<double> sum(n + 1), sq(n + 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double d = x(i, static_cast<Eigen::Index>(k + 1)) - x(i, static_cast<Eigen::Index>(k));
      sum[k + 1] = sum[k] + d;
      sq[k + 1] = sq[k] + d * d;
    }
    for (std::size_t k = 0; k <= n; ++k) {
      const std::size_t lo = window_start(k, w, n), hi = lo + w;
      const double span_t = time_prefix[hi] - time_prefix[lo];
      out.drift(i, static_cast<Eigen::Index>(k)) = (sum[hi] - sum[lo]) / span_t;
      out.variation(i, static_cast<Eigen::Index>(k)) = std::max(0.0, sq[hi] - sq[lo]) / span_t;
    }
  }
  return out;
}

CoefficientSeries local_coefficients(const PathSet& paths, const std::string& factor,
                                     const ItoModel& analytic) {
  if (!analytic.drift || !analytic.diffusion) throw ParameterError("local_coefficients: incomplete model");
  const auto& x = paths.factor(factor);
  const auto& grid = paths.grid();
  CoefficientSeries out{grid, PathMatrix(x.rows(), x.cols()), PathMatrix(x.rows(), x.cols()), std::nullopt};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      const double t = grid.t(static_cast<std::size_t>(k));
      const double s = analytic.diffusion(t, x(i, k));
      out.drift(i, k) = analytic.drift(t, x(i, k));
      out.variation(i, k) = s * s;
    }
  }
  return out;
}

CoefficientSeries local_covariation(const PathSet& paths, const std::string& xname,
                                    const std::string& yname, std::optional<std::size_t> window) {
  auto out = local_coefficients(paths, xname, window);
  const auto cy = local_coefficients(paths, yname, window);
  const auto& x = paths.factor(xname);
  const auto& y = paths.factor(yname);
  const auto& grid = paths.grid();
  const std::size_t w = checked_window(grid, window);
  const std::size_t n = grid.n_steps();

  std::vector<double> time_prefix(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) time_prefix[k + 1] = time_prefix[k] + grid.dt(k);

  PathMatrix cross(x.rows(), x.cols());
  std::vector<double> prod(n + 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto a = static_cast<Eigen::Index>(k), b = a + 1;
      prod[k + 1] = prod[k] + (x(i, b) - x(i, a)) * (y(i, b) - y(i, a));
    }
    for (std::size_t k = 0; k <= n; ++k) {
      const std::size_t lo = window_start(k, w, n), hi = lo + w;
      const auto kk = static_cast<Eigen::Index>(k);
      double c = (prod[hi] - prod[lo]) / (time_prefix[hi] - time_prefix[lo]);
      // Rounding in the prefix differences can break Cauchy-Schwarz by an ulp.
      const double bound = std::sqrt(out.variation(i, kk) * cy.variation(i, kk));
      cross(i, kk) = std::clamp(c, -bound, bound);
    }
  }
  out.cross = std::move(cross);
  return out;
}

void write_pathset_csv(const PathSet& paths, std::ostream& out) {
  const auto names = paths.factor_names();
  out << "path_id,step";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  const auto prec = out.precision(17);
  for (std::size_t i = 0; i < paths.n_paths(); ++i) {
    for (std::size_t k = 0; k < paths.grid().n_points(); ++k) {
      out << i << ',' << k;
      for (const auto& n : names) {
        out << ',' << paths.factor(n)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      }
      out << '\n';
    }
  }
  out.precision(prec);
}

}  // namespace tcost

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcost {

/// Paths are stored one per row so a single path is contiguous.
using PathMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PathRow = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Measure { P, Q, QH };

std::string to_string(Measure m);

/// Time discretisation [t0, T] with strictly increasing points.
class TimeGrid {
 public:
  static TimeGrid uniform(double t0, double T, std::size_t n_steps);
  static TimeGrid from_points(std::vector<double> points);
  /// Uniform grid with `steps_per_year` steps per unit of time (rounded up).
  static TimeGrid with_density(double T, double steps_per_year = 1e4);

  double t0() const { return points_.front(); }
  double T() const { return points_.back(); }
  std::size_t n_steps() const { return points_.size() - 1; }
  std::size_t n_points() const { return points_.size(); }
  double t(std::size_t k) const { return points_[k]; }
  double dt(std::size_t k) const { return points_[k + 1] - points_[k]; }
  bool is_uniform() const { return uniform_; }
  std::span<const double> points() const { return points_; }

  /// Largest index k with t(k) <= t (up to rounding).
  std::size_t index_at_or_before(double t) const;

  bool operator==(const TimeGrid& other) const { return points_ == other.points_; }

 private:
  TimeGrid(std::vector<double> points, bool uniform);
  std::vector<double> points_;
  bool uniform_ = true;
};

/// Normal draws for one path, keyed by (seed, path index, stream).
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path, std::uint64_t stream = 0);
  double normal() { return normal_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Discretised sample paths of one or more named factors.
class PathSet {
 public:
  PathSet(TimeGrid grid, std::uint64_t seed, Measure measure);

  const TimeGrid& grid() const { return grid_; }
  std::uint64_t seed() const { return seed_; }
  Measure measure() const { return measure_; }
  std::size_t n_paths() const;
  std::size_t n_invalid() const { return n_invalid_; }

  bool has(const std::string& name) const { return factors_.count(name) != 0; }
  const PathMatrix& factor(const std::string& name) const;
  std::vector<std::string> factor_names() const;

  /// Adds a factor; rows must match existing factors and every value must be finite.
  void add_factor(const std::string& name, PathMatrix values);
  void set_invalid_count(std::size_t n) { n_invalid_ = n; }

 private:
  TimeGrid grid_;
  std::uint64_t seed_;
  Measure measure_;
  std::map<std::string, PathMatrix> factors_;
  std::size_t n_invalid_ = 0;
};

struct GbmParams {
  double S0 = 100.0;
  double mu = 0.0;
  double sigma = 0.2;

  void validate() const;
};

/// Fills `out` (size grid.n_points()) with path `path` of an exact lognormal
/// scheme. Returns false when the path overflowed.
bool gbm_path(const GbmParams& params, const TimeGrid& grid, std::uint64_t seed,
              std::uint64_t path, std::span<double> out);

/// Same as gbm_path but also returns the driving Brownian increments.
bool gbm_path(const GbmParams& params, const TimeGrid& grid, std::uint64_t seed,
              std::uint64_t path, std::span<double> out, std::span<double> dW);

PathSet simulate_gbm(const GbmParams& params, const TimeGrid& grid, std::size_t n_paths,
                     std::uint64_t seed, Measure measure = Measure::P, unsigned threads = 0);

/// Two lognormal factors "S" and "Y" whose Brownian motions have correlation rho.
bool correlated_pair_path(const GbmParams& s, const GbmParams& y, double rho, const TimeGrid& grid,
                          std::uint64_t seed, std::uint64_t path, std::span<double> s_out,
                          std::span<double> y_out);

PathSet simulate_correlated_pair(const GbmParams& s, const GbmParams& y, double rho,
                                 const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                 Measure measure = Measure::P, unsigned threads = 0);

/// Scalar Itô dynamics dX = b(t, X) dt + sigma(t, X) dW.
struct ItoModel {
  std::function<double(double, double)> drift;
  std::function<double(double, double)> diffusion;
};

/// First-order Euler-Maruyama scheme, factor "X". Paths producing non-finite
/// values are dropped and counted in PathSet::n_invalid().
PathSet euler_maruyama(const ItoModel& model, double x0, const TimeGrid& grid,
                       std::size_t n_paths, std::uint64_t seed, unsigned threads = 0);

/// Local drift b (units per year), local quadratic variation c (units^2 per
/// year) and an optional covariation series, one row per path.
struct CoefficientSeries {
  TimeGrid grid;
  PathMatrix drift;
  PathMatrix variation;
  std::optional<PathMatrix> cross;
};

/// Default estimation window: 1% of the grid, at least two steps.
std::size_t default_window(const TimeGrid& grid);

/// Estimates b and c of `factor` from squared increments averaged over a
/// centred window of `window` steps.
CoefficientSeries local_coefficients(const PathSet& paths, const std::string& factor,
                                     std::optional<std::size_t> window = std::nullopt);

/// Evaluates the analytic coefficients along the simulated path.
CoefficientSeries local_coefficients(const PathSet& paths, const std::string& factor,
                                     const ItoModel& analytic);

/// Windowed estimates for a pair of factors: drift and variation describe X,
/// cross holds c^{X,Y}.
CoefficientSeries local_covariation(const PathSet& paths, const std::string& x,
                                    const std::string& y,
                                    std::optional<std::size_t> window = std::nullopt);

/// Columns: path_id, step, one column per factor.
void write_pathset_csv(const PathSet& paths, std::ostream& out);

}  // namespace tcost

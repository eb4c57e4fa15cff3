#pragma once

#include "tcost/band_simulator.hpp"
#include "tcost/frictionless.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tcost {

inline constexpr const char* kVersion = "0.1.0";

enum class ExperimentKind { Band, Welfare, Scaling, Price, Hedge, Semistatic, ShadowCheck };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_kind(const std::string& text);

/// Raised for malformed, incomplete or out-of-range configurations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MarketConfig {
  std::string model = "bs";  // bs | basis_risk
  double S0 = 100.0;
  double mu = 0.08;
  double sigma = 0.2;
  double Y0 = 100.0;  // basis_risk only
  double mu_Y = 0.08;
  double sigma_Y = 0.2;
  double rho = 0.8;
};

struct ClaimConfig {
  bool present = false;
  std::string type = "call";  // call | put | log
  double strike = 100.0;
  double maturity = 1.0;
  double quantity = 1.0;
  std::string underlying = "traded";  // traded | nontraded
  double hedge_strike = 110.0;        // semistatic hedge instrument (call)
};

struct NumericsConfig {
  double T = 1.0;
  std::size_t n_steps = 10000;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 0;
  double eps = 0.01;
  std::vector<double> eps_list;
  unsigned threads = 0;
  InitialPlacement placement = InitialPlacement::Stationary;
  bool control_variate = true;
  double search_lower = -10.0;
  double search_upper = 10.0;
};

struct OutputConfig {
  std::string dir = ".";
  std::size_t band_paths = 10;
  bool csv = true;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Welfare;
  MarketConfig market;
  ExponentialPreference preference;
  ClaimConfig claim;
  NumericsConfig numerics;
  OutputConfig output;

  BlackScholesMarket bs_market() const;
  BasisRiskMarket basis_market() const;
  ClaimSpec claim_spec() const;
  TimeGrid grid() const;
};

/// Parses an INI document with sections [market], [preference], [claim],
/// [numerics] and [output]; applies the defaults for `kind` and validates.
ExperimentConfig parse_config(const std::string& text, ExperimentKind kind);
ExperimentConfig load_config(const std::filesystem::path& file, ExperimentKind kind);

/// Echo of every resolved setting, enough to re-run the experiment.
nlohmann::ordered_json config_echo(const ExperimentConfig& config);

struct OutputFile {
  std::string name;
  std::string content;
};

struct ExperimentReport {
  nlohmann::ordered_json body;  // without provenance timestamp
  std::string summary;
  std::vector<OutputFile> files;
  std::vector<std::string> warnings;
};

ExperimentReport run(const ExperimentConfig& config);

/// Writes report.txt, report.json (with a timestamp) and the CSV files.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace tcost

#include "tcost/experiment.hpp"

#include "tcost/notrade.hpp"
#include "tcost/shadow.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tcost {

using nlohmann::ordered_json;

namespace {

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"market", {"model", "S0", "mu", "sigma", "Y0", "mu_Y", "sigma_Y", "rho"}},
      {"preference", {"p", "x0"}},
      {"claim", {"type", "strike", "maturity", "quantity", "underlying", "hedge_strike"}},
      {"numerics",
       {"T", "n_steps", "steps_per_year", "n_paths", "seed", "eps", "eps_list", "threads", "placement",
        "control_variate", "search_lower", "search_upper"}},
      {"output", {"dir", "band_paths", "csv"}},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + raw + "'");
  }
  if (pos != v.size() || !std::isfinite(out)) throw ConfigError(key + ": expected a finite number, got '" + raw + "'");
  return out;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + raw + "'");
  }
}

bool to_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(to_double(key, item));
  }
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Band: return "band";
    case ExperimentKind::Welfare: return "welfare";
    case ExperimentKind::Scaling: return "scaling";
    case ExperimentKind::Price: return "price";
    case ExperimentKind::Hedge: return "hedge";
    case ExperimentKind::Semistatic: return "semistatic";
    case ExperimentKind::ShadowCheck: return "shadow-check";
  }
  return "welfare";
}

ExperimentKind parse_kind(const std::string& text) {
  for (auto k : {ExperimentKind::Band, ExperimentKind::Welfare, ExperimentKind::Scaling, ExperimentKind::Price,
                 ExperimentKind::Hedge, ExperimentKind::Semistatic, ExperimentKind::ShadowCheck}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown experiment '" + text + "'");
}

BlackScholesMarket ExperimentConfig::bs_market() const { return {market.S0, market.mu, market.sigma}; }

BasisRiskMarket ExperimentConfig::basis_market() const {
  return {{market.S0, market.mu, market.sigma}, {market.Y0, market.mu_Y, market.sigma_Y}, market.rho};
}

ClaimSpec ExperimentConfig::claim_spec() const {
  ClaimSpec c = claim.type == "put"   ? ClaimSpec::put(claim.strike, claim.maturity)
                : claim.type == "log" ? ClaimSpec::log_contract(claim.strike, claim.maturity)
                                      : ClaimSpec::call(claim.strike, claim.maturity);
  c.underlying = claim.underlying == "nontraded" ? Underlying::NonTraded : Underlying::Traded;
  return c;
}

TimeGrid ExperimentConfig::grid() const { return TimeGrid::uniform(0.0, numerics.T, numerics.n_steps); }

ExperimentConfig parse_config(const std::string& text, ExperimentKind kind) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  std::vector<std::string> unknown;
  std::map<std::string, std::map<std::string, std::string>> values;
  for (const auto& [section, body] : tree) {
    const auto it = allowed_keys().find(section);
    if (body.empty()) {
      if (it == allowed_keys().end() || !body.data().empty()) unknown.push_back(section);
      continue;
    }
    if (it == allowed_keys().end()) {
      for (const auto& kv : body) unknown.push_back(section + "." + kv.first);
      continue;
    }
    for (const auto& [key, node] : body) {
      if (!it->second.count(key)) {
        unknown.push_back(section + "." + key);
      } else {
        values[section][key] = node.data();
      }
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ConfigError("unknown config keys: " + list);
  }
  const bool needs_claim =
      kind == ExperimentKind::Price || kind == ExperimentKind::Hedge || kind == ExperimentKind::Semistatic;
  if (needs_claim) require(tree.find("claim") != tree.not_found(), "missing or empty section [claim] for " + to_string(kind));

  auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    const auto s = values.find(section);
    if (s == values.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  };
  auto num = [&](const std::string& section, const std::string& key, double& target) {
    if (auto v = get(section, key)) target = to_double(section + "." + key, *v);
  };

  ExperimentConfig c;
  c.kind = kind;
  const bool market_kind = kind == ExperimentKind::Price || kind == ExperimentKind::Hedge ||
                           kind == ExperimentKind::Semistatic;
  if (market_kind) c.numerics.n_steps = 500;
  if (kind == ExperimentKind::Scaling) c.numerics.eps_list = {0.02, 0.01, 0.005, 0.0025};
  if (kind == ExperimentKind::ShadowCheck) c.numerics.eps_list = {0.02, 0.01, 0.005};

  if (auto v = get("market", "model")) c.market.model = trim(*v);
  num("market", "S0", c.market.S0);
  num("market", "mu", c.market.mu);
  num("market", "sigma", c.market.sigma);
  num("market", "Y0", c.market.Y0);
  num("market", "mu_Y", c.market.mu_Y);
  num("market", "sigma_Y", c.market.sigma_Y);
  num("market", "rho", c.market.rho);

  const auto p = get("preference", "p");
  require(p.has_value(), "missing required key preference.p");
  c.preference.p = to_double("preference.p", *p);
  num("preference", "x0", c.preference.x0);

  c.claim.present = tree.find("claim") != tree.not_found();
  if (auto v = get("claim", "type")) c.claim.type = trim(*v);
  num("claim", "strike", c.claim.strike);
  num("claim", "maturity", c.claim.maturity);
  num("claim", "quantity", c.claim.quantity);
  if (auto v = get("claim", "underlying")) c.claim.underlying = trim(*v);
  num("claim", "hedge_strike", c.claim.hedge_strike);

  num("numerics", "T", c.numerics.T);
  const auto seed = get("numerics", "seed");
  require(seed.has_value(), "missing required key numerics.seed");
  c.numerics.seed = to_unsigned("numerics.seed", *seed);
  const auto n_steps = get("numerics", "n_steps");
  const auto density = get("numerics", "steps_per_year");
  require(!(n_steps && density), "numerics.n_steps and numerics.steps_per_year are mutually exclusive");
  require(c.numerics.T > 0.0, "numerics.T must be > 0");
  if (n_steps) {
    c.numerics.n_steps = to_unsigned("numerics.n_steps", *n_steps);
  } else if (density) {
    const double d = to_double("numerics.steps_per_year", *density);
    require(d > 0.0, "numerics.steps_per_year must be > 0");
    c.numerics.n_steps = static_cast<std::size_t>(std::ceil(d * c.numerics.T - 1e-9));
  } else if (!market_kind) {
    c.numerics.n_steps = static_cast<std::size_t>(std::ceil(1e4 * c.numerics.T - 1e-9));
  }
  if (auto v = get("numerics", "n_paths")) c.numerics.n_paths = to_unsigned("numerics.n_paths", *v);
  num("numerics", "eps", c.numerics.eps);
  if (auto v = get("numerics", "eps_list")) c.numerics.eps_list = to_list("numerics.eps_list", *v);
  if (auto v = get("numerics", "threads")) c.numerics.threads = static_cast<unsigned>(to_unsigned("numerics.threads", *v));
  if (auto v = get("numerics", "placement")) {
    try {
      c.numerics.placement = parse_placement(trim(*v));
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("numerics.placement: ") + e.what());
    }
  }
  if (auto v = get("numerics", "control_variate")) c.numerics.control_variate = to_bool("numerics.control_variate", *v);
  num("numerics", "search_lower", c.numerics.search_lower);
  num("numerics", "search_upper", c.numerics.search_upper);

  if (auto v = get("output", "dir")) c.output.dir = trim(*v);
  if (auto v = get("output", "band_paths")) c.output.band_paths = to_unsigned("output.band_paths", *v);
  if (auto v = get("output", "csv")) c.output.csv = to_bool("output.csv", *v);

  // ranges
  require(c.market.model == "bs" || c.market.model == "basis_risk", "market.model must be bs or basis_risk");
  require(c.market.S0 > 0.0, "market.S0 must be > 0");
  require(c.market.sigma > 0.0, "market.sigma must be > 0");
  require(c.market.Y0 > 0.0, "market.Y0 must be > 0");
  require(c.market.sigma_Y > 0.0, "market.sigma_Y must be > 0");
  require(c.market.rho >= -1.0 && c.market.rho <= 1.0, "market.rho must be in [-1, 1]");
  require(c.preference.p > 0.0, "preference.p must be > 0");
  require(c.numerics.eps >= 0.0 && c.numerics.eps < 1.0, "numerics.eps must be in [0, 1), got " + fmt(c.numerics.eps));
  for (double e : c.numerics.eps_list) {
    require(e >= 0.0 && e < 1.0, "numerics.eps_list entries must be in [0, 1), got " + fmt(e));
  }
  require(c.numerics.n_steps >= 3, "numerics.n_steps must be >= 3");
  require(c.numerics.n_steps <= 10000000, "numerics.n_steps must be <= 1e7");
  require(c.numerics.n_paths >= 2, "numerics.n_paths must be >= 2");
  require(c.numerics.threads <= 1024, "numerics.threads must be in [0, 1024]");
  require(c.numerics.search_lower < c.numerics.search_upper, "numerics.search_lower must be < numerics.search_upper");
  require(c.output.band_paths >= 1, "output.band_paths must be >= 1");
  if (kind == ExperimentKind::Scaling) {
    require(c.numerics.eps_list.size() >= 3, "numerics.eps_list needs at least 3 values for scaling, got " +
                                                 std::to_string(c.numerics.eps_list.size()));
  }
  if (kind == ExperimentKind::ShadowCheck) {
    require(!c.numerics.eps_list.empty(), "numerics.eps_list must not be empty");
  }
  if (kind == ExperimentKind::Band || kind == ExperimentKind::Welfare || kind == ExperimentKind::Scaling ||
      kind == ExperimentKind::ShadowCheck) {
    require(c.market.model == "bs", to_string(kind) + " needs market.model = bs");
    require(c.market.mu != 0.0, to_string(kind) + " needs market.mu != 0 (no risky position otherwise)");
  }
  if (needs_claim) {
    require(c.claim.type == "call" || c.claim.type == "put" || c.claim.type == "log", "claim.type must be call, put or log");
    require(c.claim.underlying == "traded" || c.claim.underlying == "nontraded",
            "claim.underlying must be traded or nontraded");
    require(c.claim.strike > 0.0, "claim.strike must be > 0");
    require(c.claim.maturity > 0.0 && c.claim.maturity <= c.numerics.T,
            "claim.maturity must be in (0, T], got " + fmt(c.claim.maturity));
    require(c.claim.quantity > 0.0, "claim.quantity must be > 0");
    require(c.claim.hedge_strike > 0.0, "claim.hedge_strike must be > 0");
    const bool basis = c.market.model == "basis_risk";
    if (kind == ExperimentKind::Hedge) require(basis, "hedge needs market.model = basis_risk");
    if (basis) {
      require(c.claim.underlying == "nontraded", "basis_risk claims must be written on the non-traded factor");
      require(c.claim.type != "log", "basis_risk claims must be calls or puts");
    } else {
      require(c.claim.underlying == "traded", "bs claims must be written on the traded asset");
    }
    if (kind == ExperimentKind::Semistatic) require(!basis, "semistatic needs market.model = bs");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file, ExperimentKind kind) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), kind);
}

ordered_json config_echo(const ExperimentConfig& c) {
  ordered_json j;
  j["market"] = {{"model", c.market.model}, {"S0", c.market.S0},       {"mu", c.market.mu},
                 {"sigma", c.market.sigma}, {"Y0", c.market.Y0},       {"mu_Y", c.market.mu_Y},
                 {"sigma_Y", c.market.sigma_Y}, {"rho", c.market.rho}};
  j["preference"] = {{"p", c.preference.p}, {"x0", c.preference.x0}};
  if (c.claim.present) {
    j["claim"] = {{"type", c.claim.type},         {"strike", c.claim.strike},
                  {"maturity", c.claim.maturity}, {"quantity", c.claim.quantity},
                  {"underlying", c.claim.underlying}, {"hedge_strike", c.claim.hedge_strike}};
  }
  j["numerics"] = {{"T", c.numerics.T},
                   {"n_steps", c.numerics.n_steps},
                   {"n_paths", c.numerics.n_paths},
                   {"seed", c.numerics.seed},
                   {"eps", c.numerics.eps},
                   {"eps_list", c.numerics.eps_list},
                   {"threads", c.numerics.threads},
                   {"placement", to_string(c.numerics.placement)},
                   {"control_variate", c.numerics.control_variate},
                   {"search_lower", c.numerics.search_lower},
                   {"search_upper", c.numerics.search_upper}};
  j["output"] = {{"dir", c.output.dir}, {"band_paths", c.output.band_paths}, {"csv", c.output.csv}};
  return j;
}

namespace {

/// Collects results into the JSON body and the text summary side by side.
class Builder {
 public:
  void est(const std::string& key, const Estimate& e) {
    results_[key] = {{"value", e.value}, {"se", e.se}};
    text_ << "  " << key << ": " << fmt(e.value) << " +- " << fmt(e.se) << '\n';
  }
  void num(const std::string& key, double v) {
    results_[key] = v;
    text_ << "  " << key << ": " << fmt(v) << '\n';
  }
  void count(const std::string& key, std::size_t v) {
    results_[key] = v;
    text_ << "  " << key << ": " << v << '\n';
  }
  void flag(const std::string& key, bool v) {
    results_[key] = v;
    text_ << "  " << key << ": " << (v ? "true" : "false") << '\n';
  }
  void str(const std::string& key, const std::string& v) {
    results_[key] = v;
    text_ << "  " << key << ": " << v << '\n';
  }
  void table(const std::string& key, ordered_json rows) { results_[key] = std::move(rows); }
  void line(const std::string& s) { text_ << s << '\n'; }

  ordered_json& results() { return results_; }
  std::string text() const { return text_.str(); }

 private:
  ordered_json results_ = ordered_json::object();
  std::ostringstream text_;
};

ordered_json est_json(const Estimate& e) { return {{"value", e.value}, {"se", e.se}}; }

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Estimate ratio_estimate(const Estimate& a, const Estimate& b) {
  const double r = a.value / b.value;
  return {r, std::abs(r) * std::hypot(a.se / a.value, b.se / b.value)};
}

WelfareSettings welfare_settings(const ExperimentConfig& c) {
  WelfareSettings s;
  s.placement = c.numerics.placement;
  s.control_variate = c.numerics.control_variate;
  s.threads = c.numerics.threads;
  return s;
}

void welfare_rows(Builder& b, const WelfareReport& r) {
  b.num("eps", r.eps);
  b.est("loss", r.loss);
  b.num("predicted_loss", r.predicted_loss);
  b.num("loss_relative_error", r.predicted_loss > 0.0 ? r.loss.value / r.predicted_loss - 1.0 : 0.0);
  b.est("displacement_loss", r.displacement_loss);
  b.est("direct_cost_loss", r.direct_cost_loss);
  if (r.displacement_loss.value != 0.0) b.est("split_ratio", ratio_estimate(r.direct_cost_loss, r.displacement_loss));
  b.est("ergodic_ratio", r.ergodic_ratio);
  b.est("ce_friction", r.ce_friction);
  b.est("ce_frictionless", r.ce_frictionless);
  b.num("ce_frictionless_exact", r.ce_frictionless_exact);
  b.est("mean_cost", r.mean_cost);
  b.est("initial_cost", r.initial_cost);
  b.num("control_variate_beta", r.cv_beta);
  b.count("trades", r.trades);
  b.flag("degenerate_band", r.degenerate);
}

void run_band(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const auto market = c.bs_market();
  const auto grid = c.grid();
  const double eps = c.numerics.eps;
  const PathSet paths = simulate_gbm(market.params(), grid, c.output.band_paths, c.numerics.seed, Measure::P,
                                     c.numerics.threads);
  const BandRule rule = pure_investment_band(market, c.preference, eps);
  const auto& S = paths.factor("S");
  BandSpec band{grid, PathMatrix(S.rows(), S.cols()), PathMatrix(S.rows(), S.cols())};
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const BandPoint pt = rule(grid.t(static_cast<std::size_t>(k)), S(i, k));
      band.center(i, k) = pt.center;
      band.halfwidth(i, k) = pt.halfwidth;
    }
  const PolicyRunResult res =
      run_band_policy(paths, band, eps, c.preference.x0, 0.0, c.numerics.placement, c.numerics.threads);

  // wealth identity: x0 + sum theta dS - cumulative cost
  double identity = 0.0, trades = 0.0;
  std::vector<double> costs(res.total_cost);
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    double gain = 0.0;
    for (Eigen::Index k = 0; k + 1 < S.cols(); ++k) gain += res.position(i, k) * (S(i, k + 1) - S(i, k));
    const auto& ledger = res.ledgers[static_cast<std::size_t>(i)];
    const double w = c.preference.x0 + gain - ledger.cumulative_cost;
    const double scale = std::max(1.0, std::abs(w));
    identity = std::max(identity, std::abs(w - res.terminal_wealth[static_cast<std::size_t>(i)]) / scale);
    trades += static_cast<double>(ledger.entries.size()) - (ledger.initial_cost > 0.0 ? 1.0 : 0.0);
  }
  b.num("eps", eps);
  b.count("paths", paths.n_paths());
  b.num("monetary_halfwidth", band.halfwidth(0, 0) * S(0, 0));
  b.num("center_value", band.center(0, 0) * S(0, 0));
  b.num("mean_trades_per_path", trades / static_cast<double>(paths.n_paths()));
  b.est("mean_cost", mean_estimate(costs));
  b.est("ergodic_ratio", res.ergodic_ratio);
  b.count("outside_band", res.outside);
  b.num("max_identity_error", identity);
  b.flag("degenerate_band", res.degenerate);
  if (res.degenerate) rep.warnings.push_back("zero halfwidth: the policy tracks the target at every step");

  std::ostringstream corridor;
  corridor << "t,S,center_value,halfwidth_value,lower_value,upper_value,position_value\n";
  for (Eigen::Index k = 0; k < S.cols(); ++k) {
    const double s = S(0, k), cv = band.center(0, k) * s, hv = band.halfwidth(0, k) * s;
    corridor << csv_number(grid.t(static_cast<std::size_t>(k))) << ',' << csv_number(s) << ',' << csv_number(cv)
             << ',' << csv_number(hv) << ',' << csv_number(cv - hv) << ',' << csv_number(cv + hv) << ','
             << csv_number(res.position(0, k) * s) << '\n';
  }
  rep.files.push_back({"band.csv", corridor.str()});
  std::ostringstream ledger;
  write_ledger_csv(paths, band, res, ledger);
  rep.files.push_back({"ledger.csv", ledger.str()});
}

void run_welfare(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const WelfareReport r = welfare_experiment(c.bs_market(), c.preference, c.numerics.eps, c.grid(),
                                             c.numerics.n_paths, c.numerics.seed, welfare_settings(c));
  welfare_rows(b, r);
  if (r.degenerate) rep.warnings.push_back("zero halfwidth: the policy tracks the target at every step");
  std::ostringstream csv;
  csv << "eps,loss,loss_se,predicted_loss,displacement_loss,displacement_se,direct_cost_loss,direct_se,"
         "ergodic_ratio,ergodic_se\n";
  csv << csv_number(r.eps) << ',' << csv_number(r.loss.value) << ',' << csv_number(r.loss.se) << ','
      << csv_number(r.predicted_loss) << ',' << csv_number(r.displacement_loss.value) << ','
      << csv_number(r.displacement_loss.se) << ',' << csv_number(r.direct_cost_loss.value) << ','
      << csv_number(r.direct_cost_loss.se) << ',' << csv_number(r.ergodic_ratio.value) << ','
      << csv_number(r.ergodic_ratio.se) << '\n';
  rep.files.push_back({"welfare.csv", csv.str()});
}

void run_scaling(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const ScalingStudy st = scaling_study(c.bs_market(), c.preference, c.numerics.eps_list, c.grid(),
                                        c.numerics.n_paths, c.numerics.seed, welfare_settings(c));
  b.est("slope", {st.fit.slope, st.fit.slope_se});
  b.est("intercept", {st.fit.intercept, st.fit.intercept_se});
  ordered_json rows = ordered_json::array();
  std::ostringstream csv;
  csv << "eps,ln_eps,loss,loss_se,ln_loss,predicted_loss,displacement_loss,direct_cost_loss,ergodic_ratio\n";
  b.line("  eps         loss         se           predicted    split   ergodic");
  for (const auto& r : st.rows) {
    rows.push_back({{"eps", r.eps},
                    {"loss", est_json(r.loss)},
                    {"predicted_loss", r.predicted_loss},
                    {"displacement_loss", est_json(r.displacement_loss)},
                    {"direct_cost_loss", est_json(r.direct_cost_loss)},
                    {"ergodic_ratio", est_json(r.ergodic_ratio)}});
    const bool positive = r.eps > 0.0 && r.loss.value > 0.0;
    csv << csv_number(r.eps) << ',' << (r.eps > 0.0 ? csv_number(std::log(r.eps)) : "") << ','
        << csv_number(r.loss.value) << ',' << csv_number(r.loss.se) << ','
        << (positive ? csv_number(std::log(r.loss.value)) : "") << ',' << csv_number(r.predicted_loss) << ','
        << csv_number(r.displacement_loss.value) << ',' << csv_number(r.direct_cost_loss.value) << ','
        << csv_number(r.ergodic_ratio.value) << '\n';
    char line[200];
    std::snprintf(line, sizeof line, "  %-11.5g %-12.5g %-12.3g %-12.5g %-7.3f %.4f", r.eps, r.loss.value,
                  r.loss.se, r.predicted_loss,
                  r.displacement_loss.value != 0.0 ? r.direct_cost_loss.value / r.displacement_loss.value : 0.0,
                  r.ergodic_ratio.value);
    b.line(line);
  }
  b.table("rows", rows);
  for (const auto& w : st.warnings) rep.warnings.push_back(w);
  rep.files.push_back({"scaling.csv", csv.str()});
}

/// Q-path inputs for a complete Black-Scholes market.
struct CompleteInputs {
  PathSet paths;
  PathMatrix cg_phi, cg_H, c_S, sens_phi, sens_H, delta_H;
};

CompleteInputs complete_inputs(const ExperimentConfig& c, const ClaimSpec& unit, const TimeGrid& grid) {
  const auto market = c.bs_market();
  GbmParams q = market.params();
  q.mu = 0.0;
  CompleteInputs in{simulate_gbm(q, grid, c.numerics.n_paths, c.numerics.seed, Measure::Q, c.numerics.threads),
                    {}, {}, {}, {}, {}, {}};
  const auto& S = in.paths.factor("S");
  const double m = market.mu / (c.preference.p * market.sigma * market.sigma);
  in.cg_phi = PathMatrix::Constant(S.rows(), S.cols(), -m);
  in.cg_H.resize(S.rows(), S.cols());
  in.sens_phi.resize(S.rows(), S.cols());
  in.sens_H.resize(S.rows(), S.cols());
  in.delta_H.resize(S.rows(), S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const double s = S(i, k);
      const Greeks g = bs_delta_gamma(unit, grid.t(static_cast<std::size_t>(k)), s, market.sigma);
      in.cg_H(i, k) = g.gamma * s * s;
      in.sens_H(i, k) = g.gamma;
      in.delta_H(i, k) = g.delta;
      in.sens_phi(i, k) = -m / (s * s);
    }
  in.c_S = (market.sigma * market.sigma * S.array().square()).matrix();
  return in;
}

void run_price_complete(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const auto grid = c.grid();
  ClaimSpec unit = c.claim_spec();
  unit.quantity = 1.0;
  const double n = c.claim.quantity, p = c.preference.p, eps = c.numerics.eps;
  const auto market = c.bs_market();
  const CompleteInputs in = complete_inputs(c, unit, grid);
  const auto& S = in.paths.factor("S");
  const double pi0 = bs_delta_gamma(unit, grid.t0(), market.S0, market.sigma).value;

  // Full correction from cash gammas
  const Estimate full = complete_price_correction(p, eps, in.cg_phi, (n * in.cg_H.array()).matrix(), in.c_S, in.paths);
  // The same quantity through bands and welfare losses
  const double m = market.mu / (p * market.sigma * market.sigma);
  BandSpec with{grid, PathMatrix(S.rows(), S.cols()), PathMatrix(S.rows(), S.cols())};
  BandSpec without = with;
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const double s = S(i, k), cs = in.c_S(i, k);
      const double g_total = in.sens_phi(i, k) + n * in.sens_H(i, k);
      without.center(i, k) = m / s;
      with.center(i, k) = m / s + n * in.delta_H(i, k);
      without.halfwidth(i, k) = band_halfwidth(p, eps, s, in.sens_phi(i, k) * in.sens_phi(i, k) * cs, cs);
      with.halfwidth(i, k) = band_halfwidth_with_claim(p, eps, s, g_total * g_total * cs, cs);
    }
  const LossEstimate loss_with = welfare_loss(p, with, in.c_S, in.paths);
  const LossEstimate loss_without = welfare_loss(p, without, in.c_S, in.paths);
  const PriceQuote pipeline = indifference_price(loss_with, loss_without, pi0, n);
  const PriceQuote marginal = marginal_investment_price(p, n, eps, in.cg_H, in.c_S, in.paths, pi0);
  const MarginalOptionExpansion expansion =
      marginal_option_expansion(p, eps, n, in.cg_phi, in.cg_H, in.c_S, in.paths, pi0);

  b.str("regime", to_string(PriceRegime::Complete));
  b.num("frictionless_price", pi0);
  b.est("correction_per_claim", {full.value / n, full.se / n});
  b.num("price_per_claim", pi0 + full.value / n);
  b.est("band_pipeline_correction_per_claim", {pipeline.correction, pipeline.correction_se});
  b.est("marginal_investment_correction_per_claim", {marginal.correction, marginal.correction_se});
  b.est("marginal_option_correction_per_claim", {expansion.quote.correction, expansion.quote.correction_se});
  b.est("marginal_option_first_order", expansion.first_order);
  b.est("marginal_option_second_order", expansion.second_order);
  b.num("loss_with_claim", loss_with.value);
  b.num("loss_without_claim", loss_without.value);
  b.num("mean_band_factor", expansion.band_factor.mean());
  if (expansion.band_factor.minCoeff() <= 0.0 || std::abs(expansion.band_factor.mean() - 1.0) > 0.5) {
    rep.warnings.push_back("marginal option expansion outside its range: band factor " +
                           fmt(expansion.band_factor.minCoeff()) + " .. " + fmt(expansion.band_factor.maxCoeff()));
  }

  std::ostringstream csv;
  csv << "t,integrand_with,integrand_without\n";
  for (Eigen::Index k = 0; k < loss_with.integrand_trace.size(); ++k) {
    csv << csv_number(grid.t(static_cast<std::size_t>(k))) << ',' << csv_number(loss_with.integrand_trace(k)) << ','
        << csv_number(loss_without.integrand_trace(k)) << '\n';
  }
  rep.files.push_back({"price_trace.csv", csv.str()});
}

void run_price_basis(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const auto market = c.basis_market();
  const ClaimSpec claim = c.claim_spec();
  const double n = c.claim.quantity, p = c.preference.p, eps = c.numerics.eps;
  if (market.traded.mu == 0.0) {
    const IncompleteQuote q =
        incomplete_martingale_price(p, n, eps, market, claim, c.grid(), c.numerics.n_paths, c.numerics.seed,
                                    c.numerics.threads);
    b.str("regime", to_string(PriceRegime::IncompleteMartingale));
    b.num("expected_payoff", q.quote.frictionless - q.hedge_term.value);
    b.est("hedging_error", q.hedging_error);
    b.est("hedging_error_term", q.hedge_term);
    b.est("cost_term", q.cost_term);
    b.num("price_per_claim", q.quote.total);
    if (q.hedge_term.value > 0.5 * std::abs(q.quote.frictionless)) {
      rep.warnings.push_back("p n times the hedging error is not small: the expansion is outside its range");
    }
  } else {
    const SmallNCorrections s = incomplete_smalln_corrections(p, n, eps, market, claim, c.grid(), c.numerics.n_paths,
                                                              c.numerics.seed, c.numerics.threads);
    b.str("regime", to_string(PriceRegime::IncompleteSmallN));
    b.est("band_term", s.band_term);
    b.est("covariance_term", s.covariance_term);
    b.est("covariance_density_form", s.covariance_density_form);
    b.est("price_impact", s.impact);
    b.num("mean_band_factor", s.mean_band_factor);
    b.num("min_band_factor", s.min_band_factor);
    b.num("max_band_factor", s.max_band_factor);
    if (s.min_band_factor <= 0.0 || std::abs(s.mean_band_factor - 1.0) > 0.5) {
      rep.warnings.push_back("small-n expansion outside its range: band factor " + fmt(s.min_band_factor) + " .. " +
                             fmt(s.max_band_factor));
    }
  }
}

void run_hedge(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const auto market = c.basis_market();
  const ClaimSpec claim = c.claim_spec();
  const auto grid = c.grid();
  const HedgingError h =
      hedging_error_second_moment(market, claim, grid, c.numerics.n_paths, c.numerics.seed, c.numerics.threads);
  const auto q = under_entropy_measure(market);
  const ClaimMoments mom = lognormal_claim_moments(claim, grid.t0(), market.nontraded.S0, q.nontraded.mu,
                                                   market.nontraded.sigma);
  b.num("rho", market.rho);
  b.est("hedging_error", h.second_moment);
  b.num("variance_closed_form", mom.variance);
  b.est("variance_sample", h.variance_h);
  b.num("hedging_error_fraction", h.second_moment.value / mom.variance);
  b.num("value0", h.value0);
  b.est("mean_payoff", h.mean_h);
  std::ostringstream csv;
  csv << "rho,hedging_error,hedging_error_se,variance_closed_form\n"
      << csv_number(market.rho) << ',' << csv_number(h.second_moment.value) << ',' << csv_number(h.second_moment.se)
      << ',' << csv_number(mom.variance) << '\n';
  rep.files.push_back({"hedge.csv", csv.str()});
}

void run_semistatic(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  const auto grid = c.grid();
  ClaimSpec unit = c.claim_spec();
  unit.quantity = 1.0;
  const CompleteInputs in = complete_inputs(c, unit, grid);
  const ClaimSpec hedge = ClaimSpec::call(c.claim.hedge_strike, c.claim.maturity);
  const auto& S = in.paths.factor("S");
  PathMatrix cg_hedge(S.rows(), S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
      const double s = S(i, k);
      cg_hedge(i, k) = bs_delta_gamma(hedge, grid.t(static_cast<std::size_t>(k)), s, c.market.sigma).gamma * s * s;
    }
  const PathMatrix cg_target = (c.claim.quantity * in.cg_H.array()).matrix();
  const SemistaticResult r = semistatic_gamma_hedge(cg_target, cg_hedge, in.c_S, in.paths, c.numerics.search_lower,
                                                    c.numerics.search_upper);
  b.num("n_star", r.n_star);
  b.num("objective", r.objective);
  b.num("objective_at_zero", r.scale);
  b.num("relative_objective", r.scale > 0.0 ? r.objective / r.scale : 0.0);
  b.num("search_lower", r.lower);
  b.num("search_upper", r.upper);
  b.count("evaluations", r.evaluations);
  if (r.lower != c.numerics.search_lower) rep.warnings.push_back("search interval widened to bracket the minimiser");

  std::ostringstream csv;
  csv << "n_prime,objective\n";
  for (int j = 0; j <= 100; ++j) {
    const double x = r.n_star - 1.0 + 0.02 * j;
    csv << csv_number(x) << ',' << csv_number(semistatic_objective(cg_target, cg_hedge, in.c_S, in.paths, x)) << '\n';
  }
  rep.files.push_back({"semistatic.csv", csv.str()});
}

void run_shadow(const ExperimentConfig& c, Builder& b, ExperimentReport& rep) {
  ShadowSettings s;
  s.placement = c.numerics.placement;
  s.threads = c.numerics.threads;
  const ShadowScaling sc = shadow_scaling(c.bs_market(), c.preference, c.numerics.eps_list, c.grid(),
                                          c.numerics.n_paths, c.numerics.seed, s);
  b.est("drift_coefficient", {sc.drift_coefficient, sc.drift_coefficient_se});
  b.est("residual_slope", {sc.residual_fit.slope, sc.residual_fit.slope_se});
  b.est("density_drift_slope", {sc.density_fit.slope, sc.density_fit.slope_se});
  b.est("terminal_residual_slope", {sc.terminal_fit.slope, sc.terminal_fit.slope_se});
  ordered_json rows = ordered_json::array();
  std::ostringstream csv;
  csv << "eps,contained_fraction,pretrade_contained_fraction,cubic_identity_error,drift_coefficient,"
         "drift_coefficient_se,sup_residual,sup_density_drift,terminal_residual_rms,mean_density\n";
  for (const auto& r : sc.rows) {
    rows.push_back({{"eps", r.eps},
                    {"contained_fraction", r.contained_fraction},
                    {"pretrade_contained_fraction", r.pretrade_contained_fraction},
                    {"max_boundary_mismatch", r.max_boundary_mismatch},
                    {"cubic_identity_error", r.cubic_identity_error},
                    {"halfwidth_consistency", r.halfwidth_consistency},
                    {"drift_coefficient", est_json({r.drift_coefficient, r.drift_coefficient_se})},
                    {"linear_drift_coefficient", est_json({r.drift_fit.slope, r.drift_fit.slope_se})},
                    {"sup_residual", r.sup_residual},
                    {"center_residual", est_json(r.center_residual)},
                    {"sup_density_drift", r.sup_density_drift},
                    {"mean_density", est_json(r.mean_density)},
                    {"terminal_residual_rms", est_json(r.terminal_residual_rms)},
                    {"frictionless_martingale", est_json(r.frictionless_martingale)}});
    csv << csv_number(r.eps) << ',' << csv_number(r.contained_fraction) << ','
        << csv_number(r.pretrade_contained_fraction) << ',' << csv_number(r.cubic_identity_error) << ','
        << csv_number(r.drift_coefficient) << ',' << csv_number(r.drift_coefficient_se) << ','
        << csv_number(r.sup_residual) << ',' << csv_number(r.sup_density_drift) << ','
        << csv_number(r.terminal_residual_rms.value) << ',' << csv_number(r.mean_density.value) << '\n';
    char line[200];
    std::snprintf(line, sizeof line, "  eps %-8.4g contained %.6f  drift coef %.4f +- %.4f  sup residual %.4g", r.eps,
                  r.contained_fraction, r.drift_coefficient, r.drift_coefficient_se, r.sup_residual);
    b.line(line);
    for (const auto& w : r.warnings) rep.warnings.push_back(w);
  }
  b.table("rows", rows);
  rep.files.push_back({"shadow.csv", csv.str()});
  std::ostringstream drift;
  write_drift_csv(sc.rows, drift);
  rep.files.push_back({"drift.csv", drift.str()});
}

}  // namespace

ExperimentReport run(const ExperimentConfig& config) {
  ExperimentReport rep;
  Builder b;
  switch (config.kind) {
    case ExperimentKind::Band: run_band(config, b, rep); break;
    case ExperimentKind::Welfare: run_welfare(config, b, rep); break;
    case ExperimentKind::Scaling: run_scaling(config, b, rep); break;
    case ExperimentKind::Price:
      if (config.market.model == "basis_risk") {
        run_price_basis(config, b, rep);
      } else {
        run_price_complete(config, b, rep);
      }
      break;
    case ExperimentKind::Hedge: run_hedge(config, b, rep); break;
    case ExperimentKind::Semistatic: run_semistatic(config, b, rep); break;
    case ExperimentKind::ShadowCheck: run_shadow(config, b, rep); break;
  }
  if (!config.output.csv) rep.files.clear();

  rep.body["experiment"] = to_string(config.kind);
  rep.body["provenance"] = {{"version", kVersion}, {"seed", config.numerics.seed}};
  rep.body["config"] = config_echo(config);
  rep.body["results"] = std::move(b.results());
  rep.body["warnings"] = rep.warnings;

  std::ostringstream text;
  text << "experiment: " << to_string(config.kind) << "\nversion: " << kVersion << "\nseed: " << config.numerics.seed
       << "\nresults:\n"
       << b.text();
  if (!rep.warnings.empty()) {
    text << "warnings:\n";
    for (const auto& w : rep.warnings) text << "  " << w << '\n';
  }
  rep.summary = text.str();
  return rep;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << content;
  };
  ordered_json doc = report.body;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  doc["provenance"]["timestamp"] = stamp;
  write("report.json", doc.dump(2) + "\n");
  write("report.txt", report.summary);
  for (const auto& f : report.files) write(f.name, f.content);
}

}  // namespace tcost

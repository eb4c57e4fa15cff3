#include "tcost/experiment.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tcost;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal = R"([market]
mu = 0.08
sigma = 0.2
[preference]
p = 1
[numerics]
eps = 0.01
seed = 42
)";

const std::string kSmall = kMinimal + "n_paths = 64\nn_steps = 300\n";

const std::string kClaim = R"([claim]
type = call
strike = 100
maturity = 1
)";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tcost_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("minimal config gets documented defaults") {
  const ExperimentConfig c = parse_config(kMinimal, ExperimentKind::Welfare);
  CHECK(c.market.S0 == 100.0);
  CHECK(c.numerics.n_steps == 10000);
  CHECK(c.numerics.n_paths == 10000);
  CHECK(c.numerics.seed == 42);
  CHECK(c.numerics.placement == InitialPlacement::Stationary);
  CHECK(c.output.dir == ".");
  const ExperimentConfig s = parse_config(kMinimal, ExperimentKind::Scaling);
  CHECK(s.numerics.eps_list == std::vector<double>{0.02, 0.01, 0.005, 0.0025});
  const ExperimentConfig sh = parse_config(kMinimal, ExperimentKind::ShadowCheck);
  CHECK(sh.numerics.eps_list.size() == 3);
  const ExperimentConfig pr = parse_config(kMinimal + kClaim, ExperimentKind::Price);
  CHECK(pr.numerics.n_steps == 500);
  const ExperimentConfig half = parse_config(kMinimal + "T = 0.5\n", ExperimentKind::Welfare);
  CHECK(half.numerics.n_steps == 5000);
  const ExperimentConfig dens = parse_config(kMinimal + "steps_per_year = 200\n", ExperimentKind::Welfare);
  CHECK(dens.numerics.n_steps == 200);
  CHECK(parse_config(kMinimal + "[output]\n", ExperimentKind::Welfare).output.csv);
}

TEST_CASE("config errors name the offending key") {
  auto message = [](const std::string& text, ExperimentKind kind) -> std::string {
    try {
      parse_config(text, kind);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message(kMinimal + "sigmaa = 0.3\n", ExperimentKind::Welfare).find("numerics.sigmaa") != std::string::npos);
  CHECK(message(kMinimal + "[extra]\nfoo = 1\n", ExperimentKind::Welfare).find("extra.foo") != std::string::npos);
  CHECK(message("[market]\n[preference]\np = 1\n[numerics]\neps = 0.01\n", ExperimentKind::Welfare)
            .find("numerics.seed") != std::string::npos);
  CHECK(message("[market]\n[preference]\n[numerics]\nseed = 1\n", ExperimentKind::Welfare).find("preference.p") !=
        std::string::npos);
  CHECK(message("[preference]\np = 1\n[numerics]\nseed = 1\neps = -0.1\n", ExperimentKind::Welfare).find("[0, 1)") != std::string::npos);
  CHECK(message(kMinimal + "eps_list = 0.01, 0.02\n", ExperimentKind::Scaling).find("at least 3") !=
        std::string::npos);
  CHECK(message(kMinimal + "n_paths = 1e3x\n", ExperimentKind::Welfare).find("numerics.n_paths") != std::string::npos);
  CHECK(message(kMinimal + "threads = -2\n", ExperimentKind::Welfare).find("numerics.threads") != std::string::npos);
  CHECK(message(kMinimal + "n_steps = 10\nsteps_per_year = 10\n", ExperimentKind::Welfare).find("exclusive") !=
        std::string::npos);
  CHECK(message(kMinimal + "eps = 0.02\n", ExperimentKind::Welfare).find("duplicate") != std::string::npos);
  CHECK(message(kMinimal, ExperimentKind::Price).find("[claim]") != std::string::npos);
  CHECK(message(kMinimal + kClaim, ExperimentKind::Hedge).find("basis_risk") != std::string::npos);
  CHECK(message(kMinimal + "[claim]\nmaturity = 2\n", ExperimentKind::Price).find("claim.maturity") !=
        std::string::npos);
  CHECK(message(kMinimal + "placement = edge\n", ExperimentKind::Welfare).find("numerics.placement") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_kind("bands"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini", ExperimentKind::Welfare), ConfigError);
}

TEST_CASE("config echo round-trips every resolved value") {
  const ExperimentConfig c = parse_config(kSmall + "threads = 3\n", ExperimentKind::Welfare);
  const auto j = config_echo(c);
  CHECK(j["numerics"]["n_paths"] == 64);
  CHECK(j["numerics"]["threads"] == 3);
  CHECK(j["numerics"]["placement"] == "stationary");
  CHECK(j["preference"]["p"] == 1.0);
  CHECK(!j.contains("claim"));
}

TEST_CASE("every experiment kind is reproducible across thread counts") {
  const std::string basis = R"([market]
model = basis_risk
mu = 0.05
rho = 0.6
[preference]
p = 1
[claim]
type = call
underlying = nontraded
[numerics]
seed = 9
n_paths = 64
n_steps = 50
)";
  const std::vector<std::pair<ExperimentKind, std::string>> cases{
      {ExperimentKind::Band, kSmall},
      {ExperimentKind::Welfare, kSmall},
      {ExperimentKind::Scaling, kSmall},
      {ExperimentKind::ShadowCheck, kSmall},
      {ExperimentKind::Price, kMinimal + "n_paths = 64\nn_steps = 50\n" + kClaim},
      {ExperimentKind::Semistatic, kMinimal + "n_paths = 64\nn_steps = 50\n" + kClaim},
      {ExperimentKind::Price, basis},
      {ExperimentKind::Hedge, basis},
  };
  for (const auto& [kind, text] : cases) {
    CAPTURE(to_string(kind));
    ExperimentConfig c = parse_config(text, kind);
    c.numerics.threads = 1;
    const ExperimentReport a = run(c);
    c.numerics.threads = 4;
    ExperimentReport b = run(c);
    b.body["config"]["numerics"]["threads"] = 1;
    CHECK(a.body.dump() == b.body.dump());
    REQUIRE(a.files.size() == b.files.size());
    for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(a.files[i].content == b.files[i].content);
    CHECK(a.body["provenance"]["seed"] == c.numerics.seed);
    CHECK(!a.body["results"].empty());
  }
}

TEST_CASE("welfare report carries loss, split and ergodic ratio with errors") {
  const ExperimentReport r = run(parse_config(kSmall, ExperimentKind::Welfare));
  const auto& res = r.body["results"];
  CHECK(res["loss"].contains("se"));
  CHECK(res.contains("split_ratio"));
  CHECK(res.contains("ergodic_ratio"));
  CHECK(res["predicted_loss"].get<double>() == doctest::Approx(3.0652e-3).epsilon(1e-4));
}

TEST_CASE("report files are written with a timestamp") {
  const fs::path dir = scratch("report");
  ExperimentConfig c = parse_config(kSmall, ExperimentKind::Band);
  write_report(run(c), dir);
  CHECK(fs::exists(dir / "report.txt"));
  CHECK(fs::exists(dir / "band.csv"));
  CHECK(fs::exists(dir / "ledger.csv"));
  const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(j["provenance"].contains("timestamp"));
  CHECK(j["provenance"]["version"] == kVersion);
  fs::remove_all(dir);
}

TEST_CASE("command line runs are byte-identical") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "scaling.ini");
    cfg << kSmall;
  }
  const std::string base = std::string(TCOST_CLI) + " scaling --quiet --config " + (dir / "scaling.ini").string();
  REQUIRE(std::system((base + " --threads 1 --out " + (dir / "a").string()).c_str()) == 0);
  REQUIRE(std::system((base + " --threads 4 --out " + (dir / "b").string()).c_str()) == 0);
  CHECK(read_file(dir / "a" / "scaling.csv") == read_file(dir / "b" / "scaling.csv"));
  CHECK(read_file(dir / "a" / "report.txt") == read_file(dir / "b" / "report.txt"));
  auto ja = nlohmann::json::parse(read_file(dir / "a" / "report.json"));
  auto jb = nlohmann::json::parse(read_file(dir / "b" / "report.json"));
  CHECK(ja["results"] == jb["results"]);

  // bad config exits nonzero
  {
    std::ofstream cfg(dir / "bad.ini");
    cfg << kMinimal << "bogus = 1\n";
  }
  CHECK(std::system((std::string(TCOST_CLI) + " welfare --quiet --config " + (dir / "bad.ini").string() +
                     " --out " + (dir / "c").string() + " 2>/dev/null")
                        .c_str()) != 0);
  CHECK(std::system((std::string(TCOST_CLI) + " nonsense 2>/dev/null >/dev/null").c_str()) != 0);
  fs::remove_all(dir);
}

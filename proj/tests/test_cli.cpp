#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "conefluct/cli.hpp"
#include "conefluct/io.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

using namespace conefluct;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "conefluct");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Scratch directory holding a law file and a small config pointing at it.
struct Workspace {
  fs::path dir;

  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("conefluct_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string config(const std::string& law_text, const std::string& extra = "") const {
    write_file(dir / "law.json", law_text);
    const std::string text = R"({"law": "law.json", "seed": 3, "paths": 2000, "n_values": [8, 16],
      "conditional_n": [8], "V_schedule": [8, 16], "V_paths": 500, "a_grid_sigma": [0, 1],
      "grid_resolution": 64, "sigma_n": 32, "sigma_paths": 500, "lyapunov_paths": 200, "lyapunov_n": 50,
      "covariance_paths": 1000, "lags": 3, "harmonicity_paths": 200, "lattice_t": [0, 1],
      "lattice_a_max_sigma": 1, "lattice_paths": 100, "gap_paths": 50, "gap_steps": 50)" +
                             extra + "}";
    write_file(dir / "config.json", text);
    return (dir / "config.json").string();
  }
};

const std::string kPermutationLaw = R"({"dim": 2, "atoms": [[0,1,1,0],[1,0,0,1]], "weights": [0.5, 0.5]})";
const std::string kStochasticLaw = R"({"dim": 2, "atoms": [[0.7,0.2,0.3,0.8],[0.4,0.9,0.6,0.1]], "weights": [0.5, 0.5]})";

std::string fixture_law_text() { return read_file(testing::kFixtureDir + "/reference_law.json"); }

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--version"}).out.find("conefluct") != std::string::npos);
  const auto r = run({"check"});
  CHECK(r.code == 2);
  CHECK(r.err.find("config") != std::string::npos);
}

TEST_CASE("check passes on the fixture and fails on a permutation law") {
  Workspace ws("check");
  auto ok = run({"check", "--config", ws.config(fixture_law_text()), "--out", (ws.dir / "ok").string()});
  CHECK(ok.code == 0);
  CHECK(fs::exists(ws.dir / "ok" / "hypotheses.json"));
  CHECK(fs::exists(ws.dir / "ok" / "manifest.json"));

  auto bad = run({"check", "--config", ws.config(kPermutationLaw), "--out", (ws.dir / "bad").string()});
  CHECK(bad.code == 1);
  const auto j = nlohmann::json::parse(read_file(ws.dir / "bad" / "hypotheses.json"));
  CHECK(j.dump().find("P3") != std::string::npos);
}

TEST_CASE("malformed weights are a parse error") {
  Workspace ws("weights");
  const auto cfg = ws.config(R"({"dim": 2, "atoms": [[2,1,1,1],[1,1,1,3]], "weights": [0.5, 0.4]})");
  const auto r = run({"check", "--config", cfg});
  CHECK(r.code == 2);
  CHECK(r.err.find("weights") != std::string::npos);
}

TEST_CASE("seed is mandatory") {
  Workspace ws("seed");
  write_file(ws.dir / "law.json", fixture_law_text());
  write_file(ws.dir / "c.json", R"({"law": "law.json"})");
  const auto r = run({"check", "--config", (ws.dir / "c.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("seed") != std::string::npos);
  CHECK(run({"check", "--config", (ws.dir / "c.json").string(), "--seed", "4", "--out", (ws.dir / "o").string()})
            .code == 0);
}

TEST_CASE("spectral artifacts and refusals") {
  Workspace ws("spectral");
  auto r = run({"spectral", "--config", ws.config(kStochasticLaw), "--out", (ws.dir / "zero").string(), "--force"});
  REQUIRE(r.code == 0);
  const auto zero = nlohmann::json::parse(read_file(ws.dir / "zero" / "spectral.json"));
  CHECK(zero["sigma2"].get<double>() == doctest::Approx(0.0).scale(1));
  CHECK(std::abs(zero["poisson"]["A"].get<double>()) < 1e-14);
  CHECK(fs::exists(ws.dir / "zero" / "nu.csv"));
  CHECK(fs::exists(ws.dir / "zero" / "theta.csv"));

  const std::string four =
      R"({"dim": 4, "atoms": [[1,1,1,1, 1,2,1,1, 1,1,3,1, 1,1,1,4]], "weights": [1]})";
  r = run({"spectral", "--config", ws.config(four), "--out", (ws.dir / "four").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("d = 4") != std::string::npos);

  r = run({"spectral", "--config", ws.config(kPermutationLaw), "--out", (ws.dir / "perm").string()});
  CHECK(r.code != 0);
}

TEST_CASE("simulate artifacts, horizon check and determinism") {
  Workspace ws("simulate");
  const auto cfg = ws.config(fixture_law_text());
  const auto a = run({"simulate", "--config", cfg, "--out", (ws.dir / "a").string()});
  const auto b = run({"simulate", "--config", cfg, "--out", (ws.dir / "b").string(), "--workers", "3"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  for (const char* f : {"survival.csv", "conditional_n8.csv", "v_estimates.csv", "harmonic.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(ws.dir / "a" / f));
    CHECK(read_file(ws.dir / "a" / f) == read_file(ws.dir / "b" / f));
  }
  CHECK(read_file(ws.dir / "a" / "survival.csv").rfind("n,survivors,paths,p_hat,ci_half_width\r\n", 0) == 0);
  const auto ma = nlohmann::json::parse(read_file(ws.dir / "a" / "manifest.json"));
  const auto mb = nlohmann::json::parse(read_file(ws.dir / "b" / "manifest.json"));
  CHECK(ma["seed"] == 3);
  CHECK(ma["law_fingerprint"] == mb["law_fingerprint"]);
  CHECK(ma["config_hash"].is_string());

  const auto over = run({"simulate", "--config", ws.config(fixture_law_text(), R"(, "horizon": 10)"), "--out",
                         (ws.dir / "c").string()});
  CHECK(over.code == 2);
  CHECK(over.err.find("horizon") != std::string::npos);

  const auto gated = run({"simulate", "--config", ws.config(kPermutationLaw), "--out", (ws.dir / "d").string()});
  CHECK(gated.code != 0);
}

TEST_CASE("covariance artifacts") {
  Workspace ws("covariance");
  const auto r = run({"covariance", "--config", ws.config(fixture_law_text()), "--out", ws.dir.string()});
  REQUIRE(r.code == 0);
  CHECK(read_file(ws.dir / "covariance.csv").rfind("lag,cov,stderr,in_fit\r\n", 0) == 0);
  CHECK(fs::exists(ws.dir / "covariance.json"));
}

TEST_CASE("validate: degenerate law, negative control and reproducibility") {
  Workspace ws("validate");
  const auto deg = run({"validate", "--config", ws.config(kStochasticLaw), "--out", (ws.dir / "deg").string()});
  CHECK(deg.code == 2);
  CHECK(deg.err.find("degenerate") != std::string::npos);

  const std::string smoke = testing::kFixtureDir + "/smoke_config.json";
  const auto one = run({"validate", "--config", smoke, "--out", (ws.dir / "one").string()});
  const auto two = run({"validate", "--config", smoke, "--out", (ws.dir / "two").string()});
  CHECK(one.code == two.code);
  for (const char* f : {"report.json", "asymptotic_ratio.csv", "ks_table.csv", "v_table.csv"}) {
    CAPTURE(f);
    CHECK(read_file(ws.dir / "one" / f) == read_file(ws.dir / "two" / f));
  }

  const auto wrong = run({"validate", "--config", smoke, "--out", (ws.dir / "wrong").string(), "--sigma-scale", "2"});
  CHECK(wrong.code == 1);
  const auto base = nlohmann::json::parse(read_file(ws.dir / "one" / "report.json"));
  const auto neg = nlohmann::json::parse(read_file(ws.dir / "wrong" / "report.json"));
  CHECK_FALSE(neg["ks_table"]["pass"].get<bool>());
  CHECK(neg["ks_table"]["rows"].back()["ks"].get<double>() > 0.15);
  CHECK(neg["ks_table"]["rows"].back()["ks"].get<double>() > base["ks_table"]["rows"].back()["ks"].get<double>());
  CHECK(run({"validate", "--config", smoke, "--out", (ws.dir / "zero").string(), "--sigma-scale", "0"}).code == 2);
}

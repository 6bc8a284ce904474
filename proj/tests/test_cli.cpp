#include <sstream>

#include <gtest/gtest.h>

#include "smallarea/cli.hpp"
#include "support/fixture.hpp"

using namespace smallarea;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = fixture::read_text(e.path());
  return files;
}

std::size_t data_rows(const std::string& csv) {
  std::size_t n = 0;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') ++n;
  return n - 1;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fixture::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    fixture::CityOptions o;
    config = fixture::write_city(dir / "city", o).string();
  }
  fs::path dir;
  std::string config;
};

}  // namespace

TEST_F(CliTest, DeriveWritesVariablesAndManifest) {
  const auto out = (dir / "o1").string();
  const auto r = run({"derive", "--config", config, "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(out) / "variables.csv"));
  const auto manifest = nlohmann::json::parse(fixture::read_text(fs::path(out) / "manifest_derive.json"));
  EXPECT_EQ(manifest["version"], std::string(cli::kToolVersion));
  EXPECT_EQ(manifest["inputs"].size(), 2u);
  EXPECT_EQ(data_rows(fixture::read_text(fs::path(out) / "variables.csv")), 144u);
}

TEST_F(CliTest, MissingInputNamesThePath) {
  auto cfg = nlohmann::json::parse(fixture::read_text(config));
  cfg["attributes"] = "no_such_file.csv";
  fixture::write_text(dir / "city" / "bad.json", cfg.dump());
  const auto r = run({"derive", "--config", (dir / "city" / "bad.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no_such_file.csv"), std::string::npos) << r.err;
}

TEST_F(CliTest, DeriveIsDeterministic) {
  ASSERT_EQ(run({"derive", "--config", config, "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"derive", "--config", config, "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
}

TEST_F(CliTest, ManifestTracksInputContent) {
  ASSERT_EQ(run({"derive", "--config", config, "--out", (dir / "a").string()}).code, 0);
  auto csv = fixture::read_text(dir / "city" / "attributes.csv");
  csv += "550790999999,10,5,1,1,5,5,6,1,3,2,1,1,8,1,6,1\n";
  fixture::write_text(dir / "city" / "attributes.csv", csv);
  ASSERT_EQ(run({"derive", "--config", config, "--out", (dir / "b").string()}).code, 0);
  EXPECT_NE(fixture::read_text(dir / "a" / "manifest_derive.json"), fixture::read_text(dir / "b" / "manifest_derive.json"));
}

TEST_F(CliTest, QuantilesReport) {
  const auto out = dir / "q";
  const auto r = run({"quantiles", "--config", config, "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(data_rows(fixture::read_text(out / "zone_quantiles.csv")), 9u * 10u);
  EXPECT_TRUE(fs::exists(out / "panels" / "PERCVAC.svg"));
  EXPECT_TRUE(fs::exists(out / "population.csv"));
  const auto svg = fixture::read_text(out / "panels" / "PERCVAC.svg");
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("sha256="), std::string::npos);
}

TEST_F(CliTest, QuantilesUnknownReferenceZone) {
  const auto r = run({"quantiles", "--config", config, "--out", (dir / "q").string(), "--reference-zone", "00000"});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, IndexPresets) {
  const auto out = dir / "i";
  ASSERT_EQ(run({"index", "--config", config, "--out", out.string(), "--preset", "index-5"}).code, 0);
  ASSERT_EQ(run({"index", "--config", config, "--out", out.string(), "--preset", "deprivation-3"}).code, 0);
  EXPECT_EQ(data_rows(fixture::read_text(out / "index-5_loadings.csv")), 5u);
  EXPECT_EQ(data_rows(fixture::read_text(out / "deprivation-3_loadings.csv")), 3u);
  const auto coef = nlohmann::json::parse(fixture::read_text(out / "index-5_transfer.json"));
  EXPECT_EQ(coef["slopes"].size(), 5u);
  const auto breaks = nlohmann::json::parse(fixture::read_text(out / "index-5_breaks.json"));
  EXPECT_EQ(breaks["source_city"], "fixture-city");
  EXPECT_TRUE(fs::exists(out / "index-5_map.geojson"));
  EXPECT_EQ(run({"index", "--config", config, "--out", out.string(), "--preset", "index-7"}).code, 2);
}

TEST_F(CliTest, TransferToSecondCity) {
  const auto out = dir / "t";
  ASSERT_EQ(run({"index", "--config", config, "--out", out.string(), "--preset", "index-5"}).code, 0);
  fixture::CityOptions other;
  other.rows = 7;
  other.cols = 9;
  other.seed = 77;
  other.prefix = "17031";
  const auto other_cfg = fixture::write_city(dir / "other", other).string();
  ASSERT_EQ(run({"derive", "--config", other_cfg, "--out", (dir / "other_out").string()}).code, 0);

  const auto r = run({"transfer", "--coefficients", (out / "index-5_transfer.json").string(), "--target",
                      (dir / "other_out" / "variables.csv").string(), "--breaks-from",
                      (out / "index-5_breaks.json").string(), "--out", (dir / "scored").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto scored = fixture::read_text(dir / "scored" / "transfer_scores.csv");
  EXPECT_EQ(data_rows(scored), 63u);
  EXPECT_NE(scored.find(",fixture-city\n"), std::string::npos);

  // target lacking a coefficient's variable
  VariableTable thin({"a", "b"});
  thin.add_column("PERCVAC", {1, 2});
  fixture::write_text(dir / "thin.csv", write_variable_table(thin));
  const auto bad = run({"transfer", "--coefficients", (out / "index-5_transfer.json").string(), "--target",
                        (dir / "thin.csv").string(), "--out", (dir / "scored2").string()});
  EXPECT_EQ(bad.code, 2);
}

TEST_F(CliTest, RegressOlsAndSpatial) {
  const auto idx = dir / "i";
  ASSERT_EQ(run({"index", "--config", config, "--out", idx.string(), "--preset", "index-5"}).code, 0);
  ASSERT_EQ(run({"index", "--config", config, "--out", idx.string(), "--preset", "deprivation-3"}).code, 0);
  ASSERT_EQ(run({"weights", "--config", config, "--out", idx.string()}).code, 0);
  const std::string dep = (idx / "index-5_scores.csv").string(), ind = (idx / "deprivation-3_scores.csv").string();

  const auto r = run({"regress", "--model", "ols", "--dependent", dep, "--independent", ind, "--out", (dir / "r").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto fit = nlohmann::json::parse(fixture::read_text(dir / "r" / "fit_ols.json"));
  EXPECT_TRUE(fit["beta"].is_number());

  EXPECT_EQ(run({"regress", "--model", "spatial", "--dependent", dep, "--independent", ind, "--out",
                 (dir / "r").string()})
                .code,
            2);
  const auto s = run({"regress", "--model", "spatial", "--dependent", dep, "--independent", ind, "--weights",
                      (idx / "weights.txt").string(), "--assignment", (dir / "q" / "assignment.csv").string(), "--out",
                      (dir / "r").string()});
  // assignment file does not exist yet
  EXPECT_EQ(s.code, 2);
  ASSERT_EQ(run({"quantiles", "--config", config, "--out", (dir / "q").string()}).code, 0);
  const auto s2 = run({"regress", "--model", "spatial", "--dependent", dep, "--independent", ind, "--weights",
                       (idx / "weights.txt").string(), "--assignment", (dir / "q" / "assignment.csv").string(), "--out",
                       (dir / "r").string()});
  ASSERT_EQ(s2.code, 0) << s2.err;
  const auto sfit = nlohmann::json::parse(fixture::read_text(dir / "r" / "fit_spatial.json"));
  EXPECT_TRUE(sfit["rho"].is_number());
  EXPECT_TRUE(fs::exists(dir / "r" / "residuals_spatial.svg"));

  std::string ids;
  std::istringstream resid(fixture::read_text(dir / "r" / "residuals_spatial.csv"));
  std::string line;
  while (std::getline(resid, line))
    if (!line.empty() && line[0] != '#' && line.rfind("geoid", 0) != 0) ids += line.substr(0, line.find(',')) + "\n";
  EXPECT_EQ(ids, fixture::read_text(idx / "weights.txt.ids"));
}

TEST_F(CliTest, SimulateAndRecover) {
  const auto out = dir / "s";
  ASSERT_EQ(run({"simulate", "--out", out.string(), "--seed", "7", "--rho", "0.5"}).code, 0);
  const auto sim = parse_variable_table(fixture::read_text(out / "sim_data.csv"));
  EXPECT_EQ(sim.rows(), 400u);
  const auto r = run({"regress", "--model", "spatial", "--dependent", (out / "sim_data.csv").string() + ":y",
                      "--independent", (out / "sim_data.csv").string() + ":x", "--weights",
                      (out / "sim_weights.txt").string(), "--out", (dir / "fit").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto fit = nlohmann::json::parse(fixture::read_text(dir / "fit" / "fit_spatial.json"));
  EXPECT_NEAR(fit["rho"].get<double>(), 0.5, 0.05);
  EXPECT_NEAR(fit["beta"].get<double>(), 1.0, 0.05);

  ASSERT_EQ(run({"simulate", "--out", (dir / "s2").string(), "--seed", "7", "--rho", "0.5"}).code, 0);
  EXPECT_EQ(snapshot(out), snapshot(dir / "s2"));
  EXPECT_EQ(run({"simulate", "--out", (dir / "s3").string(), "--rho", "1.2"}).code, 2);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"regress", "--model", "probit", "--dependent", "a", "--independent", "b"}).code, 2);
  EXPECT_EQ(run({"derive", "--config", (dir / "nope.json").string()}).code, 2);
}

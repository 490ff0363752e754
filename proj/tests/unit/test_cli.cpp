#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "t2drisk_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(T2DRISK_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string path(const std::string& rel) { return (scratch() / rel).string(); }

/// Small synthetic cohort shared by the tests.
const std::string& cohort_csv() {
  static const std::string csv = [] {
    EXPECT_EQ(run("synth --n 8000 --seed 3 --out " + path("synth")), 0);
    return path("synth/cohort.csv");
  }();
  return csv;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("fit"), 1);
  EXPECT_EQ(run("synth --n 0 --seed 1 --out " + path("zero")), 1);
  EXPECT_EQ(run("synth --strict --out " + path("strict")), 1);
  EXPECT_EQ(run("select " + cohort_csv() + " --sd-rule median --out " + path("badrule")), 1);
}

TEST(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(run("fit " + path("does_not_exist.csv") + " --out " + path("missing")), 2);
  const std::string text = slurp(cohort_csv());
  std::istringstream lines(text);
  std::string line, rewritten;
  std::getline(lines, line);
  rewritten = line + "\n";
  while (std::getline(lines, line)) rewritten += line.substr(0, line.size() - 1) + "0\n";
  std::ofstream(path("no_events.csv")) << rewritten;
  EXPECT_EQ(run("fit " + path("no_events.csv") + " --out " + path("noevents")), 2);
  std::ofstream(path("broken_model.json")) << R"({"format":"t2drisk.published_model"})";
  EXPECT_EQ(run("serve " + path("broken_model.json") + " --port 0"), 2);
}

TEST(Cli, FitThenEvalWritesManifestedOutputs) {
  ASSERT_EQ(run("fit " + cohort_csv() + " --seed 5 --out " + path("fit")), 0);
  for (const char* f : {"model.json", "coefficients.csv", "test_split.csv", "fit_report.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(scratch() / "fit" / f)) << f;
  ASSERT_EQ(run("eval " + path("fit/model.json") + " " + path("fit/test_split.csv") +
                " --bootstrap-rounds 20 --seed 5 --out " + path("eval")),
            0);
  const auto report = nlohmann::json::parse(slurp(scratch() / "eval/report.json"));
  EXPECT_GT(report["c_index"].get<double>(), 0.5);
  const auto manifest = nlohmann::json::parse(slurp(scratch() / "eval/manifest.json"));
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_TRUE(manifest["outputs"].contains("report.json"));
  EXPECT_EQ(manifest["inputs"]["model"]["path"], path("fit/model.json"));
}

TEST(Cli, SameSeedSameBytes) {
  ASSERT_EQ(run("fit " + cohort_csv() + " --seed 9 --out " + path("det_a")), 0);
  ASSERT_EQ(run("fit " + cohort_csv() + " --seed 9 --out " + path("det_b")), 0);
  for (const char* f : {"model.json", "coefficients.csv", "test_split.csv", "manifest.json"})
    EXPECT_EQ(slurp(scratch() / "det_a" / f), slurp(scratch() / "det_b" / f)) << f;
}

TEST(Cli, SelectWritesLedgerAndFeatureList) {
  std::ofstream(path("overrides.json"))
      << R"({"overrides":[{"feature":"diabetes_mother","action":"force_keep","reason":"family history"}]})";
  ASSERT_EQ(run("select " + cohort_csv() + " --seed 2 --ridge 0.1 --overrides " + path("overrides.json") + " --out " +
                path("select")),
            0);
  const std::string listing = slurp(scratch() / "select/features.txt");
  EXPECT_NE(listing.find("diabetes_mother\n"), std::string::npos);
  EXPECT_NE(slurp(scratch() / "select/ledger.jsonl").find("\"override\":\"diabetes_mother\""), std::string::npos);

  std::ofstream(path("bad_overrides.json")) << R"({"overrides":[{"feature":"bmi","action":"maybe"}]})";
  EXPECT_EQ(run("select " + cohort_csv() + " --overrides " + path("bad_overrides.json") + " --out " +
                path("select_bad")),
            1);
}

TEST(Cli, PublishSmallReference) {
  ASSERT_EQ(run("publish --reference-n 2000 --seed 4 --out " + path("publish")), 0);
  const auto model = nlohmann::json::parse(slurp(scratch() / "publish/published_model.json"));
  EXPECT_EQ(model["coefficients"].size(), 19u);
  EXPECT_NEAR(model["calibration"]["achieved_mean_risk"].get<double>(), 0.0359, 1e-9);
  EXPECT_EQ(run("publish --reference-n 2000 --target 1.5 --seed 4 --out " + path("publish_bad")), 3);
}

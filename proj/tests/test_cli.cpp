#include <gtest/gtest.h>
#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "folio/backtest.hpp"
#include "folio/market_data.hpp"
#include "folio/synthetic.hpp"
#include "support.hpp"

using namespace folio;
using namespace testing_support;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  static inline TempDir* dir = nullptr;

  static std::string path(const std::string& name) { return *dir / name; }

  static Outcome run(const std::string& args) {
    const std::string out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string(FOLIO_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = read_file(out);
    o.err = read_file(err);
    return o;
  }

  static void write_config(const std::string& name, const nlohmann::json& j) {
    std::ofstream(path(name)) << j.dump(2);
  }

  static nlohmann::json base_config() {
    const std::string start = "2020-01-01";
    return {{"panel", path("panel.json")},
            {"split",
             {{"train_start", start},
              {"train_end", add_days(start, 399)},
              {"validation_start", add_days(start, 340)},
              {"test_start", add_days(start, 399)},
              {"test_end", add_days(start, 519)}}},
            {"window", 10},
            {"hidden", 8},
            {"epochs", 2},
            {"lr", 0.001},
            {"batch_length", 32},
            {"seed", 3},
            {"output_dir", path("runs")}};
  }

  static void SetUpTestSuite() {
    dir = new TempDir("cli");
    ASSERT_EQ(run("synth --out " + path("market.csv") + " --days 520 --drift 0.002,0,0,-0.001 --seed 4").code, 0);
    ASSERT_EQ(run("ingest --csv " + path("market.csv") + " --out " + path("panel.json")).code, 0);
    write_config("run.json", base_config());
    const Outcome t = run("train --config " + path("run.json") + " --out " + path("train_a"));
    ASSERT_EQ(t.code, 0) << t.err;
  }

  static void TearDownTestSuite() {
    delete dir;
    dir = nullptr;
  }

  static std::string ck() { return " --checkpoint " + path("train_a/checkpoint.json"); }
};

std::vector<std::vector<std::string>> read_rows(const std::string& file) {
  std::istringstream in(read_file(file));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    csv::split_record(line, f);
    rows.push_back(f);
  }
  return rows;
}

}  // namespace

TEST_F(Cli, TrainWritesRunFiles) {
  for (const char* f : {"checkpoint.json", "train_log.csv", "manifest.json"})
    EXPECT_TRUE(std::filesystem::exists(path(std::string("train_a/") + f))) << f;
  const auto m = nlohmann::json::parse(read_file(path("train_a/manifest.json")));
  EXPECT_EQ(m.at("command"), "train");
  EXPECT_EQ(m.at("seed"), 3);
  EXPECT_EQ(m.at("config_hash").get<std::string>().size(), 16u);
  EXPECT_EQ(m.at("config").at("window"), 10);
  const auto log = read_rows(path("train_a/train_log.csv"));
  EXPECT_EQ(log.size(), 3u);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  ASSERT_EQ(run("train --config " + path("run.json") + " --out " + path("train_b")).code, 0);
  for (const char* f : {"checkpoint.json", "train_log.csv", "manifest.json"})
    EXPECT_EQ(read_file(path(std::string("train_a/") + f)), read_file(path(std::string("train_b/") + f))) << f;
  for (const char* out : {"bt_a", "bt_b"})
    ASSERT_EQ(run("backtest --config " + path("run.json") + " --strategy model" + ck() + " --out " + path(out)).code, 0);
  for (const char* f : {"metrics.json", "wealth.csv", "weights.csv", "wealth.svg", "manifest.json"})
    EXPECT_EQ(read_file(path(std::string("bt_a/") + f)), read_file(path(std::string("bt_b/") + f))) << f;
}

TEST_F(Cli, FlagsOverrideConfig) {
  ASSERT_EQ(run("train --config " + path("run.json") + " --epochs 1 --seed 9 --out " + path("train_c")).code, 0);
  const auto m = nlohmann::json::parse(read_file(path("train_c/manifest.json")));
  EXPECT_EQ(m.at("config").at("epochs"), 1);
  EXPECT_EQ(m.at("seed"), 9);
  EXPECT_NE(read_file(path("train_c/checkpoint.json")), read_file(path("train_a/checkpoint.json")));
}

TEST_F(Cli, BaselinesCoverTheTestPeriod) {
  for (const char* s : {"market", "mvm"}) {
    const Outcome o = run("backtest --config " + path("run.json") + " --strategy " + s + " --out " + path(std::string("b_") + s));
    ASSERT_EQ(o.code, 0) << o.err;
    const auto j = nlohmann::json::parse(read_file(path(std::string("b_") + s + "/metrics.json")));
    EXPECT_EQ(j.at("periods"), 120);
    EXPECT_EQ(j.at("first_date"), add_days("2020-01-01", 399));
    EXPECT_EQ(j.at("last_date"), add_days("2020-01-01", 519));
  }
}

TEST_F(Cli, CsvAndPanelInputsAgree) {
  nlohmann::json j = base_config();
  j.erase("panel");
  j["csv"] = path("market.csv");
  write_config("csv.json", j);
  ASSERT_EQ(run("backtest --config " + path("csv.json") + " --strategy mvm --out " + path("m_csv")).code, 0);
  ASSERT_EQ(run("backtest --config " + path("run.json") + " --strategy mvm --out " + path("m_panel")).code, 0);
  EXPECT_EQ(read_file(path("m_csv/metrics.json")), read_file(path("m_panel/metrics.json")));
}

TEST_F(Cli, ImproveWithZeroStepsEqualsRisk) {
  const std::string sig = " --sigma 2.1e-5 --sigma 1";
  ASSERT_EQ(run("risk --config " + path("run.json") + ck() + sig + " --out " + path("r0")).code, 0);
  ASSERT_EQ(run("improve --config " + path("run.json") + ck() + sig + " --steps 0 --out " + path("i0")).code, 0);
  for (const char* k : {"sigma_0", "sigma_1"})
    for (const char* f : {"risk.csv", "metrics.json", "wealth.csv", "weights.csv", "wealth.svg"}) {
      const std::string rel = std::string(k) + "/" + f;
      EXPECT_EQ(read_file(path("r0/" + rel)), read_file(path("i0/" + rel))) << rel;
    }
}

TEST_F(Cli, RiskFileReportsTargetsAndClamping) {
  ASSERT_EQ(run("risk --config " + path("run.json") + ck() + " --sigma 2.1e-5 --sigma 1 --sigma 0 --out " + path("r1")).code, 0);
  const auto head = read_rows(path("r1/sigma_0/risk.csv"))[0];
  EXPECT_EQ(head, (std::vector<std::string>{"date", "sigma_g", "gamma", "achieved_risk", "clamped", "A01", "A02", "A03", "A04"}));
  std::size_t free_rows = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto rows = read_rows(path("r1/sigma_" + std::to_string(k) + "/risk.csv"));
    ASSERT_EQ(rows.size(), 121u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double target = std::stod(rows[i][1]), achieved = std::stod(rows[i][3]);
      double sum = 0;
      for (std::size_t c = 5; c < rows[i].size(); ++c) {
        EXPECT_GE(std::stod(rows[i][c]), 0.0);
        sum += std::stod(rows[i][c]);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      if (k > 0) {
        EXPECT_EQ(rows[i][4], "1");
      }
      if (rows[i][4] == "0") {
        ++free_rows;
        EXPECT_NEAR(achieved, target, 1e-8 * target);
      }
    }
  }
  EXPECT_GT(free_rows, 0u);
  const auto m = nlohmann::json::parse(read_file(path("r1/manifest.json")));
  EXPECT_EQ(m.at("outputs").size(), 3u);
  EXPECT_EQ(m.at("outputs")[1].at("clamped_dates"), 120);
}

TEST_F(Cli, ImproveWritesLogAndKeepsRisk) {
  const Outcome o = run("improve --config " + path("run.json") + ck() + " --sigma 2.1e-5 --steps 5 --out " + path("i5"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto log = read_rows(path("i5/sigma_0/improve_log.csv"));
  EXPECT_EQ(log[0], (std::vector<std::string>{"step", "gamma_sum", "objective", "max_risk_error"}));
  EXPECT_EQ(log.size(), 7u);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_LE(std::stod(log[i][3]), 1e-8);
}

TEST_F(Cli, ReportSummarizesRuns) {
  ASSERT_EQ(run("risk --config " + path("run.json") + ck() + " --sigma 2.2e-5 --sigma 2.0e-5 --out " + path("rep")).code, 0);
  const Outcome o = run("report --run " + path("rep"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = read_rows(path("rep/summary.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"run", "CW", "APR", "AVOL", "ASR", "MDD", "ACR"}));
  EXPECT_EQ(rows[1][0], "sigma_0");
  EXPECT_EQ(o.out, read_file(path("rep/summary.csv")));
}

TEST_F(Cli, TimestampedRunDirectoryByDefault) {
  ASSERT_EQ(run("backtest --config " + path("run.json") + " --strategy market").code, 0);
  bool found = false;
  for (const auto& e : std::filesystem::directory_iterator(path("runs")))
    found |= e.path().filename().string().rfind("backtest-market-", 0) == 0;
  EXPECT_TRUE(found);
}

TEST_F(Cli, ExitCodesAndErrorLines) {
  nlohmann::json j = base_config();
  j["learning_rate"] = 0.1;
  write_config("bad_key.json", j);
  Outcome o = run("train --config " + path("bad_key.json"));
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(o.err.rfind("error[config]: ", 0), 0u) << o.err;
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);

  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("backtest --config " + path("run.json") + " --strategy momentum").code, 2);
  EXPECT_EQ(run("risk --config " + path("run.json") + " --sigma 1e-5").code, 2);
  EXPECT_EQ(run("train --config " + path("run.json") + " --lr -1").code, 2);

  j = base_config();
  j["panel"] = path("missing.json");
  write_config("missing.json.cfg", j);
  o = run("backtest --config " + path("missing.json.cfg") + " --strategy market");
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(o.err.rfind("error[data]: ", 0), 0u) << o.err;

  std::ofstream(path("broken.csv")) << "date,symbol,open,high,low,close,volume\n2020-01-01,A,1,1,1,-5,1\n";
  EXPECT_EQ(run("ingest --csv " + path("broken.csv") + " --out " + path("x.json")).code, 3);
  EXPECT_EQ(run("report --run " + path("nowhere")).code, 3);
}

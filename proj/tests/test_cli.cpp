#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using poisson_cp::cli::run_cli;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "poisson-cp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("poisson_cp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, FimAllOnesExample) {
  const CliRun r = cli({"fim", "--I", "2", "--N", "2", "--beta", "1", "--alpha", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("pinv_trace: 1.25\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("numerical_rank: 3 (expected 3)"), std::string::npos);
  EXPECT_NE(r.out.find("bounds_check: PASS"), std::string::npos);
}

TEST_F(CliTest, FimRandomModelReportsProvenRank) {
  const CliRun r = cli({"fim", "--I", "5", "--N", "3", "--seed", "4", "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("numerical_rank: 13 (expected 13)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("bounds_check: PASS"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "effective_config.txt").find("fim.seed=4"), std::string::npos);
}

TEST_F(CliTest, MinimaxThirtyTwo) {
  const CliRun r = cli({"minimax", "--I", "32", "--N", "3", "--rank", "1", "--beta", "1", "--alpha", "2"});
  ASSERT_EQ(r.code, 0) << r.err << r.out;
  EXPECT_NE(r.out.find("lower_bound: 0.00541521234812"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST_F(CliTest, MinimaxNamesFailedPrecondition) {
  const CliRun r = cli({"minimax", "--I", "16", "--N", "3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("IR > 16: FAIL"), std::string::npos) << r.out;
}

TEST_F(CliTest, PackingDumpVerifyAndCorruption) {
  const std::string dump = (dir_ / "set.txt").string();
  CliRun r = cli({"packing", "--I", "12", "--N", "3", "--rank", "2", "--epsilon", "1", "--dump", dump});
  ASSERT_EQ(r.code, 0) << r.err << r.out;
  r = cli({"packing", "--verify", dump});
  EXPECT_EQ(r.code, 0) << r.err << r.out;

  // duplicate the first code into the second slot: spacing check must fail
  std::string text = slurp(dump);
  const std::size_t rows = 12 * 3;  // 12 rows of 2 chars plus newline
  const std::size_t first = text.find('\n') + 1;
  text.replace(first + rows + 1, rows, text.substr(first, rows));
  std::ofstream(dump) << text;
  r = cli({"minimax", "--verify", dump});
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("verification: FAIL"), std::string::npos);

  std::ofstream(dump) << "packing I=12 N=3\n0101\n";
  EXPECT_EQ(cli({"packing", "--verify", dump}).code, 2);
}

TEST_F(CliTest, ExperimentWritesDeterministicOutputs) {
  const fs::path a = dir_ / "a", b = dir_ / "b";
  const std::vector<std::string> base{"experiment", "--rank", "1", "--N", "3", "--I", "20,30",
                                      "--trials", "5", "--seed", "7"};
  auto with_out = [&](const fs::path& p) {
    auto args = base;
    args.push_back("--out");
    args.push_back(p.string());
    return args;
  };
  CliRun r = cli(with_out(a));
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(cli(with_out(b)).code, 0);
  for (const char* f : {"records.csv", "summary.csv", "diagnostics.csv", "effective_config.txt"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const std::string summary = slurp(a / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 1 + 2 * 6);
  EXPECT_NE(summary.find("rank1,20,3,1,mean,"), std::string::npos);
  EXPECT_NE(summary.find("rank1,30,3,1,qhi,"), std::string::npos);

  // the echoed config reproduces the run
  const fs::path c = dir_ / "c";
  r = cli({"experiment", "--config", (a / "effective_config.txt").string(), "--out", c.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a / "records.csv"), slurp(c / "records.csv"));
}

TEST_F(CliTest, ConfigFileSectionsAndOverrides) {
  const fs::path cfg = dir_ / "run.cfg";
  std::ofstream(cfg) << "# desk run\n[experiment]\nrank = 1\nN = 3\nI = 6\ntrials = 2\n"
                        "[fit]\nmax_iterations = 300\n";
  const CliRun r = cli({"experiment", "--config", cfg.string(), "--trials", "3", "--out", (dir_ / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string echo = slurp(dir_ / "o" / "effective_config.txt");
  EXPECT_NE(echo.find("experiment.trials=3"), std::string::npos) << echo;
  EXPECT_NE(echo.find("fit.max_iterations=300"), std::string::npos) << echo;
}

TEST_F(CliTest, ConfigErrorsExitOne) {
  CliRun r = cli({"experiment", "--N", "3", "--out", dir_.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("experiment.rank"), std::string::npos) << r.err;

  r = cli({"experiment", "--rank", "1", "--N", "3", "--trials", "abc"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("experiment.trials"), std::string::npos) << r.err;

  r = cli({"experiment", "--rank", "1", "--N", "3", "--quantiles", "90,10"});
  EXPECT_EQ(r.code, 1);

  r = cli({"experiment", "--rank", "1", "--N", "3", "--I", "3000"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--allow-large"), std::string::npos) << r.err;

  const fs::path cfg = dir_ / "bad.cfg";
  std::ofstream(cfg) << "[experiment]\nrank 1\n";
  r = cli({"experiment", "--config", cfg.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.cfg:2"), std::string::npos) << r.err;

  std::ofstream(cfg) << "experiment.rnak=1\n";
  r = cli({"experiment", "--config", cfg.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("experiment.rnak"), std::string::npos) << r.err;

  EXPECT_EQ(cli({"nonsense"}).code, 1);
  EXPECT_EQ(cli({"fim", "--config", (dir_ / "missing.cfg").string()}).code, 1);
}

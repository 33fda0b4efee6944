#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "loopgbs/samplers.hpp"
#include "loopgbs/tdm_compiler.hpp"

using namespace loopgbs;
namespace fs = std::filesystem;

namespace {

const std::string kCert = std::string(LOOPGBS_DATA_DIR) + "/certificate_2023-01-12.json";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("loopgbs_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" + LOOPGBS_CLI_PATH + "' " + args + " >cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, IdentityProgramCompilesToIdentity) {
  save_program(uniform_program({}, 12, 43, 1.0), path("id.json"));
  ASSERT_EQ(run("compile --program id.json --out c"), 0) << slurp("cli.log");
  std::ifstream in(dir_ / "c" / "transfer.csv");
  const MatrixXc t = read_matrix_csv(in);
  ASSERT_EQ(t.rows(), 12);
  EXPECT_LT((t - MatrixXc::Identity(12, 12)).norm(), 1e-12);
  EXPECT_TRUE(fs::exists(dir_ / "c" / "profile.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "c" / "run.json"));
}

TEST_F(Cli, RandomProgramIsCausalAndBanded) {
  ASSERT_EQ(run("compile --random-program --modes 80 --seed 3 --out c"), 0) << slurp("cli.log");
  std::ifstream in(dir_ / "c" / "transfer.csv");
  const MatrixXc t = read_matrix_csv(in);
  ASSERT_EQ(t.rows(), 80);
  // Output i only sees inputs j <= i.
  for (int i = 0; i < 80; ++i)
    for (int j = i + 1; j < 80; ++j) EXPECT_LT(std::abs(t(i, j)), 1e-12);
  const auto meta = nlohmann::json::parse(slurp("c/run.json"));
  EXPECT_EQ(meta["n_logical_modes"], 80);
  EXPECT_LT(meta["acausal_magnitude"].get<double>(), 1e-12);
  const std::string profile = slurp("c/profile.csv");
  EXPECT_EQ(profile.rfind("offset,mean_abs\n", 0), 0u);
}

TEST_F(Cli, MalformedProgramExitsTwo) {
  std::ofstream(dir_ / "bad.json") << R"({"n_logical_modes": 4})";
  EXPECT_EQ(run("compile --program bad.json"), 2);
  EXPECT_NE(slurp("cli.log").find("delays"), std::string::npos) << slurp("cli.log");
  EXPECT_EQ(run("compile --program missing.json"), 2);
  EXPECT_EQ(run("compile"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(Cli, SeededSamplingIsByteIdentical) {
  const std::string common = "sample --random-program --modes 30 --certificate '" + kCert + "' --shots 300";
  ASSERT_EQ(run(common + " --seed 9 --out a.csv"), 0) << slurp("cli.log");
  ASSERT_EQ(run(common + " --seed 9 --out b.csv"), 0);
  EXPECT_EQ(slurp("a.csv"), slurp("b.csv"));
  ASSERT_EQ(run(common + " --seed 10 --program-seed 9 --out c.csv"), 0);
  EXPECT_NE(slurp("a.csv"), slurp("c.csv"));
  const auto set = load_samples(path("a.csv"));
  EXPECT_EQ(set.shots(), 300u);
  EXPECT_EQ(set.modes, 30);
  EXPECT_EQ(set.meta.hypothesis, "thermal");
}

TEST_F(Cli, HypothesesDifferInPhotonStatistics) {
  const std::string common =
      "sample --random-program --modes 30 --certificate '" + kCert + "' --shots 4000 --seed 2 --squeezing high";
  ASSERT_EQ(run(common + " --hypothesis thermal --out t.csv"), 0);
  ASSERT_EQ(run(common + " --hypothesis coherent --out c.csv"), 0);
  auto var = [](const SampleSet& s) {
    double m = 0, m2 = 0;
    for (std::size_t i = 0; i < s.shots(); ++i) {
      const double n = s.total(i);
      m += n;
      m2 += n * n;
    }
    m /= s.shots();
    return m2 / s.shots() - m * m;
  };
  // Thermal light is super-Poissonian.
  EXPECT_GT(var(load_samples(path("t.csv"))), 1.5 * var(load_samples(path("c.csv"))));
}

TEST_F(Cli, DisabledDetectorReadsZero) {
  ASSERT_EQ(run("sample --random-program --modes 40 --certificate '" + kCert +
                "' --shots 500 --detector-off 5 --out d.csv"),
            0)
      << slurp("cli.log");
  const auto set = load_samples(path("d.csv"));
  for (std::size_t i = 0; i < set.shots(); ++i)
    for (int mode : {5, 21, 37}) EXPECT_EQ(set.counts[i * set.modes + mode], 0);
}

TEST_F(Cli, ExactSamplerRefusesLargeInstances) {
  EXPECT_EQ(run("sample --random-program --hypothesis smsv --certificate '" + kCert + "' --shots 10"), 3);
}

TEST_F(Cli, CertificateIsRequired) {
  EXPECT_EQ(run("sample --random-program --shots 10"), 2);
  ASSERT_EQ(run("sample --random-program --modes 20 --certificate '" + kCert + "' --shots 50 --out s.csv"), 0);
  EXPECT_EQ(run("validate --samples s.csv --random-program --modes 20"), 2);
  std::ofstream(dir_ / "broken.json") << R"({"common_efficiency": 0.5})";
  EXPECT_EQ(run("sample --random-program --certificate broken.json --shots 10"), 2);
  EXPECT_NE(slurp("cli.log").find("loop_phases"), std::string::npos) << slurp("cli.log");
}

TEST_F(Cli, OrbitsUseDefaultPhotonRange) {
  ASSERT_EQ(run("sample --random-program --modes 216 --certificate '" + kCert + "' --shots 200 --out s.csv"), 0);
  ASSERT_EQ(run("orbits --samples s.csv --min-support 1 --histogram-n 20 --out o"), 0) << slurp("cli.log");
  const auto meta = nlohmann::json::parse(slurp("o/run.json"));
  EXPECT_EQ(meta["n_min"], 18);
  EXPECT_EQ(meta["n_max"], 32);
  EXPECT_EQ(slurp("o/features.csv").rfind("n,o1,o2,o3,e1,e2,e3,support\n", 0), 0u);
  EXPECT_EQ(slurp("o/orbits_n20.csv").rfind("orbit,frequency\n", 0), 0u);
}

TEST_F(Cli, ValidateAndReport) {
  const std::string cert = "--certificate '" + kCert + "' --squeezing high";
  ASSERT_EQ(run("sample --random-program --modes 40 --seed 4 " + cert +
                " --shots 20000 --out t.csv --save-program p.json"),
            0);
  ASSERT_EQ(run("validate --samples t.csv --program p.json " + cert +
                " --n-min 5 --n-max 8 --resamples 40 --seed 1 --out rep"),
            0)
      << slurp("cli.log");
  const auto r = nlohmann::json::parse(slurp("rep/report.json"));
  EXPECT_EQ(r["hypotheses"].size(), 5u);
  EXPECT_TRUE(r.contains("verdict"));
  for (const char* f : {"orbits.csv", "covariance_samples.dat", "covariance_thermal.dat", "plot.gp"})
    EXPECT_TRUE(fs::exists(dir_ / "rep" / f)) << f;
  ASSERT_EQ(run("validate --samples t.csv --program p.json " + cert +
                " --n-min 5 --n-max 8 --resamples 40 --seed 1 --out rep2"),
            0);
  EXPECT_EQ(slurp("rep/report.json"), slurp("rep2/report.json"));
  ASSERT_EQ(run("report rep"), 0);
  EXPECT_NE(slurp("cli.log").find("verdict:"), std::string::npos);
  EXPECT_EQ(run("report nowhere"), 2);
}

TEST_F(Cli, CorrelatorsAgainstAnalytic) {
  const std::string cert = "--certificate '" + kCert + "'";
  ASSERT_EQ(run("sample --random-program --modes 24 --seed 6 " + cert + " --shots 3000 --out t.csv"), 0);
  ASSERT_EQ(run("correlators --samples t.csv --random-program --modes 24 --program-seed 6 " + cert + " --out k"), 0)
      << slurp("cli.log");
  const auto j = nlohmann::json::parse(slurp("k/correlators.json"));
  EXPECT_LT(j["distance_to_analytic"]["thermal"]["frobenius"].get<double>(),
            j["distance_to_analytic"]["coherent"]["frobenius"].get<double>());
  EXPECT_TRUE(fs::exists(dir_ / "k" / "covariance_smsv.dat"));
}

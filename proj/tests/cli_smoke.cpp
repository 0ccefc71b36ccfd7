// Drives the built idda binary end to end on tiny gaussian runs.
#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSmall = " --data.n_source=120 --data.n_target=120 --train.epochs=2 --train.batch_size=32";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = idda::testing::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  void TearDown() override { fs::remove_all(root_); }

  // Runs `idda <args>`, returning the exit status; stdout and stderr land in out_ / err_.
  int run(const std::string& args) {
    const fs::path o = root_ / "stdout.txt", e = root_ / "stderr.txt";
    const std::string cmd = "IDDA_OUT='" + (root_ / "runs").string() + "' '" + IDDA_CLI_PATH + "' " + args + " >'" +
                            o.string() + "' 2>'" + e.string() + "'";
    const int status = std::system(cmd.c_str());
    out_ = slurp(o);
    err_ = slurp(e);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  // The newest run directory for a command.
  fs::path latest(const std::string& command) const {
    fs::path best;
    for (const auto& d : fs::directory_iterator(root_ / "runs")) {
      const std::string n = d.path().filename().string();
      if (n.rfind(command + "-", 0) == 0 && (best.empty() || n > best.filename().string())) best = d.path();
    }
    return best;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

  fs::path root_;
  std::string out_, err_;
};

TEST_F(Cli, BadValueIsAUsageError) {
  EXPECT_EQ(run("train --model.variant=bogus"), 1);
  EXPECT_NE(err_.find("model.variant"), std::string::npos) << err_;
  EXPECT_NE(err_.find("informative"), std::string::npos) << err_;
  EXPECT_EQ(run("train --train.lamda=1"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, MissingCheckpointIsARuntimeError) {
  EXPECT_EQ(run(std::string("eval --eval.checkpoint=") + (root_ / "none.ckpt").string()), 2) << err_;
}

TEST_F(Cli, TrainRerunFromConfigIsBitwiseIdentical) {
  ASSERT_EQ(run(std::string("train --experiment.seeds=3") + kSmall + " --train.lambda=0.4"), 0) << err_;
  const fs::path first = latest("train");
  ASSERT_TRUE(fs::exists(first / "manifest.json"));
  ASSERT_TRUE(fs::exists(first / "model_seed3.ckpt"));
  const std::string metrics = slurp(first / "metrics.csv");
  EXPECT_GT(lines(metrics), 2u);
  EXPECT_NE(slurp(first / "config.ini").find("train.lambda = 0.4"), std::string::npos);

  ASSERT_EQ(run("train -c '" + (first / "config.ini").string() + "'"), 0) << err_;
  const fs::path second = latest("train");
  ASSERT_NE(first, second);
  EXPECT_EQ(slurp(second / "metrics.csv"), metrics);
  EXPECT_EQ(slurp(second / "model_seed3.ckpt"), slurp(first / "model_seed3.ckpt"));

  ASSERT_EQ(run("eval --eval.checkpoint='" + (first / "model_seed3.ckpt").string() + "'" + kSmall), 0) << err_;
  EXPECT_NE(out_.find("target_accuracy"), std::string::npos);
  ASSERT_EQ(run("analyze --analyze.metric=export --eval.checkpoint='" + (first / "model_seed3.ckpt").string() + "'" +
                kSmall),
            0)
      << err_;
  EXPECT_EQ(lines(slurp(latest("analyze") / "features.csv")), 240u);
}

TEST_F(Cli, AblateWritesOneRecordPerMethodAndSeed) {
  ASSERT_EQ(run(std::string("ablate --experiment.seeds=0..1") + kSmall), 0) << err_;
  const fs::path records = latest("ablate") / "records.csv";
  EXPECT_EQ(lines(slurp(records)), 1u + 6u * 2u);
  ASSERT_EQ(run("analyze --analyze.metric=nemenyi --analyze.records='" + records.string() + "'"), 0) << err_;
  EXPECT_NE(out_.find("\"cd\""), std::string::npos) << out_;
}

TEST_F(Cli, SweepCoversEightLambdas) {
  ASSERT_EQ(run(std::string("sweep --experiment.seeds=0") + kSmall), 0) << err_;
  EXPECT_EQ(lines(slurp(latest("sweep") / "sweep.csv")), 9u);
}

TEST_F(Cli, GenDataAndHdh) {
  ASSERT_EQ(run("gen-data --experiment.seeds=0,1 --data.n_source=50 --data.n_target=40"), 0) << err_;
  const auto t = idda::read_tensor_file(latest("gen-data") / "data_seed1.ckpt");
  EXPECT_EQ(t.at("source/x").shape(), (idda::Shape{50, 2}));
  EXPECT_EQ(t.at("target/x").shape(), (idda::Shape{40, 2}));
  ASSERT_EQ(run("analyze --analyze.metric=hdh --analyze.grid=4 --data.n_source=50 --data.n_target=40"), 0) << err_;
  EXPECT_NE(out_.find("\"holds\":true"), std::string::npos) << out_;
}

}  // namespace

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("aqt_cli_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const auto log = dir_ / "out.log";
    const std::string cmd = "cd '" + dir_.string() + "' && '" AQT_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  std::size_t lines(const std::string& name) const {
    std::ifstream is(dir_ / name);
    std::size_t n = 0;
    for (std::string l; std::getline(is, l);) ++n;
    return n;
  }

  nlohmann::json only_manifest() const {
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(dir_ / "runs")) {
      if (e.path().filename() == "manifest.json") found.push_back(e.path());
    }
    EXPECT_EQ(found.size(), 1u);
    return nlohmann::json::parse(slurp(found.front()));
  }

  fs::path dir_;
};

const char* kTiny = "--layers 1 --embed-dim 8 --heads 2";

}  // namespace

TEST_F(Cli, SampleWritesRequestedCount) {
  const auto r = run("sample --state ghz:3 --n 2700 --seed 1 --out d.txt");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(lines("d.txt"), 2701u);
  EXPECT_NE(r.output.find("exact distribution"), std::string::npos);
}

TEST_F(Cli, SampleMatchesGoldenDatasets) {
  ASSERT_EQ(run("sample --state ghz:3 --n 20 --seed 1 --out a.txt").code, 0);
  ASSERT_EQ(run("sample --state faulty:0.2 --n 20 --seed 7 --out b.txt").code, 0);
  EXPECT_EQ(slurp(dir_ / "a.txt"), slurp(fs::path(AQT_GOLDEN_DIR) / "ghz3_n20_seed1.txt"));
  EXPECT_EQ(slurp(dir_ / "b.txt"), slurp(fs::path(AQT_GOLDEN_DIR) / "faulty02_n20_seed7.txt"));
}

TEST_F(Cli, SampleNinetyQubitGhz) {
  const auto r = run("sample --state ghz:90 --n 1000 --seed 2 --out g.txt");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(lines("g.txt"), 1001u);
}

TEST_F(Cli, ZeroSamplesIsUsageError) {
  const auto r = run("sample --state faulty:0.3 --n 0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--n"), std::string::npos);
}

TEST_F(Cli, MalformedStateIsUsageError) {
  EXPECT_EQ(run("sample --state ghz:x --n 5").code, 2);
  EXPECT_EQ(run("sample --state faulty:1.5 --n 5").code, 2);
}

TEST_F(Cli, ConfigFileSuppliesOptions) {
  std::ofstream(dir_ / "c.toml") << "[sample]\nstate=\"ghz:2\"\nn=5\nseed=3\nout=\"c.txt\"\n";
  ASSERT_EQ(run("--config c.toml sample").code, 0);
  ASSERT_EQ(run("sample --state ghz:2 --n 5 --seed 3 --out direct.txt").code, 0);
  EXPECT_EQ(slurp(dir_ / "c.txt"), slurp(dir_ / "direct.txt"));
}

TEST_F(Cli, TrainWritesCheckpointTraceAndManifest) {
  ASSERT_EQ(run("--runs-dir s sample --state ghz:3 --n 300 --seed 1 --out d.txt").code, 0);
  const auto r = run(std::string("train --data d.txt --checkpoint m.ckpt --epochs 3 ") + kTiny);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "m.ckpt"));
  const auto m = only_manifest();
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["exit_code"], 0);
  EXPECT_EQ(m["basis_convention"], "qubit0-most-significant");
  EXPECT_EQ(m["results"]["epochs"], 3);
  const std::string cfg = m["resolved_config"];
  EXPECT_NE(cfg.find("train.embed-dim=8"), std::string::npos);
  EXPECT_EQ(cfg.find("sample."), std::string::npos);
  bool has_trace = false;
  for (const auto& a : m["artifacts"]) {
    const fs::path p = dir_ / std::string(a);
    if (p.filename() == "trace.csv") {
      has_trace = true;
      EXPECT_EQ(slurp(p).substr(0, 30), "epoch,train_nll,heldout_nll\n1,");
    }
  }
  EXPECT_TRUE(has_trace);
}

TEST_F(Cli, LargeConfigIsAccepted) {
  ASSERT_EQ(run("sample --state ghz:2 --n 20 --seed 1 --out d.txt").code, 0);
  const auto r = run("train --data d.txt --checkpoint m.ckpt --large-config --epochs 1 --batch-size 20");
  ASSERT_EQ(r.code, 0) << r.output;
}

TEST_F(Cli, CorruptDatasetNamesTheLine) {
  std::ofstream(dir_ / "bad.txt") << "# aqt-dataset v1 n_qubits=3 povm=pauli4 seed=1 source=x\n012\n01x\n";
  const auto r = run("train --data bad.txt");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line 3"), std::string::npos) << r.output;
}

TEST_F(Cli, MissingCheckpointIsIoError) {
  EXPECT_EQ(run("eval --checkpoint nowhere.ckpt --state ghz:3 --which fq").code, 2);
}

TEST_F(Cli, QuantumFidelityPastEightQubitsIsCapacityError) {
  ASSERT_EQ(run("sample --state ghz:10 --n 100 --seed 1 --out d.txt").code, 0);
  ASSERT_EQ(run(std::string("train --data d.txt --checkpoint m.ckpt --epochs 1 ") + kTiny).code, 0);
  const auto r = run("eval --checkpoint m.ckpt --state ghz:10 --which fq");
  EXPECT_EQ(r.code, 3) << r.output;
  const auto s = run("eval --checkpoint m.ckpt --state ghz:10 --which fc-sampled --n 200");
  EXPECT_EQ(s.code, 0) << s.output;
}

TEST_F(Cli, EvalAndReconstructExportDensityMatrices) {
  ASSERT_EQ(run("sample --state ghz:2 --n 400 --seed 1 --out d.txt").code, 0);
  ASSERT_EQ(run(std::string("train --data d.txt --checkpoint m.ckpt --epochs 2 ") + kTiny).code, 0);
  auto r = run("eval --checkpoint m.ckpt --state ghz:2 --which fq --out fq.json");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "fq.json"));
  r = run("reconstruct --data d.txt --method mle --state ghz:2 --out mle.json --bars bars.csv");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(lines("bars.csv"), 17u);
  const auto dm = nlohmann::json::parse(slurp(dir_ / "mle.json"));
  EXPECT_EQ(dm["n_qubits"], 2);
  EXPECT_EQ(run("reconstruct --data d.txt --checkpoint m.ckpt").code, 2);
}

TEST_F(Cli, SweepsWriteVersionedCsv) {
  auto r = run(std::string("sweep-scaling --qubits 2 --ladder 20 40 --fc-samples 100 --epochs 1 --out s.csv "
                           "--thresholds-out t.csv ") + kTiny);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(dir_ / "s.csv").rfind("# aqt-sweep-scaling v1\n", 0), 0u);
  EXPECT_EQ(slurp(dir_ / "t.csv").rfind("# aqt-sample-threshold v1\n", 0), 0u);
  r = run(std::string("sweep-error --p 0 0.1 --n 100 --epochs 1 --out e.csv ") + kTiny);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(lines("e.csv"), 4u);
  EXPECT_EQ(run("sweep-scaling --qubits 2 --ladder 40 20").code, 2);
}

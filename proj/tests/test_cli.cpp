#include "oracles.hpp"
#include "wearstress/pipeline.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>

using namespace wearstress;
namespace fs = std::filesystem;

namespace {

struct Result {
  int rc = -1;
  std::string output;  // stdout and stderr interleaved
};

Result run(const std::string& args) {
  const std::string cmd = std::string(WEARSTRESS_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kLightTrain = "--trees 30 --rounds 20 --mlp-epochs 5 --top-n 5 --oof-k 3";

/// synth -> preprocess -> featurize -> train on a two-subject dataset, once.
const fs::path& chain_dir() {
  static const fs::path root = [] {
    const auto d = oracle::scratch_dir("cli-chain");
    auto ok = [](const Result& r) {
      if (r.rc != 0) throw std::runtime_error("cli step failed: " + r.output);
    };
    ok(run("--seed 4 synth --out " + q(d / "data") + " --subjects 2 --shifts 3 --hours 1"));
    ok(run("preprocess --in " + q(d / "data") + " --out " + q(d / "epochs.bin")));
    ok(run("featurize --in " + q(d / "epochs.bin") + " --out " + q(d / "features.csv")));
    ok(run("--seed 4 train --features " + q(d / "features.csv") + " --out " + q(d / "model.bin") + " " + kLightTrain));
    return d;
  }();
  return root;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(binio::read_all(p)); }

}  // namespace

TEST(Cli, SynthIsByteIdenticalForOneSeed) {
  const auto root = oracle::scratch_dir("cli-synth");
  for (const char* side : {"a", "b"})
    ASSERT_EQ(run("--seed 7 synth --out " + q(root / side / "data") + " --subjects 3 --shifts 4 --hours 0.5").rc, 0);
  const auto a = oracle::tree_hashes(root / "a" / "data"), b = oracle::tree_hashes(root / "b" / "data");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  ASSERT_EQ(run("--seed 8 synth --out " + q(root / "c" / "data") + " --subjects 3 --shifts 4 --hours 0.5").rc, 0);
  EXPECT_NE(oracle::tree_hashes(root / "c" / "data"), a);
}

TEST(Cli, MissingModelIsAUsageError) {
  const auto d = chain_dir();
  const auto r = run("evaluate --features " + q(d / "features.csv") + " --model " + q(d / "nope.bin") + " --out " + q(d / "r"));
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.output.find("model"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("nope.bin"), std::string::npos) << r.output;
}

TEST(Cli, BadArgumentsExitWithOne) {
  EXPECT_EQ(run("").rc, 1);
  EXPECT_EQ(run("synth").rc, 1);
  EXPECT_EQ(run("synth --out /tmp/x --mix 0.5,0.5,0.5").rc, 1);
  const auto d = chain_dir();
  EXPECT_EQ(run("evaluate --features " + q(d / "features.csv") + " --model " + q(d / "model.bin") + " --out " + q(d / "r") +
                " --protocol random")
                .rc,
            1);
}

TEST(Cli, CorruptModelIsAFormatError) {
  const auto d = chain_dir();
  binio::write_all(d / "corrupt.bin", std::string("not a model"));
  const auto r = run("predict --features " + q(d / "features.csv") + " --model " + q(d / "corrupt.bin") + " --out " + q(d / "p.csv"));
  EXPECT_EQ(r.rc, 2) << r.output;
}

TEST(Cli, ChainWritesReportAndPredictions) {
  const auto d = chain_dir();
  ASSERT_TRUE(fs::exists(d / "manifest.json"));
  ASSERT_EQ(run("evaluate --features " + q(d / "features.csv") + " --model " + q(d / "model.bin") + " --out " + q(d / "report")).rc, 0);
  const auto report = read_json(d / "report" / "report.json");
  for (const char* m : {"forest", "boosted", "mlp", "stack"}) {
    ASSERT_TRUE(report["models"].contains(m)) << m;
    const double f1 = report["models"][m]["macro_f1"].get<double>();
    EXPECT_GE(f1, 0.0);
    EXPECT_LE(f1, 1.0);
    EXPECT_TRUE(fs::exists(d / "report" / (std::string("confusion_") + m + ".csv")));
  }
  EXPECT_TRUE(fs::exists(d / "report" / "run.json"));

  ASSERT_EQ(run("predict --features " + q(d / "features.csv") + " --model " + q(d / "model.bin") + " --out " + q(d / "pred.csv")).rc, 0);
  const auto text = binio::read_all(d / "pred.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "subject_id,shift_id,t0,predicted,p_baseline,p_acute,p_chronic");
  const auto table = load_feature_table(d / "features.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), table.rows() + 1);
}

TEST(Cli, ImportanceWritesRankedFeatures) {
  const auto d = chain_dir();
  ASSERT_EQ(run("importance --features " + q(d / "features.csv") + " --model " + q(d / "model.bin") + " --out " + q(d / "imp.csv") +
                " --repeats 2")
                .rc,
            0);
  const auto text = binio::read_all(d / "imp.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "rank,feature,importance");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(kNumFeatures) + 1);
}

TEST(Cli, ConfigFromRunRecordReplaysTraining) {
  const auto d = chain_dir();
  const auto record = d / "model.bin.run.json";
  ASSERT_TRUE(fs::exists(record));
  ASSERT_EQ(run("--config " + q(record) + " train --features " + q(d / "features.csv") + " --out " + q(d / "replay.bin")).rc, 0);
  EXPECT_EQ(binio::read_all(d / "replay.bin"), binio::read_all(d / "model.bin"));
}

TEST(Cli, RunRecordHasNoAbsolutePaths) {
  const auto d = chain_dir();
  const auto text = binio::read_all(d / "model.bin.run.json");
  EXPECT_EQ(text.find(d.string()), std::string::npos);
}

TEST(RunConfigJson, RoundTripAndUnknownKeys) {
  RunConfig c;
  c.seed = 99;
  c.synth.n_subjects = 3;
  c.stack.learners.forest.n_trees = 12;
  c.protocol = Protocol::KFold;
  c.rfe_keep = 20;
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json().dump(), j.dump());
  auto bad = j;
  bad["colour"] = "blue";
  EXPECT_THROW(RunConfig::from_json(bad), ConfigError);
  auto wrong_version = j;
  wrong_version["manifest_version"] = "something-else";
  EXPECT_THROW(RunConfig::from_json(wrong_version), ConfigError);
}

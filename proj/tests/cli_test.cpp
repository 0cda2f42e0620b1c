// Copyright 2026 The fmxcoders Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fmx/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmx/checkpoint.hpp"
#include "fmx/config.hpp"
#include "fmx/synth_data.hpp"

namespace fmx {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run fmx(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fmx_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string out(const std::string& sub = "") const { return (dir_ / sub).string(); }

  // Small dims so training runs in well under a second per arm.
  std::vector<std::string> small(std::vector<std::string> args, const std::string& sub = "o") const {
    for (const std::string kv : {"--data.d", "8", "--data.layers", "4", "--data.single", "4",
                                 "--data.cross", "4", "--data.cross_support", "2",
                                 "--model.d_sae", "32", "--train.batch_size", "64",
                                 "--train.steps", "20", "--train.prefetch", "0"}) {
      args.push_back(kv);
    }
    args.push_back("--out");
    args.push_back(out(sub));
    return args;
  }

  fs::path dir_;
};

TEST_F(CliTest, GenerateIsDeterministicPerSeed) {
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "500"}, "a")).code, kExitOk);
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "500"}, "b")).code, kExitOk);
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "500", "--seed", "1"}, "c")).code, kExitOk);
  const auto a = slurp(out("a/activations.fmxa"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(out("b/activations.fmxa")));
  EXPECT_NE(a, slurp(out("c/activations.fmxa")));
}

TEST_F(CliTest, ResolvedConfigReloadsToTheSameRun) {
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "300", "--seed", "9"}, "a")).code, kExitOk);
  Config saved;
  saved.load_file(out("a/generate.config"));
  EXPECT_EQ(saved.integer("seed"), 9);
  EXPECT_EQ(saved.count("data.d"), 8u);
  // Rerun from the saved file alone, redirecting only the output.
  ASSERT_EQ(fmx({"generate", "--config", out("a/generate.config"), "--out", out("b")}).code, kExitOk);
  EXPECT_EQ(slurp(out("a/activations.fmxa")), slurp(out("b/activations.fmxa")));
}

TEST_F(CliTest, UnknownKeysAreConfigErrors) {
  const auto r = fmx({"ranks", "--model.dsae", "4"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.dsae"), std::string::npos);

  std::ofstream(dir_ / "bad.config") << "seed = 1\ntrain.lr = 0.1\n";
  const auto f = fmx({"ranks", "--config", out("bad.config")});
  EXPECT_EQ(f.code, kExitConfig);
  EXPECT_NE(f.err.find("train.lr"), std::string::npos);

  EXPECT_EQ(fmx({"ranks", "--seed=abc"}).code, kExitConfig);
  EXPECT_EQ(fmx({"ranks", "--seed"}).code, kExitConfig);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(fmx({}).code, kExitUsage);
  EXPECT_EQ(fmx({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(fmx({"--help"}).code, kExitOk);
}

TEST_F(CliTest, DataErrorsExitThree) {
  EXPECT_EQ(fmx(small({"train"})).code, kExitData);  // no cache yet
  std::ofstream(dir_ / "junk.fmxa") << "not a cache";
  EXPECT_EQ(fmx(small({"train", "--data.cache", out("junk.fmxa")})).code, kExitData);

  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "300"})).code, kExitOk);
  ASSERT_EQ(fmx(small({"train"})).code, kExitOk);
  const auto probe = fmx(small({"probe"}));
  EXPECT_EQ(probe.code, kExitData);
  EXPECT_NE(probe.err.find("no labels"), std::string::npos);
}

TEST_F(CliTest, BadValuesExitTwo) {
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "300"})).code, kExitOk);
  EXPECT_EQ(fmx(small({"train", "--model.variant", "mlp"})).code, kExitConfig);
  EXPECT_EQ(fmx(small({"train", "--train.mask_p", "1.5"})).code, kExitConfig);
  EXPECT_EQ(fmx(small({"train", "--model.variant", "sae"})).code, kExitConfig);
  EXPECT_EQ(fmx(small({"eval", "--eval.mode", "top3"})).code, kExitConfig);
  EXPECT_EQ(fmx({"ranks", "--ranks.d", "768", "--ranks.d_sae", "16384", "--ranks.layers", "8",
                 "--ranks.budget", "10"})
                .code,
            kExitConfig);
}

TEST_F(CliTest, TrainEvalCoherenceProbePipeline) {
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "2000", "--data.labels", "true",
                       "--data.sequence_length", "8"}))
                .code,
            kExitOk);
  const auto train = fmx(small({"train", "--model.k", "2"}));
  ASSERT_EQ(train.code, kExitOk) << train.err;
  EXPECT_NE(train.out.find("param_count="), std::string::npos);
  const auto model = load_checkpoint(out("o/model.fmxc"));
  EXPECT_EQ(model.variant(), Variant::kTr);
  EXPECT_EQ(model.k, 2u);

  std::ifstream log(out("o/train_log.ndjson"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 2u);  // steps 10 and 20

  for (const char* cmd : {"eval", "coherence", "probe"}) {
    const auto r = fmx(small({cmd}));
    EXPECT_EQ(r.code, kExitOk) << cmd << ": " << r.err;
  }
  EXPECT_EQ(slurp(out("o/probe.csv")).rfind("task,latent,threshold,f1_percent,w1_e3\n", 0), 0u);
  EXPECT_EQ(slurp(out("o/recon.csv")).rfind("scope,mse,", 0), 0u);
  EXPECT_TRUE(fs::exists(out("o/coherence_hist.csv")));
}

TEST_F(CliTest, SingleLayerSaeReadsOneLayer) {
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "300"})).code, kExitOk);
  ASSERT_EQ(fmx(small({"train", "--model.variant", "sae", "--model.layer", "2"})).code, kExitOk);
  EXPECT_EQ(load_checkpoint(out("o/model.fmxc")).dims().layers, 1u);
  EXPECT_EQ(fmx(small({"eval"})).code, kExitConfig);  // which layer?
  EXPECT_EQ(fmx(small({"eval", "--eval.layer", "2"})).code, kExitOk);
  EXPECT_EQ(fmx(small({"eval", "--eval.layer", "4"})).code, kExitData);
}

TEST_F(CliTest, SweepGridHalvesParameters) {
  ASSERT_EQ(fmx(small({"generate", "--data.tokens", "1000", "--data.labels", "true"})).code, kExitOk);
  const auto r = fmx(small({"sweep", "--sweep.p", "0,0.1", "--sweep.reductions", "1,0.5"}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream table(out("o/sweep.csv"));
  std::string line;
  std::getline(table, line);
  EXPECT_EQ(line, "p,reduction,variant,r1,r2,r3,param_count,mse,mean_f1,mean_cf");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(table, line)) {
    std::vector<std::string> cols;
    std::stringstream s(line);
    for (std::string c; std::getline(s, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 10u) << line;
    rows.push_back(cols);
  }
  ASSERT_EQ(rows.size(), 4u);
  for (const char* cell : {"p0_r1", "p0_r0.5", "p0.1_r1", "p0.1_r0.5"}) {
    EXPECT_TRUE(fs::exists(dir_ / "o" / "sweep" / cell / "model.fmxc")) << cell;
  }
  // Weights only: biases do not scale with the budget.
  const WeightDims dims{8, 32, 4};
  for (const std::size_t n : {0, 2}) {
    EXPECT_EQ(rows[n][1], "1");
    EXPECT_EQ(rows[n + 1][1], "0.5");
    const auto full = load_checkpoint(dir_ / "o" / "sweep" / ("p" + rows[n][0] + "_r1") / "model.fmxc");
    const auto half =
        load_checkpoint(dir_ / "o" / "sweep" / ("p" + rows[n][0] + "_r0.5") / "model.fmxc");
    EXPECT_EQ(full.dims(), dims);
    const double ratio = static_cast<double>(weight_count(half)) / static_cast<double>(weight_count(full));
    EXPECT_NEAR(ratio, 0.5, 0.05 * 0.5) << rows[n][0];
    EXPECT_FLOAT_EQ(static_cast<float>(full.mask_p), std::stof(rows[n][0]));
  }
}

TEST_F(CliTest, RanksForGpt2Dims) {
  const auto r = fmx({"ranks", "--ranks.d", "768", "--ranks.d_sae", "16384", "--ranks.layers", "8"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("tr_ranks_nearest=(5,244,25)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("cp_rank=5866"), std::string::npos) << r.out;
}

TEST_F(CliTest, JudgeWithStubTranscript) {
  std::ofstream(dir_ / "evidence.jsonl")
      << R"({"feature_id": 3, "tokens": [{"token": "a", "contexts": ["x a y"]}]})" << '\n'
      << R"({"feature_id": 7, "tokens": [{"token": "b", "contexts": []}]})" << '\n'
      << R"({"feature_id": 9, "tokens": [{"token": "c", "contexts": []}]})" << '\n';
  std::ofstream(dir_ / "stub.jsonl")
      << R"({"feature_id": 3, "response": "{\"semantic_score\": 0.9, \"surface_score\": 0.1}"})" << '\n'
      << R"({"feature_id": 7, "response": "{\"semantic_score\": 0.1, \"surface_score\": 0.8}"})" << '\n';
  const auto r = fmx({"judge", "--judge.evidence", out("evidence.jsonl"), "--judge.stub",
                      out("stub.jsonl"), "--judge.backoff_ms", "0", "--out", out("o")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("semantic=1 surface=1 unlabeled=0 errored=1"), std::string::npos) << r.out;
  const auto csv = slurp(out("o/judgements.csv"));
  EXPECT_NE(csv.find("\n3,semantic,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\n9,error,"), std::string::npos) << csv;
}

TEST_F(CliTest, JudgeWithoutTokenIsConfigError) {
  std::ofstream(dir_ / "evidence.jsonl") << R"({"feature_id": 3, "tokens": [{"token": "a", "contexts": []}]})" << '\n';
  const auto r = fmx({"judge", "--judge.evidence", out("evidence.jsonl"), "--judge.model", "m",
                      "--judge.auth_env", "FMX_TEST_SURELY_UNSET_TOKEN", "--out", out("o")});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("FMX_TEST_SURELY_UNSET_TOKEN"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace fmx

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "blockspec/bench/ablation.hpp"
#include "blockspec/bench/report.hpp"
#include "blockspec/bench/suite.hpp"

namespace blockspec {
namespace {

namespace fs = std::filesystem;

TEST(CostModel, LatencyExamples) {
  CostModel cm{.t_draft = 2, .t_verify = 4, .tau = 3, .gamma = 7};
  EXPECT_DOUBLE_EQ(latency_per_token(cm), 2.0);
  CostModel degenerate{.t_draft = 0, .t_verify = 4, .tau = 1, .gamma = 7};
  EXPECT_DOUBLE_EQ(latency_per_token(degenerate), 4.0);
  CostModel doubled = cm;
  doubled.tau = 6;
  EXPECT_DOUBLE_EQ(latency_per_token(doubled), latency_per_token(cm) / 2);
  CostModel bad = cm;
  bad.tau = 0;
  EXPECT_THROW(latency_per_token(bad), NumericError);
  bad.tau = 9;
  EXPECT_THROW(latency_per_token(bad), ContractError);
}

TEST(CostModel, SpeedupExamples) {
  CostModel cm{.t_draft = 2, .t_verify = 4, .tau = 3, .gamma = 7, .l_target = 3};
  EXPECT_DOUBLE_EQ(speedup(cm), 1.5);
  CostModel even{.t_draft = 1, .t_verify = 2, .tau = 1, .gamma = 7, .l_target = 3};
  EXPECT_DOUBLE_EQ(speedup(even), 1.0);
  CostModel row{.t_draft = 0.335, .t_verify = 1.0, .tau = 6.49, .gamma = 15, .l_target = 1.0};
  EXPECT_NEAR(speedup(row), 4.86, 0.01);
}

TEST(CostModel, DraftCosts) {
  EXPECT_DOUBLE_EQ(ar_draft_cost(8, 0.5), 4.0);
  EXPECT_DOUBLE_EQ(ar_draft_cost(1, 0.7), 0.7);
  EXPECT_DOUBLE_EQ(diff_draft_cost(1.25), 1.25);
  EXPECT_THROW(ar_draft_cost(0, 1.0), ContractError);
}

TEST(CostModel, SpeedupMonotoneProperty) {
  PhiloxEngine rng(5, RngStream::kData);
  for (int i = 0; i < 2000; ++i) {
    CostModel cm;
    cm.gamma = static_cast<double>(1 + rng.below(31));
    cm.tau = 1 + rng.uniform() * (cm.gamma - 0.01);
    cm.t_draft = 0.01 + rng.uniform();
    cm.t_verify = 0.01 + rng.uniform();
    cm.l_target = 0.01 + rng.uniform();
    const double base = speedup(cm);
    auto more_tau = cm;
    more_tau.tau = std::min(cm.gamma + 1, cm.tau + 0.01);
    EXPECT_GT(speedup(more_tau), base);
    auto slower_draft = cm;
    slower_draft.t_draft += 0.01;
    EXPECT_LT(speedup(slower_draft), base);
    auto slower_verify = cm;
    slower_verify.t_verify += 0.01;
    EXPECT_LT(speedup(slower_verify), base);
  }
}

TEST(Timing, MedianAndWarmup) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(median_index({5, 1, 3}), 2u);
  int calls = 0;
  time_median_ms([&] { ++calls; }, {2, 5});
  EXPECT_EQ(calls, 7);
}

class SuiteTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("blockspec_suite_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    TargetConfig tc;
    tc.n_layers = 4;
    tc.d_model = 32;
    tc.n_heads = 2;
    tc.d_ff = 64;
    tc.max_seq = 96;
    TargetModel<float> target(tc, 3);
    target.save((dir / "target.ckpt").string());
    for (int b : {4, 8}) {
      DraftConfig dc;
      dc.n_layers = 1;
      dc.d_model = 32;
      dc.n_heads = 2;
      dc.d_ff = 64;
      dc.block_size = b;
      dc.n_feat = 1;
      DraftModel<float>(dc, target, 7).save((dir / ("d" + std::to_string(b) + ".ckpt")).string());
    }
    write_jsonl((dir / "prompts.jsonl").string(), gen_task(Task::kCopyRepeat, 9, 4));
    mx.target = (dir / "target.ckpt").string();
    mx.prompts = (dir / "prompts.jsonl").string();
    mx.max_new = 12;
    mx.cells = {{"b4", (dir / "d4.ckpt").string(), {4, 8}},
                {"b8", (dir / "d8.ckpt").string(), {}},
                {"gone", (dir / "missing.ckpt").string(), {}}};
    mx.temperatures = {0.0, 1.0};
    mx.seeds = {0, 1};
    mx.concurrency = {1, 2};
    mx.draft_cost_block_sizes = {4, 8};
    mx.policy = {1, 1};
  }
  void TearDown() override { fs::remove_all(dir); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir;
  BenchMatrix mx;
};

TEST_F(SuiteTest, ProducesLosslessRowsAndSkipsMissing) {
  const auto rep = run_suite(mx);
  ASSERT_EQ(rep.skipped.size(), 1u);
  EXPECT_EQ(rep.skipped[0].first, "gone");
  // b4 at test B 4 and 8, b8 at 8; greedy once, sampled per seed.
  EXPECT_EQ(rep.quality.size(), 3u * 3u);
  for (const auto& q : rep.quality) {
    EXPECT_EQ(q.summary.mismatches, 0u);
    EXPECT_GE(q.summary.mean_tau(), 1.0);
    EXPECT_LE(q.summary.mean_tau(), static_cast<double>(q.test_b));
    double frac = 0;
    for (std::size_t t = 0; t < q.summary.tau_histogram.size(); ++t)
      frac += static_cast<double>(q.summary.tau_histogram[t]) / static_cast<double>(q.summary.cycles);
    EXPECT_NEAR(frac, 1.0, 1e-12);
  }
  EXPECT_EQ(rep.timing.size(), 3u * 2u * 2u);
  for (const auto& t : rep.timing) {
    EXPECT_GT(t.eta, 0.0);
    EXPECT_GT(t.measured_speedup, 0.0);
  }
  EXPECT_EQ(rep.draft_cost.size(), 4u);
}

TEST_F(SuiteTest, DeterministicCsvsAreByteIdentical) {
  mx.timing = false;
  write_report(run_suite(mx), dir / "r1");
  write_report(run_suite(mx), dir / "r2");
  for (const char* f : {"quality.csv", "tau_hist.csv"}) {
    const auto a = slurp(dir / "r1" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir / "r2" / f)) << f;
  }
  const auto md = render_report(dir / "r1");
  EXPECT_NE(md.find("Block-size generalization"), std::string::npos);
  EXPECT_NE(md.find("| b4 |"), std::string::npos);
}

TEST_F(SuiteTest, MatrixJsonRoundTrip) {
  nlohmann::json j = mx;
  std::ofstream(dir / "m.json") << j.dump(2);
  const auto back = load_matrix(dir / "m.json");
  EXPECT_EQ(back.cells.size(), 3u);
  EXPECT_EQ(back.cells[0].test_block_sizes, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(back.seeds, mx.seeds);
  std::ofstream(dir / "bad.json") << "{\"target\": 1}";
  EXPECT_THROW(load_matrix(dir / "bad.json"), ConfigError);
}

TEST(Report, CsvParsing) {
  auto r = split_csv_line("a,b,,c");
  EXPECT_EQ(r, (std::vector<std::string>{"a", "b", "", "c"}));
  EXPECT_EQ(split_csv_line("x,").size(), 2u);
}

}  // namespace
}  // namespace blockspec

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"

using namespace dibo;
using namespace dibo::testing;

namespace {

struct Desk {
  TaskSpec task = tf8_like_task(0);
  Oracle oracle = Oracle::make(task);
  NormalizationSpec norm = oracle.enumerate_extrema();
  OfflinePool pool = build_pool(full_space_dataset(oracle), 500, norm);
  TemplateSet templates = TemplateSet::builtin();
  Vocab vocab = build_vocab(task, templates);
};

const Desk& desk() {
  static const Desk d;
  return d;
}

ModelConfig probe_config() {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.n_layers = 1;
  mc.vocab_size = static_cast<int>(desk().vocab.size());
  return mc;
}

ProbeResult run_probe(const Model<float>& m, int K, std::size_t groups, bool shuffle = false) {
  ProbeConfig pc;
  pc.K = K;
  pc.groups = groups;
  pc.shuffle_options = shuffle;
  const auto& d = desk();
  return ranking_probe(m, d.task, d.pool, d.vocab, Delimiters::for_mode(DelimiterMode::tokens), pc);
}

}  // namespace

TEST(Metrics, ThreeCandidateExample) {
  const ReportRow r = evaluate(std::vector<double>{0.9, 0.5, 0.1}, {2});
  EXPECT_DOUBLE_EQ(r.get("max"), 0.9);
  EXPECT_DOUBLE_EQ(r.get("median"), 0.5);
  EXPECT_DOUBLE_EQ(r.get("top2"), 0.7);
}

TEST(Metrics, AllEqualScores) {
  const ReportRow r = evaluate(std::vector<double>(7, 0.25));
  for (const auto& [k, v] : r.metrics) EXPECT_DOUBLE_EQ(v, 0.25) << k;
}

TEST(Metrics, LowerMedianAndShortTopK) {
  EXPECT_DOUBLE_EQ(lower_median({4.0, 1.0, 3.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(top_k_mean({1.0, 3.0}, 5), 2.0);
  EXPECT_THROW(evaluate(std::vector<double>{}), Error);
}

TEST(Metrics, MatchIndependentSortOn128Scores) {
  Rng rng(1);
  std::vector<double> s(128);
  for (auto& v : s) v = rng.uniform();
  const ReportRow r = evaluate(s);
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(r.get("max"), sorted.back());
  EXPECT_EQ(r.get("median"), sorted[63]);
  for (std::size_t k : {5u, 10u, 20u}) {
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += sorted[127 - i];
    EXPECT_NEAR(r.get("top" + std::to_string(k)), sum / static_cast<double>(k), 1e-15);
  }
}

TEST(Metrics, TopKChainOnRandomSets) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(1 + rng.below(200));
    for (auto& v : s) v = rng.uniform();
    const ReportRow r = evaluate(s);
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    ASSERT_GE(r.get("max"), r.get("top5"));
    ASSERT_GE(r.get("top5"), r.get("top10"));
    ASSERT_GE(r.get("top10"), r.get("top20"));
    ASSERT_GE(r.get("top20"), mean - 1e-12);
    // with at least 38 scores the top 20 all sit at or above the lower median
    if (s.size() >= 38) {
      ASSERT_GE(r.get("top20"), r.get("median"));
    }
  }
}

TEST(Metrics, TopTwentyCanFallBelowMedianOnShortSets) {
  const ReportRow r = evaluate({1.0, 0.9, 0.0});
  EXPECT_LT(r.get("top20"), r.get("median"));
}

TEST(Baselines, PoolBestIsLargestNormalizedLabel) {
  const auto& d = desk();
  double best = 0.0;
  for (const auto& e : d.pool.entries) best = std::max(best, e.norm);
  EXPECT_EQ(baseline_pool_best(d.pool), best);
}

TEST(Baselines, RandomMaxMatchesExactExpectation) {
  // E[max of n iid draws] from the enumerated label distribution
  const auto& d = desk();
  std::map<double, double> mass;
  for (std::uint64_t i = 0; i < 65536; ++i)
    mass[normalize(d.norm, d.oracle.score(design_from_index(d.task, i)))] += 1.0 / 65536.0;
  double cdf = 0.0, expect = 0.0, second = 0.0;
  for (const auto& [v, p] : mass) {
    const double lo = std::pow(cdf, 128.0);
    cdf += p;
    const double hi = std::pow(std::min(cdf, 1.0), 128.0);
    expect += v * (hi - lo);
    second += v * v * (hi - lo);
  }
  const double sd = std::sqrt(second - expect * expect);
  Rng rng(3);
  double total = 0.0;
  for (int t = 0; t < 100; ++t) total += baseline_random(d.oracle, d.norm, 128, rng).get("max");
  EXPECT_NEAR(total / 100.0, expect, 4.0 * sd / 10.0);
}

TEST(Report, CsvLayout) {
  std::vector<ReportRow> rows(2);
  rows[0].set("max", 0.5);
  rows[0].set("median", 0.25);
  rows[1].set("max", 0.75);
  rows[1].set("median", 0.25);
  EXPECT_EQ(report_csv({4, 9}, rows),
            "seed,metric,value\n4,max,0.5\n4,median,0.25\n9,max,0.75\n9,median,0.25\n"
            "mean,max,0.625\nmean,median,0.25\nstd,max,0.125\nstd,median,0\n");
  EXPECT_THROW(report_csv({1}, rows), Error);
}

TEST(Probe, FractionalRankTies) {
  EXPECT_DOUBLE_EQ(fractional_rank({3.0, 2.0, 1.0}, 0), 1.0);
  EXPECT_DOUBLE_EQ(fractional_rank({3.0, 2.0, 1.0}, 2), 3.0);
  EXPECT_DOUBLE_EQ(fractional_rank({1.0, 1.0}, 1), 1.5);
  EXPECT_DOUBLE_EQ(fractional_rank(std::vector<double>(6, 0.0), 4), 3.5);
  EXPECT_EQ(factorial(3), 6u);
}

TEST(Probe, UniformModelSitsAtTheRandomBaseline) {
  Rng rng(4);
  Model<float> m(probe_config(), rng);
  set_constant_output(m, std::vector<double>(desk().vocab.size(), 0.0));
  for (int K : {2, 3}) {
    const ProbeResult r = run_probe(m, K, 50);
    EXPECT_DOUBLE_EQ(r.random_baseline, (static_cast<double>(factorial(K)) + 1.0) / 2.0);
    EXPECT_DOUBLE_EQ(r.mean_rank, r.random_baseline);
  }
}

TEST(Probe, UntrainedModelNearBaselineAndRanksBounded) {
  Rng rng(5);
  const Model<float> m(probe_config(), rng);
  const ProbeResult r3 = run_probe(m, 3, 500);
  EXPECT_NEAR(r3.mean_rank, 3.5, 0.35);
  const ProbeResult r2 = run_probe(m, 2, 500);
  EXPECT_NEAR(r2.mean_rank, 1.5, 0.10);
  for (const auto* r : {&r2, &r3}) {
    ASSERT_EQ(r->ranks.size(), 500u);
    std::size_t hist = 0;
    for (auto h : r->histogram) hist += h;
    EXPECT_EQ(hist, 500u);
    for (double x : r->ranks) {
      EXPECT_GE(x, 1.0);
      EXPECT_LE(x, static_cast<double>(factorial(r->K)));
    }
  }
}

TEST(Probe, ShufflingOptionsBarelyMovesUntrainedMean) {
  Rng rng(6);
  const Model<float> m(probe_config(), rng);
  EXPECT_LT(std::fabs(run_probe(m, 3, 300).mean_rank - run_probe(m, 3, 300, true).mean_rank), 0.2);
}

TEST(Probe, ConfigAndCsv) {
  ProbeConfig pc;
  pc.K = 6;
  EXPECT_THROW(pc.validate(), Error);
  ProbeResult r;
  r.K = 2;
  r.groups = 10;
  r.mean_rank = 1.4;
  r.random_baseline = 1.5;
  EXPECT_EQ(probe_csv({r}), "K,groups,mean_rank,random_baseline\n2,10,1.4,1.5\n");
}

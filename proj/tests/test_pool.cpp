#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dibo/pool.hpp"

using namespace dibo;

namespace {

std::vector<LabeledDesign> toy_dataset(const std::vector<double>& labels) {
  const TaskSpec task = tf8_like_task();
  std::vector<LabeledDesign> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({design_from_index(task, i * 37), labels[i]});
  return out;
}

struct Fixture {
  TaskSpec task = tf8_like_task(0);
  Oracle oracle = Oracle::make(task);
  NormalizationSpec norm = oracle.enumerate_extrema();
  std::vector<LabeledDesign> data = full_space_dataset(oracle);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

OfflinePool small_pool(std::size_t n, std::uint64_t seed) {
  const auto& f = fixture();
  Rng rng(seed);
  return build_pool(f.data, n, f.norm, SubSampling::random, &rng);
}

}  // namespace

TEST(BuildPool, EvenSpacingOfFiveLabels) {
  const NormalizationSpec spec(0.0, 10.0);
  const OfflinePool pool = build_pool(toy_dataset({4, 2, 5, 1, 3}), 3, spec);
  ASSERT_EQ(pool.size(), 3u);
  EXPECT_EQ(pool[0].label, 1.0);
  EXPECT_EQ(pool[1].label, 3.0);
  EXPECT_EQ(pool[2].label, 5.0);
  EXPECT_EQ(pool.source_size, 5u);
}

TEST(BuildPool, FullSizeIsSortedDataset) {
  const NormalizationSpec spec(0.0, 10.0);
  auto data = toy_dataset({4, 2, 5, 1, 3});
  const OfflinePool pool = build_pool(data, 5, spec);
  sort_by_label(data);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(pool[i].label, data[i].label);
    EXPECT_EQ(pool[i].design, data[i].design);
  }
}

TEST(BuildPool, IndicesMatchRoundingFormulaOnFullSpace) {
  const std::size_t N = 65536, n = 500;
  const auto idx = even_subsample_indices(N, n);
  ASSERT_EQ(idx.size(), n);
  for (std::size_t k = 0; k < n; ++k) {
    const double exact = static_cast<double>(k) * static_cast<double>(N - 1) / static_cast<double>(n - 1);
    EXPECT_EQ(idx[k], static_cast<std::size_t>(std::floor(exact + 0.5))) << k;
  }
  const auto& f = fixture();
  auto sorted = f.data;
  sort_by_label(sorted);
  const OfflinePool pool = build_pool(f.data, n, f.norm);
  for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(pool[k].design, sorted[idx[k]].design);
}

TEST(BuildPool, CollisionsTakeNextUnusedIndex) {
  const auto idx = even_subsample_indices(5, 5);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  const auto idx2 = even_subsample_indices(7, 6);
  EXPECT_TRUE(std::is_sorted(idx2.begin(), idx2.end()));
  EXPECT_EQ(std::set<std::size_t>(idx2.begin(), idx2.end()).size(), 6u);
  EXPECT_LT(idx2.back(), 7u);
}

TEST(BuildPool, CapacityErrors) {
  const NormalizationSpec spec(0.0, 10.0);
  try {
    build_pool(toy_dataset({1, 2}), 3, spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::capacity);
  }
  EXPECT_THROW(build_pool(toy_dataset({1, 2}), 1, spec), Error);
}

TEST(BuildPool, Deterministic) {
  const auto& f = fixture();
  EXPECT_EQ(pool_to_jsonl(f.task, build_pool(f.data, 500, f.norm)), pool_to_jsonl(f.task, build_pool(f.data, 500, f.norm)));
}

TEST(BuildPool, BothModesSpanTheLabelRange) {
  const auto& f = fixture();
  auto sorted = f.data;
  sort_by_label(sorted);
  const std::size_t q = sorted.size() / 100;
  const double lo = sorted[q].label, hi = sorted[sorted.size() - 1 - q].label;
  for (auto mode : {SubSampling::even, SubSampling::random}) {
    Rng rng(4);
    const OfflinePool pool = build_pool(f.data, 500, f.norm, mode, &rng);
    EXPECT_LE(pool[0].label, lo);
    EXPECT_GE(pool[pool.size() - 1].label, hi);
    for (std::size_t i = 1; i < pool.size(); ++i) ASSERT_LE(pool[i - 1].label, pool[i].label);
    std::set<Design> uniq;
    for (const auto& e : pool.entries) uniq.insert(e.design);
    EXPECT_EQ(uniq.size(), pool.size());
  }
}

TEST(BuildPool, TruncationKeepsBestStrictlyBelowOne) {
  const auto& f = fixture();
  const auto kept = truncate_top(f.data, 0.05);
  EXPECT_EQ(kept.size(), 62260u);  // ceil(0.95 * 65536)
  const OfflinePool pool = build_pool(kept, 500, f.norm);
  EXPECT_LT(pool_best(pool), 1.0);
}

TEST(Partition, TenEntries) {
  const OfflinePool pool = small_pool(10, 1);
  const Partition p = build_partition(pool);
  EXPECT_EQ(p.d1.size(), 8u);
  EXPECT_EQ(p.d2.size(), 2u);
}

TEST(Partition, FiveHundredEntries) {
  const OfflinePool pool = small_pool(500, 1);
  const Partition p = build_partition(pool, 0.8);
  EXPECT_EQ(p.d1.size(), 400u);
  EXPECT_EQ(p.d2.size(), 100u);
}

TEST(Partition, DisjointCoveringAndOrdered) {
  for (std::size_t n : {3u, 7u, 50u}) {
    const OfflinePool pool = small_pool(n, n);
    const Partition p = build_partition(pool);
    std::set<std::size_t> a(p.d1.begin(), p.d1.end()), b(p.d2.begin(), p.d2.end());
    for (std::size_t i : a) EXPECT_EQ(b.count(i), 0u);
    EXPECT_EQ(a.size() + b.size(), n);
    for (std::size_t i : p.d1)
      for (std::size_t j : p.d2) EXPECT_LE(pool[i].label, pool[j].label);
  }
}

TEST(Partition, EmptySideIsCapacityError) {
  const OfflinePool pool = small_pool(2, 1);
  try {
    build_partition(pool, 0.4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::capacity);
  }
}

TEST(Similarity, SelfIsOne) {
  const OfflinePool pool = small_pool(50, 2);
  const SimilarityIndex idx(fixture().task, pool);
  for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_EQ(idx.similarity(i, i), 1.0);
}

TEST(Similarity, ClosedFormAtTwoSigmaSquared) {
  // Three points on a line: standardized, distances d, d and 2d; median d.
  TaskSpec task = sphere_task(1);
  OfflinePool pool;
  for (double v : {-0.5, 0.0, 0.5}) pool.entries.push_back({Design{{}, {v}}, v, v});
  const SimilarityIndex idx(task, pool);
  const double s2 = idx.sigma() * idx.sigma();
  EXPECT_NEAR(idx.squared_distance(0, 1), s2, 1e-12);
  // the pair (0, 2) sits at 4 sigma^2; check the kernel formula on both
  EXPECT_NEAR(idx.similarity(0, 1), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(idx.similarity(0, 2), std::exp(-2.0), 1e-12);
  EXPECT_NEAR(std::exp(-2.0 * s2 / (2.0 * s2)), 0.367879, 1e-6);
}

TEST(Similarity, SymmetricAndInUnitInterval) {
  const OfflinePool pool = small_pool(100, 3);
  const SimilarityIndex idx(fixture().task, pool);
  Rng rng(9);
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = rng.below(pool.size()), j = rng.below(pool.size());
    EXPECT_EQ(idx.similarity(i, j), idx.similarity(j, i));
    EXPECT_GT(idx.similarity(i, j), 0.0);
    EXPECT_LE(idx.similarity(i, j), 1.0);
  }
}

TEST(Similarity, SigmaIsMedianPairwiseDistance) {
  const OfflinePool pool = small_pool(30, 4);
  const SimilarityIndex idx(fixture().task, pool);
  std::vector<double> d;
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(std::sqrt(idx.squared_distance(i, j)));
  std::sort(d.begin(), d.end());
  const double median = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  EXPECT_DOUBLE_EQ(idx.sigma(), median);
  EXPECT_GT(idx.sigma(), 0.0);
}

TEST(Similarity, FeaturesAreStandardized) {
  const OfflinePool pool = small_pool(60, 5);
  const SimilarityIndex idx(fixture().task, pool);
  const std::size_t F = idx.features(0).size();
  EXPECT_EQ(F, 8u * 3u);
  for (std::size_t f = 0; f < F; ++f) {
    double mean = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) mean += idx.features(i)[f];
    EXPECT_NEAR(mean / static_cast<double>(idx.size()), 0.0, 1e-12);
  }
}

TEST(Similarity, IdenticalFeaturesAreDegenerate) {
  TaskSpec task = sphere_task(1);
  OfflinePool pool;
  for (int i = 0; i < 3; ++i) pool.entries.push_back({Design{{}, {0.25}}, 0.0, 0.0});
  try {
    SimilarityIndex idx(task, pool);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degeneracy);
  }
}

TEST(SftPairs, IdenticalFeatureCandidateRanksFirst) {
  TaskSpec task = sphere_task(1);
  OfflinePool pool;
  for (double v : {-0.9, -0.3, 0.4, 0.1, 0.4}) pool.entries.push_back({Design{{}, {v}}, 0.0, 0.0});
  const SimilarityIndex idx(task, pool);
  const auto top = idx.top_similar(4, {0, 1, 2, 3}, 2);
  EXPECT_EQ(top[0], 2u);
  EXPECT_EQ(top[1], 3u);
}

TEST(SftPairs, ContextMatchesExhaustiveScanOnToyPool) {
  const OfflinePool pool = small_pool(20, 6);
  const Partition part = build_partition(pool);
  const SimilarityIndex idx(fixture().task, pool);
  Rng rng(1);
  const auto pairs = build_sft_pairs(pool, part, idx, 3, 40, 4, rng);
  for (const auto& p : pairs) {
    // brute force: sort all of d1 by (similarity desc, index asc), take 3
    std::vector<std::size_t> cand = part.d1;
    std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
      const double sa = idx.similarity(p.target, a), sb = idx.similarity(p.target, b);
      return sa != sb ? sa > sb : a < b;
    });
    std::vector<std::size_t> want(cand.begin(), cand.begin() + 3);
    std::sort(want.begin(), want.end());
    EXPECT_EQ(p.context, want);
  }
}

TEST(SftPairs, LeakageAndOrderingInvariants) {
  const auto& f = fixture();
  const OfflinePool pool = build_pool(f.data, 500, f.norm);
  const Partition part = build_partition(pool);
  const SimilarityIndex idx(f.task, pool);
  const std::set<std::size_t> d1(part.d1.begin(), part.d1.end()), d2(part.d2.begin(), part.d2.end());
  for (auto mode : {ContextMode::similar, ContextMode::random}) {
    Rng rng(2);
    const auto pairs = build_sft_pairs(pool, part, idx, 7, 300, 4, rng, mode);
    ASSERT_EQ(pairs.size(), 300u);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& p = pairs[k];
      EXPECT_EQ(d2.count(p.target), 1u);
      EXPECT_EQ(p.context.size(), 7u);
      double best = -1e300;
      for (std::size_t c : p.context) {
        EXPECT_EQ(d1.count(c), 1u);
        best = std::max(best, pool[c].label);
      }
      EXPECT_LT(best, pool[p.target].label);
      for (std::size_t i = 1; i < p.context.size(); ++i) EXPECT_LE(pool[p.context[i - 1]].label, pool[p.context[i]].label);
      EXPECT_EQ(p.template_id, static_cast<int>(k % 4));
      EXPECT_FALSE(p.reward.has_value());
    }
  }
}

TEST(SftPairs, TooManyShotsIsCapacityError) {
  const OfflinePool pool = small_pool(10, 7);
  const Partition part = build_partition(pool);
  const SimilarityIndex idx(fixture().task, pool);
  Rng rng(0);
  try {
    build_sft_pairs(pool, part, idx, 9, 5, 1, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::capacity);
  }
}

TEST(RlPairs, RewardArithmetic) {
  TaskSpec task = sphere_task(1);
  OfflinePool pool;
  const std::vector<double> labels = {0.1, 0.5, 0.8};
  for (std::size_t i = 0; i < 3; ++i)
    pool.entries.push_back({Design{{}, {-0.5 + 0.4 * static_cast<double>(i)}}, labels[i], labels[i]});
  const SimilarityIndex idx(task, pool);
  Rng rng(3);
  const RlDataset rl = build_rl_pairs(pool, idx, 1, 6, rng);
  for (const auto& p : rl.pairs) {
    ASSERT_TRUE(p.reward.has_value());
    EXPECT_DOUBLE_EQ(*p.reward, pool[p.target].label - pool[p.context[0]].label);
    EXPECT_EQ(std::count(p.context.begin(), p.context.end(), p.target), 0);
  }
  EXPECT_NEAR(0.8 - 0.5, 0.3, 1e-15);
}

TEST(RlPairs, SignBalanceAndDatasetStd) {
  const auto& f = fixture();
  const OfflinePool pool = build_pool(f.data, 500, f.norm);
  const SimilarityIndex idx(f.task, pool);
  for (auto mode : {ContextMode::similar, ContextMode::random}) {
    Rng rng(5);
    const RlDataset rl = build_rl_pairs(pool, idx, 7, 256, rng, mode, 4);
    ASSERT_EQ(rl.pairs.size(), 256u);
    std::vector<double> r;
    std::size_t pos = 0;
    for (const auto& p : rl.pairs) {
      r.push_back(*p.reward);
      pos += *p.reward > 0.0;
    }
    const double frac = static_cast<double>(pos) / 256.0;
    EXPECT_GE(frac, 0.4);
    EXPECT_LE(frac, 0.6);
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= 256.0;
    double var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    EXPECT_NEAR(rl.reward_std, std::sqrt(var / 256.0), 1e-12);
  }
}

TEST(RlPairs, ZeroRewardSpread) {
  TaskSpec task = sphere_task(1);
  OfflinePool flat;
  for (double v : {-0.5, 0.0, 0.5}) flat.entries.push_back({Design{{}, {v}}, 1.0, 1.0});
  const SimilarityIndex flat_idx(task, flat);
  Rng rng(0);
  // all rewards are zero, so the sign balance can never be met
  try {
    build_rl_pairs(flat, flat_idx, 1, 2, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::capacity);
  }
  // a single pair has a population std of zero
  OfflinePool pool;
  for (double v : {-0.5, 0.0, 0.5}) pool.entries.push_back({Design{{}, {v}}, v, v});
  const SimilarityIndex idx(task, pool);
  try {
    build_rl_pairs(pool, idx, 1, 1, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degeneracy);
  }
}

TEST(Persistence, PoolAndPairsRoundtrip) {
  const auto& f = fixture();
  const OfflinePool pool = build_pool(f.data, 50, f.norm);
  const std::string text = pool_to_jsonl(f.task, pool);
  EXPECT_EQ(text.substr(0, text.find('\n')).find("{\"design\":\""), 0u);
  const OfflinePool back = pool_from_jsonl(f.task, text);
  EXPECT_EQ(pool_to_jsonl(f.task, back), text);
  const Partition part = build_partition(pool);
  const SimilarityIndex idx(f.task, pool);
  Rng rng(1);
  const auto rl = build_rl_pairs(pool, idx, 3, 10, rng);
  const std::string pt = pairs_to_jsonl(rl.pairs);
  EXPECT_EQ(pairs_to_jsonl(pairs_from_jsonl(pt)), pt);
  Rng rng2(1);
  const auto sft = build_sft_pairs(pool, part, idx, 3, 4, 2, rng2);
  EXPECT_NE(pairs_to_jsonl(sft).find("\"reward\":null"), std::string::npos);
}

#pragma once

// Offline pool construction, the D1/D2 split, RBF similarity over
// normalized design features, and the SFT / RL prompt-response pairings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dibo/error.hpp"
#include "dibo/oracle.hpp"
#include "dibo/rng.hpp"

namespace dibo {

struct PoolEntry {
  Design design;
  double label = 0.0;
  double norm = 0.0;
};

/// Label-sorted (ascending) offline dataset.
struct OfflinePool {
  std::vector<PoolEntry> entries;
  std::size_t source_size = 0;

  std::size_t size() const { return entries.size(); }
  const PoolEntry& operator[](std::size_t i) const { return entries[i]; }
};

enum class SubSampling { even, random };

inline void sort_by_label(std::vector<LabeledDesign>& data) {
  std::stable_sort(data.begin(), data.end(), [](const LabeledDesign& a, const LabeledDesign& b) {
    if (a.label != b.label) return a.label < b.label;
    return a.design < b.design;
  });
}

/// Index list for even sub-sampling of N sorted items down to n:
/// round(k (N-1) / (n-1)), collisions bumped to the next unused index.
inline std::vector<std::size_t> even_subsample_indices(std::size_t N, std::size_t n) {
  require(n >= 2, ErrorKind::capacity, "n_pool must be >= 2");
  require(N >= n, ErrorKind::capacity,
          "dataset of " + std::to_string(N) + " cannot supply n_pool=" + std::to_string(n));
  std::vector<std::size_t> idx;
  idx.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto i = static_cast<std::size_t>(
        std::llround(static_cast<double>(k) * static_cast<double>(N - 1) / static_cast<double>(n - 1)));
    if (!idx.empty() && i <= idx.back()) i = idx.back() + 1;
    idx.push_back(i);
  }
  return idx;
}

/// Sorts `dataset` by label and keeps n_pool entries, either evenly spaced
/// along the sorted order or uniformly at random (then re-sorted).
inline OfflinePool build_pool(std::vector<LabeledDesign> dataset, std::size_t n_pool,
                              const NormalizationSpec& normalization, SubSampling mode = SubSampling::even,
                              Rng* rng = nullptr) {
  const std::size_t N = dataset.size();
  require(n_pool >= 2, ErrorKind::capacity, "n_pool must be >= 2");
  require(N >= n_pool, ErrorKind::capacity,
          "dataset of " + std::to_string(N) + " cannot supply n_pool=" + std::to_string(n_pool));
  sort_by_label(dataset);
  std::vector<std::size_t> picks;
  if (mode == SubSampling::even) {
    picks = even_subsample_indices(N, n_pool);
  } else {
    require(rng != nullptr, ErrorKind::config, "random sub-sampling needs an rng");
    picks = rng->sample_without_replacement(N, n_pool);
    std::sort(picks.begin(), picks.end());
  }
  OfflinePool pool;
  pool.source_size = N;
  pool.entries.reserve(n_pool);
  for (std::size_t i : picks) {
    auto& item = dataset[i];
    pool.entries.push_back({std::move(item.design), item.label, normalize(normalization, item.label)});
  }
  return pool;
}

/// Drops the top `fraction` of a dataset by label (keeps the lowest
/// ceil((1 - fraction) N)). Used to make the pool's best strictly sub-optimal.
inline std::vector<LabeledDesign> truncate_top(std::vector<LabeledDesign> dataset, double fraction) {
  require(fraction >= 0.0 && fraction < 1.0, ErrorKind::config, "truncation fraction must be in [0, 1)");
  sort_by_label(dataset);
  const auto keep = static_cast<std::size_t>(
      std::ceil((1.0 - fraction) * static_cast<double>(dataset.size()) - 1e-9));
  dataset.resize(std::max<std::size_t>(keep, 1));
  return dataset;
}

/// Best normalized label in the pool (the last entry, since sorted).
inline double pool_best(const OfflinePool& pool) {
  require(pool.size() > 0, ErrorKind::capacity, "empty pool");
  return pool.entries.back().norm;
}

// ---------------------------------------------------------------------------

struct Partition {
  std::vector<std::size_t> d1;  // lower-label prompt-context pool
  std::vector<std::size_t> d2;  // upper-label response-target pool
};

inline Partition build_partition(const OfflinePool& pool, double ratio = 0.8) {
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::config, "partition ratio must be in (0, 1)");
  const auto n1 = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pool.size())));
  require(n1 >= 1 && n1 < pool.size(), ErrorKind::capacity, "partition leaves D1 or D2 empty");
  Partition p;
  for (std::size_t i = 0; i < pool.size(); ++i) (i < n1 ? p.d1 : p.d2).push_back(i);
  return p;
}

// ---------------------------------------------------------------------------

/// One-hot "logits" for a discrete design: with soft interpolation 0.6, the
/// per-position log-probabilities relative to the first symbol, giving
/// L x (|alphabet| - 1) features.
inline std::vector<double> map_to_logits(const TaskSpec& task, const Design& d) {
  constexpr double kSoft = 0.6;
  const std::size_t A = task.alphabet.size();
  const double off = std::log((1.0 - kSoft) / static_cast<double>(A));
  const double on = std::log(kSoft + (1.0 - kSoft) / static_cast<double>(A));
  std::vector<double> out;
  out.reserve(d.symbols.size() * (A - 1));
  for (int s : d.symbols) {
    const double base = (s == 0) ? on : off;
    for (std::size_t a = 1; a < A; ++a)
      out.push_back(((static_cast<std::size_t>(s) == a) ? on : off) - base);
  }
  return out;
}

inline std::vector<double> raw_features(const TaskSpec& task, const Design& d) {
  if (task.kind == TaskKind::discrete) return map_to_logits(task, d);
  return d.values;
}

class SimilarityIndex {
 public:
  SimilarityIndex() = default;

  /// Standardizes features per dimension over the pool and sets the RBF
  /// bandwidth to the median pairwise Euclidean distance.
  SimilarityIndex(const TaskSpec& task, const OfflinePool& pool) {
    const std::size_t n = pool.size();
    require(n >= 2, ErrorKind::capacity, "similarity index needs >= 2 pool entries");
    for (const auto& e : pool.entries) features_.push_back(raw_features(task, e.design));
    const std::size_t F = features_.front().size();
    for (std::size_t f = 0; f < F; ++f) {
      double mean = 0.0;
      for (const auto& row : features_) mean += row[f];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (const auto& row : features_) var += (row[f] - mean) * (row[f] - mean);
      var /= static_cast<double>(n);
      const double sd = std::sqrt(var);
      for (auto& row : features_) row[f] = sd > 0.0 ? (row[f] - mean) / sd : row[f] - mean;
    }
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) dists.push_back(std::sqrt(squared_distance(i, j)));
    const std::size_t m = dists.size();
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(m / 2), dists.end());
    double median = dists[m / 2];
    if (m % 2 == 0) {
      const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(m / 2));
      median = 0.5 * (median + lower);
    }
    require(median > 0.0, ErrorKind::degeneracy, "median pairwise distance is zero");
    sigma_ = median;
  }

  double sigma() const { return sigma_; }
  std::size_t size() const { return features_.size(); }
  const std::vector<double>& features(std::size_t i) const { return features_[i]; }

  double squared_distance(std::size_t i, std::size_t j) const {
    const auto& a = features_[i];
    const auto& b = features_[j];
    double s = 0.0;
    for (std::size_t f = 0; f < a.size(); ++f) s += (a[f] - b[f]) * (a[f] - b[f]);
    return s;
  }

  /// exp(-||xi - xj||^2 / (2 sigma^2)).
  double similarity(std::size_t i, std::size_t j) const {
    return std::exp(-squared_distance(i, j) / (2.0 * sigma_ * sigma_));
  }

  /// The k candidates most similar to `target`, highest first, ties to the
  /// lower pool index. `target` itself is skipped.
  std::vector<std::size_t> top_similar(std::size_t target, const std::vector<std::size_t>& candidates,
                                       std::size_t k) const {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(candidates.size());
    for (std::size_t c : candidates)
      if (c != target) scored.emplace_back(similarity(target, c), c);
    require(scored.size() >= k, ErrorKind::capacity, "not enough candidates for top-k similarity");
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
    return out;
  }

 private:
  std::vector<std::vector<double>> features_;
  double sigma_ = 0.0;
};

// ---------------------------------------------------------------------------

enum class ContextMode { similar, random };

struct PairSpec {
  std::vector<std::size_t> context;  // ascending label order
  std::size_t target = 0;
  std::optional<double> reward;
  int template_id = 0;
};

struct RlDataset {
  std::vector<PairSpec> pairs;
  double reward_std = 0.0;
};

/// SFT / DA corpus: targets uniform from D2, contexts from D1 (the n_few most
/// similar to the target, or uniform when `mode` is random).
inline std::vector<PairSpec> build_sft_pairs(const OfflinePool& pool, const Partition& partition,
                                             const SimilarityIndex& index, std::size_t n_few,
                                             std::size_t n_pairs, int template_count, Rng& rng,
                                             ContextMode mode = ContextMode::similar) {
  require(n_few >= 1, ErrorKind::config, "n_few must be >= 1");
  require(n_few <= partition.d1.size(), ErrorKind::capacity,
          "n_few=" + std::to_string(n_few) + " exceeds |D1|=" + std::to_string(partition.d1.size()));
  require(template_count >= 1, ErrorKind::config, "need at least one training template");
  require(!partition.d2.empty(), ErrorKind::capacity, "D2 is empty");
  std::vector<std::vector<std::size_t>> cached(pool.size());
  std::vector<PairSpec> out;
  out.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    PairSpec spec;
    spec.target = partition.d2[rng.below(partition.d2.size())];
    if (mode == ContextMode::similar) {
      auto& ctx = cached[spec.target];
      if (ctx.empty()) ctx = index.top_similar(spec.target, partition.d1, n_few);
      spec.context = ctx;
    } else {
      for (std::size_t i : rng.sample_without_replacement(partition.d1.size(), n_few))
        spec.context.push_back(partition.d1[i]);
    }
    std::sort(spec.context.begin(), spec.context.end());
    spec.template_id = static_cast<int>(p % static_cast<std::size_t>(template_count));
    out.push_back(std::move(spec));
  }
  return out;
}

/// Population standard deviation.
inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

/// RL corpus: targets from the whole pool, reward = y(target) - max y(context),
/// rejection-sampled so the positive-reward fraction lands in [0.4, 0.6].
inline RlDataset build_rl_pairs(const OfflinePool& pool, const SimilarityIndex& index, std::size_t n_few,
                                std::size_t n_pairs, Rng& rng, ContextMode mode = ContextMode::similar,
                                int template_count = 1) {
  require(n_few >= 1, ErrorKind::config, "n_few must be >= 1");
  require(pool.size() >= n_few + 1, ErrorKind::capacity, "pool too small for n_few + 1");
  require(n_pairs >= 1, ErrorKind::config, "n_pairs must be >= 1");
  std::vector<std::size_t> all(pool.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto cap = std::max((n_pairs + 1) / 2, static_cast<std::size_t>(std::floor(0.6 * static_cast<double>(n_pairs))));
  std::vector<std::vector<std::size_t>> cached(pool.size());
  RlDataset data;
  std::size_t positives = 0, others = 0, attempts = 0;
  std::vector<double> rewards;
  while (data.pairs.size() < n_pairs) {
    require(++attempts <= 100 * n_pairs, ErrorKind::capacity, "could not balance reward signs for RL pairs");
    PairSpec spec;
    spec.target = rng.below(pool.size());
    if (mode == ContextMode::similar) {
      auto& ctx = cached[spec.target];
      if (ctx.empty()) ctx = index.top_similar(spec.target, all, n_few);
      spec.context = ctx;
    } else {
      for (std::size_t i : rng.sample_without_replacement(pool.size() - 1, n_few))
        spec.context.push_back(i >= spec.target ? i + 1 : i);
    }
    std::sort(spec.context.begin(), spec.context.end());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c : spec.context) best = std::max(best, pool[c].label);
    const double r = pool[spec.target].label - best;
    auto& count = r > 0.0 ? positives : others;
    if (count + 1 > cap) continue;
    ++count;
    spec.reward = r;
    spec.template_id = static_cast<int>(data.pairs.size() % static_cast<std::size_t>(template_count));
    rewards.push_back(r);
    data.pairs.push_back(std::move(spec));
  }
  data.reward_std = population_std(rewards);
  require(data.reward_std > 0.0, ErrorKind::degeneracy, "RL rewards have zero standard deviation");
  return data;
}

// ---------------------------------------------------------------------------
// line-delimited JSON persistence

inline nlohmann::ordered_json design_to_json(const TaskSpec& task, const Design& d) {
  if (task.kind == TaskKind::discrete) return design_symbol_string(task, d);
  return d.values;
}

inline Design design_from_json(const TaskSpec& task, const nlohmann::ordered_json& j) {
  Design d;
  if (task.kind == TaskKind::discrete) {
    d = design_from_symbol_string(task, j.get<std::string>());
  } else {
    d.values = j.get<std::vector<double>>();
  }
  check_design(task, d);
  return d;
}

inline std::string pool_to_jsonl(const TaskSpec& task, const OfflinePool& pool) {
  std::string out;
  for (const auto& e : pool.entries) {
    nlohmann::ordered_json j;
    j["design"] = design_to_json(task, e.design);
    j["label"] = e.label;
    j["norm"] = e.norm;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline OfflinePool pool_from_jsonl(const TaskSpec& task, const std::string& text) {
  OfflinePool pool;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::ordered_json::parse(line);
    pool.entries.push_back({design_from_json(task, j.at("design")), j.at("label").get<double>(),
                            j.at("norm").get<double>()});
  }
  pool.source_size = pool.entries.size();
  return pool;
}

inline std::string pairs_to_jsonl(const std::vector<PairSpec>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["context"] = p.context;
    j["target"] = p.target;
    j["reward"] = p.reward ? nlohmann::ordered_json(*p.reward) : nlohmann::ordered_json(nullptr);
    j["template"] = p.template_id;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PairSpec> pairs_from_jsonl(const std::string& text) {
  std::vector<PairSpec> pairs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::ordered_json::parse(line);
    PairSpec p;
    p.context = j.at("context").get<std::vector<std::size_t>>();
    p.target = j.at("target").get<std::size_t>();
    if (!j.at("reward").is_null()) p.reward = j.at("reward").get<double>();
    p.template_id = j.at("template").get<int>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace dibo

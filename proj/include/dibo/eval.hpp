#pragma once

// Scoring of harvested candidates, baselines, seed aggregation and the
// ranking probe.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dibo/decode.hpp"
#include "dibo/error.hpp"
#include "dibo/model.hpp"
#include "dibo/oracle.hpp"
#include "dibo/pool.hpp"
#include "dibo/rng.hpp"
#include "dibo/text.hpp"
#include "dibo/vocab.hpp"

namespace dibo {

/// Ordered (metric, value) pairs for one seed.
struct ReportRow {
  std::vector<std::pair<std::string, double>> metrics;

  double get(const std::string& name) const {
    for (const auto& [k, v] : metrics)
      if (k == name) return v;
    fail(ErrorKind::config, "report has no metric " + name);
  }
  void set(const std::string& name, double value) {
    for (auto& [k, v] : metrics)
      if (k == name) {
        v = value;
        return;
      }
    metrics.emplace_back(name, value);
  }
};

inline const std::vector<std::size_t>& default_top_ks() {
  static const std::vector<std::size_t> ks = {5, 10, 20};
  return ks;
}

/// Mean of the k largest values (all of them when fewer than k).
inline double top_k_mean(std::vector<double> scores, std::size_t k) {
  require(!scores.empty(), ErrorKind::shape, "top-k of an empty set");
  std::sort(scores.begin(), scores.end(), std::greater<>());
  const std::size_t n = std::min(k, scores.size());
  return std::accumulate(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
         static_cast<double>(n);
}

/// Lower-middle element of the ascending order.
inline double lower_median(std::vector<double> scores) {
  require(!scores.empty(), ErrorKind::shape, "median of an empty set");
  std::sort(scores.begin(), scores.end());
  return scores[(scores.size() - 1) / 2];
}

/// max, median and top-K means of normalized scores.
inline ReportRow evaluate(const std::vector<double>& norm_scores,
                          const std::vector<std::size_t>& ks = default_top_ks()) {
  require(!norm_scores.empty(), ErrorKind::shape, "evaluate() needs at least one candidate");
  ReportRow row;
  row.set("max", *std::max_element(norm_scores.begin(), norm_scores.end()));
  row.set("median", lower_median(norm_scores));
  for (std::size_t k : ks) row.set("top" + std::to_string(k), top_k_mean(norm_scores, k));
  return row;
}

inline ReportRow evaluate(const std::vector<Candidate>& candidates,
                          const std::vector<std::size_t>& ks = default_top_ks()) {
  std::vector<double> s;
  s.reserve(candidates.size());
  for (const auto& c : candidates) s.push_back(c.norm);
  return evaluate(s, ks);
}

/// n designs drawn uniformly from the design space.
inline ReportRow baseline_random(const Oracle& oracle, const NormalizationSpec& spec, std::size_t n, Rng& rng) {
  std::vector<double> s;
  s.reserve(n);
  for (std::size_t i = 0; i < n; ++i) s.push_back(normalize(spec, oracle.score(random_design(oracle.task(), rng))));
  return evaluate(s);
}

inline double baseline_pool_best(const OfflinePool& pool) { return pool_best(pool); }

// ---------------------------------------------------------------------------
// aggregation and CSV

struct Aggregate {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> std;  // population
};

inline Aggregate aggregate(const std::vector<ReportRow>& rows) {
  require(!rows.empty(), ErrorKind::shape, "nothing to aggregate");
  Aggregate a;
  for (const auto& [k, v] : rows.front().metrics) {
    std::vector<double> xs;
    for (const auto& r : rows) xs.push_back(r.get(k));
    a.names.push_back(k);
    a.mean.push_back(std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size()));
    a.std.push_back(population_std(xs));
  }
  return a;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

/// `seed,metric,value` rows followed by seed=mean and seed=std rows.
inline std::string report_csv(const std::vector<std::uint64_t>& seeds, const std::vector<ReportRow>& rows) {
  require(seeds.size() == rows.size(), ErrorKind::shape, "one report row per seed");
  std::string out = "seed,metric,value\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& [k, v] : rows[i].metrics) out += std::to_string(seeds[i]) + "," + k + "," + format_number(v) + "\n";
  if (!rows.empty()) {
    const Aggregate a = aggregate(rows);
    for (std::size_t j = 0; j < a.names.size(); ++j) out += "mean," + a.names[j] + "," + format_number(a.mean[j]) + "\n";
    for (std::size_t j = 0; j < a.names.size(); ++j) out += "std," + a.names[j] + "," + format_number(a.std[j]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// ranking probe

struct ProbeConfig {
  int K = 3;
  std::size_t groups = 500;
  std::uint64_t seed = 0;
  bool shuffle_options = false;  // permute option letters once more after sampling

  void validate() const {
    require(K >= 2 && K <= 5, ErrorKind::config, "probe K must be in [2, 5]");
    require(groups >= 1, ErrorKind::config, "probe needs at least one group");
  }
};

struct ProbeResult {
  int K = 0;
  std::size_t groups = 0;
  double mean_rank = 0.0;
  double random_baseline = 0.0;
  std::vector<double> ranks;
  std::vector<std::size_t> histogram;  // bin b counts ranks in (b, b+1]
};

inline std::size_t factorial(int k) {
  std::size_t f = 1;
  for (int i = 2; i <= k; ++i) f *= static_cast<std::size_t>(i);
  return f;
}

/// Rank of scores[truth] in descending order, ties sharing their average rank.
inline double fractional_rank(const std::vector<double>& scores, std::size_t truth) {
  std::size_t greater = 0, equal = 0;
  for (double s : scores) {
    if (s > scores[truth]) ++greater;
    else if (s == scores[truth]) ++equal;
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(equal - 1) / 2.0;
}

/// Scores every ordering of K pool designs by its one-step log-probability
/// and records the rank of the label-descending ordering. Logits at a fully
/// masked response do not depend on the response, so one forward per group
/// serves all K! orderings.
template <class T>
ProbeResult ranking_probe(const Model<T>& model, const TaskSpec& task, const OfflinePool& pool, const Vocab& vocab,
                          const Delimiters& delims, const ProbeConfig& cfg) {
  cfg.validate();
  require(pool.size() >= static_cast<std::size_t>(cfg.K), ErrorKind::capacity, "pool smaller than probe K");
  Rng rng = make_rng(cfg.seed, fnv1a("probe"));
  const std::size_t perms = factorial(cfg.K);
  ProbeResult res;
  res.K = cfg.K;
  res.groups = cfg.groups;
  res.random_baseline = (static_cast<double>(perms) + 1.0) / 2.0;
  res.histogram.assign(perms, 0);

  std::vector<std::vector<std::size_t>> orders;
  std::vector<std::size_t> order(static_cast<std::size_t>(cfg.K));
  std::iota(order.begin(), order.end(), std::size_t{0});
  do orders.push_back(order);
  while (std::next_permutation(order.begin(), order.end()));

  for (std::size_t g = 0; g < cfg.groups; ++g) {
    auto ids = rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(cfg.K));
    if (cfg.shuffle_options) rng.shuffle(ids);
    std::vector<Design> options;
    for (std::size_t i : ids) options.push_back(pool[i].design);
    // Truth: option letters sorted by label, highest first (pool index breaks ties).
    std::vector<std::size_t> truth(ids.size());
    std::iota(truth.begin(), truth.end(), std::size_t{0});
    std::stable_sort(truth.begin(), truth.end(), [&](std::size_t a, std::size_t b) {
      if (pool[ids[a]].label != pool[ids[b]].label) return pool[ids[a]].label > pool[ids[b]].label;
      return ids[a] > ids[b];
    });

    const std::string prompt = render_probe_prompt(task, options, delims);
    const TokenSeq p = vocab.encode(prompt, prompt.size());
    const std::vector<int> first = vocab.encode(render_ranking(orders.front()));
    const TokenSeq seq = with_masked_response(p, first.size(), vocab.mask_id());
    std::vector<std::size_t> rows(first.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = p.size() + i;
    const Mat<T> logits = model.logits(seq, rows);
    Mat<T> logp(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const T mx = logits.row(r).maxCoeff();
      const T lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
      logp.row(r) = logits.row(r).array() - lse;
    }

    std::vector<double> scores(orders.size());
    std::size_t truth_idx = 0;
    for (std::size_t o = 0; o < orders.size(); ++o) {
      const std::vector<int> resp = vocab.encode(render_ranking(orders[o]));
      require(resp.size() == first.size(), ErrorKind::encoding, "ranking strings differ in token length");
      T s = 0;
      for (std::size_t k = 0; k < resp.size(); ++k) s += logp(static_cast<Eigen::Index>(k), resp[k]);
      scores[o] = static_cast<double>(s);
      if (orders[o] == truth) truth_idx = o;
    }
    const double rank = fractional_rank(scores, truth_idx);
    res.ranks.push_back(rank);
    const auto bin = static_cast<std::size_t>(std::ceil(rank)) - 1;
    ++res.histogram[std::min(bin, perms - 1)];
  }
  res.mean_rank = std::accumulate(res.ranks.begin(), res.ranks.end(), 0.0) / static_cast<double>(res.ranks.size());
  return res;
}

inline std::string probe_csv(const std::vector<ProbeResult>& results) {
  std::string out = "K,groups,mean_rank,random_baseline\n";
  for (const auto& r : results)
    out += std::to_string(r.K) + "," + std::to_string(r.groups) + "," + format_number(r.mean_rank) + "," +
           format_number(r.random_baseline) + "\n";
  return out;
}

}  // namespace dibo

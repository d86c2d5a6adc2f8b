#pragma once

// Candidate generation: one-pass greedy filling of a fully masked response,
// confidence-ordered iterative filling, and dedup harvesting.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "dibo/corpus.hpp"
#include "dibo/error.hpp"
#include "dibo/model.hpp"
#include "dibo/oracle.hpp"
#include "dibo/pool.hpp"
#include "dibo/rng.hpp"
#include "dibo/text.hpp"
#include "dibo/vocab.hpp"

namespace dibo {

/// Index of the largest entry; the lowest index wins ties.
template <class Row>
int argmax_lowest(const Row& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = static_cast<int>(j);
  return best;
}

inline TokenSeq with_masked_response(const TokenSeq& prompt, std::size_t response_len, int mask_id) {
  TokenSeq seq = prompt;
  for (std::size_t i = 0; i < response_len; ++i) {
    seq.ids.push_back(mask_id);
    seq.roles.push_back(Role::response);
  }
  return seq;
}

/// Appends `response_len` masks, runs one forward pass and takes the argmax
/// at every response position.
template <class T>
std::vector<int> greedy_fill(const Model<T>& model, const TokenSeq& prompt, std::size_t response_len, int mask_id) {
  require(response_len >= 1, ErrorKind::shape, "response_len must be >= 1");
  require(prompt.size() + response_len <= static_cast<std::size_t>(model.config().max_len), ErrorKind::shape,
          "prompt plus response exceeds max_len");
  const TokenSeq seq = with_masked_response(prompt, response_len, mask_id);
  std::vector<std::size_t> rows(response_len);
  for (std::size_t i = 0; i < response_len; ++i) rows[i] = prompt.size() + i;
  const Mat<T> logits = model.logits(seq, rows);
  std::vector<int> out(response_len);
  for (std::size_t i = 0; i < response_len; ++i) out[i] = argmax_lowest(logits.row(static_cast<Eigen::Index>(i)));
  return out;
}

/// `rounds` forward passes; each round fixes the ceil(remaining / rounds_left)
/// still-masked positions whose argmax probability is highest (ties go to the
/// earlier position). `per_round`, if given, receives the count fixed per round.
template <class T>
std::vector<int> iterative_fill(const Model<T>& model, const TokenSeq& prompt, std::size_t response_len, int rounds,
                                int mask_id, std::vector<std::size_t>* per_round = nullptr) {
  require(rounds >= 1, ErrorKind::config, "iterative decoding needs at least one round");
  require(response_len >= 1, ErrorKind::shape, "response_len must be >= 1");
  require(prompt.size() + response_len <= static_cast<std::size_t>(model.config().max_len), ErrorKind::shape,
          "prompt plus response exceeds max_len");
  TokenSeq seq = with_masked_response(prompt, response_len, mask_id);
  std::vector<int> out(response_len, mask_id);
  std::vector<bool> fixed(response_len, false);
  std::size_t remaining = response_len;
  if (per_round) per_round->clear();
  for (int r = 0; r < rounds && remaining > 0; ++r) {
    const auto left = static_cast<std::size_t>(rounds - r);
    const std::size_t take = (remaining + left - 1) / left;
    std::vector<std::size_t> open, rows;
    for (std::size_t i = 0; i < response_len; ++i)
      if (!fixed[i]) {
        open.push_back(i);
        rows.push_back(prompt.size() + i);
      }
    const Mat<T> logits = model.logits(seq, rows);
    std::vector<int> best(open.size());
    std::vector<T> conf(open.size());
    for (std::size_t k = 0; k < open.size(); ++k) {
      const auto row = logits.row(static_cast<Eigen::Index>(k));
      best[k] = argmax_lowest(row);
      const T mx = row(best[k]);
      conf[k] = T(1) / (row.array() - mx).exp().sum();  // softmax at the argmax
    }
    std::vector<std::size_t> order(open.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
    for (std::size_t n = 0; n < take; ++n) {
      const std::size_t k = order[n];
      out[open[k]] = best[k];
      fixed[open[k]] = true;
      seq.ids[prompt.size() + open[k]] = best[k];
    }
    remaining -= take;
    if (per_round) per_round->push_back(take);
  }
  return out;
}

// ---------------------------------------------------------------------------
// harvesting

enum class DecodeMode { one_pass, iterative };

inline std::string to_string(DecodeMode m) { return m == DecodeMode::iterative ? "iterative" : "one_pass"; }

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "one_pass") return DecodeMode::one_pass;
  if (s == "iterative") return DecodeMode::iterative;
  fail(ErrorKind::config, "unknown decode mode '" + s + "'");
}

struct HarvestConfig {
  std::size_t n_candidates = 128;
  std::size_t n_few = 7;
  std::size_t max_attempts_multiplier = 50;
  DecodeMode decode_mode = DecodeMode::one_pass;
  int iterative_steps = 8;
  ContextMode context_mode = ContextMode::random;
  bool use_val_templates = false;

  void validate() const {
    require(n_candidates >= 1, ErrorKind::config, "n_candidates must be >= 1");
    require(max_attempts_multiplier >= 1, ErrorKind::config, "max_attempts_multiplier must be >= 1");
    require(n_few >= 1, ErrorKind::config, "n_few must be >= 1");
    require(iterative_steps >= 1, ErrorKind::config, "iterative_steps must be >= 1");
  }
};

struct Candidate {
  Design design;
  double raw = 0.0;
  double norm = 0.0;
  std::size_t prompt_id = 0;
  std::size_t attempt = 0;
  bool clipped = false;
};

struct HarvestResult {
  std::vector<Candidate> candidates;
  std::size_t attempts = 0;
  std::size_t parse_failures = 0;
  std::size_t duplicates = 0;
  std::size_t clipped = 0;
  bool exhausted = false;

  double parse_failure_rate() const {
    return attempts == 0 ? 0.0 : static_cast<double>(parse_failures) / static_cast<double>(attempts);
  }
};

class HarvestExhausted : public Error {
 public:
  HarvestExhausted(const std::string& msg, HarvestResult partial)
      : Error(ErrorKind::harvest_exhausted, msg), partial_(std::move(partial)) {}
  const HarvestResult& partial() const { return partial_; }

 private:
  HarvestResult partial_;
};

/// Everything a harvest needs besides the model.
struct HarvestContext {
  const TaskSpec* task = nullptr;
  const OfflinePool* pool = nullptr;
  const SimilarityIndex* index = nullptr;  // required for context_mode=similar
  const Oracle* oracle = nullptr;
  const NormalizationSpec* normalization = nullptr;
  const TemplateSet* templates = nullptr;
  const Vocab* vocab = nullptr;
  Delimiters delims = Delimiters::for_mode(DelimiterMode::tokens);
};

/// Token length of a rendered response; constant for a task.
inline std::size_t response_token_length(const TaskSpec& task, const Vocab& vocab, const Delimiters& delims) {
  Design probe;
  if (task.kind == TaskKind::discrete) probe.symbols.assign(static_cast<std::size_t>(task.length), 0);
  else
    for (const auto& b : task.bounds) probe.values.push_back(quantize3(b.lower));
  return vocab.encode(render_response(task, probe, delims)).size();
}

/// Inference context ids in ascending label (= pool index) order.
inline std::vector<std::size_t> sample_inference_context(const OfflinePool& pool, const SimilarityIndex* index,
                                                         std::size_t n_few, ContextMode mode, Rng& rng) {
  require(pool.size() >= n_few, ErrorKind::capacity, "pool smaller than n_few");
  std::vector<std::size_t> ids;
  if (mode == ContextMode::random) {
    ids = rng.sample_without_replacement(pool.size(), n_few);
  } else {
    require(index != nullptr, ErrorKind::config, "similar context mode needs a similarity index");
    const std::size_t anchor = rng.below(pool.size());
    std::vector<std::size_t> all(pool.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    ids = index->top_similar(anchor, all, n_few - 1);
    ids.push_back(anchor);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Decodes until n_candidates unique parseable designs are collected or
/// multiplier * n_candidates attempts are spent (then `exhausted` is set).
template <class T>
HarvestResult harvest(const Model<T>& model, const HarvestContext& ctx, const HarvestConfig& cfg, Rng& rng) {
  cfg.validate();
  require(ctx.task && ctx.pool && ctx.oracle && ctx.normalization && ctx.templates && ctx.vocab, ErrorKind::config,
          "incomplete harvest context");
  require(ctx.pool->size() >= 1, ErrorKind::capacity, "empty pool");
  const auto& templates = cfg.use_val_templates ? ctx.templates->val : ctx.templates->train;
  require(!templates.empty(), ErrorKind::template_slot, "no templates available for inference");
  const TaskText words = TaskText::for_task(*ctx.task);
  const std::size_t response_len = response_token_length(*ctx.task, *ctx.vocab, ctx.delims);
  const int mask_id = ctx.vocab->mask_id();
  const std::size_t budget = cfg.max_attempts_multiplier * cfg.n_candidates;

  HarvestResult out;
  std::set<Design> seen;
  while (out.candidates.size() < cfg.n_candidates) {
    if (out.attempts >= budget) {
      out.exhausted = true;
      break;
    }
    const std::size_t attempt = out.attempts++;
    const auto ids = sample_inference_context(*ctx.pool, ctx.index, cfg.n_few, cfg.context_mode, rng);
    const auto& tmpl = templates[rng.below(templates.size())];
    const RenderedExample prompt =
        render_prompt(tmpl, *ctx.task, words, context_entries(*ctx.pool, ids), PromptMode::inference, ctx.delims);
    TokenSeq seq = ctx.vocab->encode(prompt.prompt_text, prompt.prompt_text.size());
    const std::vector<int> response =
        cfg.decode_mode == DecodeMode::one_pass
            ? greedy_fill(model, seq, response_len, mask_id)
            : iterative_fill(model, seq, response_len, cfg.iterative_steps, mask_id);
    const auto parsed = parse_design(*ctx.task, ctx.vocab->decode(response), ctx.delims);
    if (!parsed) {
      ++out.parse_failures;
      continue;
    }
    if (!seen.insert(parsed->design).second) {
      ++out.duplicates;
      continue;
    }
    Candidate c;
    c.design = parsed->design;
    c.raw = ctx.oracle->score(c.design);
    c.norm = normalize(*ctx.normalization, c.raw);
    c.prompt_id = attempt;
    c.attempt = attempt;
    c.clipped = parsed->clipped;
    out.clipped += c.clipped ? 1 : 0;
    out.candidates.push_back(std::move(c));
  }
  return out;
}

/// As harvest(), but running out of attempts throws HarvestExhausted carrying
/// the partial result.
template <class T>
HarvestResult harvest_strict(const Model<T>& model, const HarvestContext& ctx, const HarvestConfig& cfg, Rng& rng) {
  HarvestResult r = harvest(model, ctx, cfg, rng);
  if (r.exhausted) {
    const std::string msg = "harvest collected " + std::to_string(r.candidates.size()) + " of " +
                            std::to_string(cfg.n_candidates) + " candidates in " + std::to_string(r.attempts) +
                            " attempts (" + std::to_string(r.parse_failures) + " parse failures, " +
                            std::to_string(r.duplicates) + " duplicates)";
    throw HarvestExhausted(msg, std::move(r));
  }
  return r;
}

inline std::string harvest_to_jsonl(const TaskSpec& task, const std::vector<Candidate>& candidates) {
  std::string out;
  for (const auto& c : candidates) {
    nlohmann::ordered_json j;
    j["design"] = design_to_json(task, c.design);
    j["raw"] = c.raw;
    j["norm"] = c.norm;
    j["attempt"] = c.attempt;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace dibo

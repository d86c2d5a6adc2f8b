#pragma once

// Masked-reconstruction (DA, SFT) and advantage-weighted one-step (RL)
// objectives, plus the stage loop with gradient accumulation.

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dibo/autograd.hpp"
#include "dibo/error.hpp"
#include "dibo/model.hpp"
#include "dibo/optim.hpp"
#include "dibo/rng.hpp"
#include "dibo/vocab.hpp"

namespace dibo {

enum class Stage { da, sft, rl };
enum class RlWeighting { prob, logprob };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::da: return "da";
    case Stage::sft: return "sft";
    case Stage::rl: return "rl";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "da") return Stage::da;
  if (s == "sft") return Stage::sft;
  if (s == "rl") return Stage::rl;
  fail(ErrorKind::config, "unknown stage '" + s + "'");
}

inline std::string to_string(RlWeighting w) { return w == RlWeighting::logprob ? "logprob" : "prob"; }

inline RlWeighting parse_rl_weighting(const std::string& s) {
  if (s == "prob") return RlWeighting::prob;
  if (s == "logprob") return RlWeighting::logprob;
  fail(ErrorKind::config, "unknown rl_weighting '" + s + "'");
}

// ---------------------------------------------------------------------------
// masking

struct MaskingDraw {
  double t = 1.0;
  std::vector<std::size_t> masked;  // ascending
  TokenSeq corrupted;
};

/// Positions a stage may corrupt: prompt and response for DA, response only
/// for SFT. Pad is never eligible.
inline std::vector<std::size_t> eligible_positions(const TokenSeq& seq, Stage stage) {
  require(stage != Stage::rl, ErrorKind::config, "RL does not use random masking");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Role r = seq.roles[i];
    if (r == Role::response || (stage == Stage::da && r == Role::prompt)) out.push_back(i);
  }
  return out;
}

/// Draw with the masked set and t given explicitly.
inline MaskingDraw make_draw(const TokenSeq& seq, std::vector<std::size_t> masked, double t, int mask_id) {
  require(t > 0.0 && t <= 1.0, ErrorKind::range, "masking level t must lie in (0, 1]");
  require(!masked.empty(), ErrorKind::shape, "a draw must mask at least one position");
  MaskingDraw d;
  d.t = t;
  d.corrupted = seq;
  for (std::size_t p : masked) {
    require(p < seq.size() && seq.roles[p] != Role::pad, ErrorKind::shape, "masked position out of range");
    d.corrupted.ids[p] = mask_id;
  }
  d.masked = std::move(masked);
  return d;
}

/// t ~ U(0,1], then independent Bernoulli(t) per eligible position. An empty
/// pattern is redrawn with the same t up to 100 times, then one eligible
/// position is masked uniformly at random.
inline MaskingDraw draw_mask(const TokenSeq& seq, Stage stage, Rng& rng, int mask_id,
                             std::optional<double> fixed_t = std::nullopt) {
  const auto eligible = eligible_positions(seq, stage);
  require(!eligible.empty(), ErrorKind::shape, "no eligible positions to mask");
  const double t = fixed_t ? *fixed_t : rng.uniform_open_closed();
  std::vector<std::size_t> masked;
  for (int attempt = 0; attempt <= 100 && masked.empty(); ++attempt) {
    if (attempt == 100) {
      masked.push_back(eligible[rng.below(eligible.size())]);
      break;
    }
    for (std::size_t p : eligible)
      if (rng.bernoulli(t)) masked.push_back(p);
  }
  return make_draw(seq, std::move(masked), t, mask_id);
}

// ---------------------------------------------------------------------------
// objectives (recorded on a tape)

/// (1/t) * sum of cross-entropies at masked positions. For SFT only masked
/// response positions count; the prompt is clean input.
template <class T>
Var recon_objective(const Model<T>& model, Tape<T>& tape, const std::vector<Var>& pv, const TokenSeq& clean,
                    const MaskingDraw& draw, Stage stage) {
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t p : draw.masked) {
    if (stage == Stage::sft && clean.roles[p] != Role::response) continue;
    rows.push_back(p);
    targets.push_back(clean.ids[p]);
  }
  require(!rows.empty(), ErrorKind::shape, "draw has no masked positions in the stage's span");
  Var logits = model.forward(tape, pv, draw.corrupted.ids, Model<T>::key_mask(draw.corrupted), rows);
  Var ce = tape.cross_entropy(logits, targets);
  return tape.weighted_sum(ce, std::vector<T>(rows.size(), static_cast<T>(1.0 / draw.t)));
}

/// Response fully masked, prompt clean. Returns (response rows, corrupted seq).
inline std::pair<std::vector<std::size_t>, TokenSeq> mask_response(const TokenSeq& seq, int mask_id) {
  auto rows = seq.positions(Role::response);
  require(!rows.empty(), ErrorKind::shape, "sequence has no response positions");
  TokenSeq corrupted = seq;
  for (std::size_t p : rows) corrupted.ids[p] = mask_id;
  return {std::move(rows), std::move(corrupted)};
}

/// -(1/|o|) * sum_k w(p_k) * (r / sigma), with w = p (default) or log p.
template <class T>
Var rl_objective(const Model<T>& model, Tape<T>& tape, const std::vector<Var>& pv, const TokenSeq& seq,
                 double reward, double reward_std, int mask_id, RlWeighting weighting = RlWeighting::prob) {
  require(reward_std > 0.0, ErrorKind::degeneracy, "reward standard deviation must be positive");
  auto [rows, corrupted] = mask_response(seq, mask_id);
  std::vector<int> targets;
  for (std::size_t p : rows) targets.push_back(seq.ids[p]);
  Var logits = model.forward(tape, pv, corrupted.ids, Model<T>::key_mask(corrupted), rows);
  Var per_token = weighting == RlWeighting::prob ? tape.prob(logits, targets) : tape.log_prob(logits, targets);
  const T w = static_cast<T>(-(reward / reward_std) / static_cast<double>(rows.size()));
  return tape.weighted_sum(per_token, std::vector<T>(rows.size(), w));
}

/// sum_k log p(o_k | q, fully masked o).
template <class T>
Var logprob_objective(const Model<T>& model, Tape<T>& tape, const std::vector<Var>& pv, const TokenSeq& seq,
                      int mask_id) {
  auto [rows, corrupted] = mask_response(seq, mask_id);
  std::vector<int> targets;
  for (std::size_t p : rows) targets.push_back(seq.ids[p]);
  Var logits = model.forward(tape, pv, corrupted.ids, Model<T>::key_mask(corrupted), rows);
  return tape.weighted_sum(tape.log_prob(logits, targets), std::vector<T>(rows.size(), T(1)));
}

// ---------------------------------------------------------------------------
// value-only wrappers

template <class T>
T da_loss(const Model<T>& model, const TokenSeq& clean, const MaskingDraw& draw) {
  Tape<T> tape(false);
  return tape.scalar(recon_objective(model, tape, model.bind(tape), clean, draw, Stage::da));
}

template <class T>
T sft_loss(const Model<T>& model, const TokenSeq& clean, const MaskingDraw& draw) {
  Tape<T> tape(false);
  return tape.scalar(recon_objective(model, tape, model.bind(tape), clean, draw, Stage::sft));
}

template <class T>
T rl_loss(const Model<T>& model, const TokenSeq& seq, double reward, double reward_std, int mask_id,
          RlWeighting weighting = RlWeighting::prob) {
  Tape<T> tape(false);
  return tape.scalar(rl_objective(model, tape, model.bind(tape), seq, reward, reward_std, mask_id, weighting));
}

template <class T>
T one_step_logprob(const Model<T>& model, const TokenSeq& seq, int mask_id) {
  Tape<T> tape(false);
  return tape.scalar(logprob_objective(model, tape, model.bind(tape), seq, mask_id));
}

// ---------------------------------------------------------------------------
// gradients

template <class T>
struct LossGrad {
  T loss{};
  std::vector<Mat<T>> grads;
};

/// Loss and gradient w.r.t. every parameter tensor (zero where unused).
template <class T, class F>
LossGrad<T> loss_and_grad(const Model<T>& model, F&& objective, const std::string& context = "") {
  Tape<T> tape(true);
  const auto pv = model.bind(tape);
  Var loss = objective(tape, pv);
  LossGrad<T> out;
  out.loss = tape.scalar(loss);
  require(std::isfinite(static_cast<double>(out.loss)), ErrorKind::numeric,
          "non-finite loss" + (context.empty() ? std::string() : " in " + context));
  tape.backward(loss);
  out.grads.reserve(pv.size());
  for (Var v : pv) out.grads.push_back(tape.grad(v));
  return out;
}

// ---------------------------------------------------------------------------
// stage loop

struct StageConfig {
  Stage stage = Stage::da;
  double lr = 1e-3;
  long steps = 1;
  int grad_accum = 1;
  int batch = 1;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  long warmup_steps = 100;
  double grad_clip = 1.0;  // global L2 norm bound per step; 0 disables
  RlWeighting rl_weighting = RlWeighting::prob;

  void validate() const {
    require(steps >= 1, ErrorKind::config, "steps must be >= 1");
    require(lr > 0.0, ErrorKind::config, "lr must be positive");
    require(grad_accum >= 1 && batch >= 1, ErrorKind::config, "grad_accum and batch must be >= 1");
    require(grad_clip >= 0.0, ErrorKind::config, "grad_clip must be >= 0");
  }
};

/// Encoded training sequences for one stage. Rewards are set for RL only.
struct StageData {
  std::vector<TokenSeq> examples;
  std::vector<double> rewards;
  double reward_std = 0.0;
};

struct LossRecord {
  long step;
  double loss;
  double lr;
};

inline void write_loss_header(std::ostream& out) { out << "step,stage,loss,lr\n"; }

/// Rescales `grads` in place so their joint L2 norm is at most `bound`.
/// Returns the norm before scaling.
template <class T>
double clip_global_norm(std::vector<Mat<T>>& grads, double bound) {
  double sq = 0.0;
  for (const auto& g : grads) sq += static_cast<double>(g.squaredNorm());
  const double norm = std::sqrt(sq);
  if (bound > 0.0 && norm > bound) {
    const T scale = static_cast<T>(bound / norm);
    for (auto& g : grads) g *= scale;
  }
  return norm;
}

/// Runs cfg.steps optimizer steps. Each step averages the loss over
/// grad_accum micro-batches of `batch` examples drawn uniformly with
/// replacement, then clips the averaged gradient to cfg.grad_clip. A
/// numeric error leaves `model` at its last good state.
template <class T>
std::vector<LossRecord> run_stage(const StageConfig& cfg, const StageData& data, Model<T>& model, int mask_id,
                                  std::ostream* log = nullptr) {
  cfg.validate();
  require(!data.examples.empty(), ErrorKind::config, "stage " + to_string(cfg.stage) + " has no examples");
  if (cfg.stage == Stage::rl)
    require(data.rewards.size() == data.examples.size(), ErrorKind::config, "RL examples need rewards");
  Rng rng = make_rng(cfg.seed, fnv1a("stage:" + to_string(cfg.stage)));
  AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  oc.warmup_steps = cfg.warmup_steps;
  AdamW<T> opt(oc, model.params());
  const int per_step = cfg.batch * cfg.grad_accum;
  const T inv = static_cast<T>(1.0 / per_step);
  std::vector<LossRecord> records;
  std::vector<Mat<T>> acc;
  for (const auto& p : model.params()) acc.push_back(Mat<T>::Zero(p.rows(), p.cols()));
  for (long step = 1; step <= cfg.steps; ++step) {
    for (auto& g : acc) g.setZero();
    double total = 0.0;
    for (int k = 0; k < per_step; ++k) {
      const std::size_t i = rng.below(data.examples.size());
      const TokenSeq& seq = data.examples[i];
      const std::string where = to_string(cfg.stage) + " step " + std::to_string(step);
      LossGrad<T> lg;
      if (cfg.stage == Stage::rl) {
        lg = loss_and_grad(
            model,
            [&](Tape<T>& tape, const std::vector<Var>& pv) {
              return rl_objective(model, tape, pv, seq, data.rewards[i], data.reward_std, mask_id, cfg.rl_weighting);
            },
            where);
      } else {
        const MaskingDraw draw = draw_mask(seq, cfg.stage, rng, mask_id);
        lg = loss_and_grad(
            model,
            [&](Tape<T>& tape, const std::vector<Var>& pv) {
              return recon_objective(model, tape, pv, seq, draw, cfg.stage);
            },
            where);
      }
      total += static_cast<double>(lg.loss);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += inv * lg.grads[j];
    }
    clip_global_norm(acc, cfg.grad_clip);
    const double lr = opt.step(model.params(), acc);
    const double mean = total / per_step;
    records.push_back({step, mean, lr});
    if (log) {
      *log << step << ',' << to_string(cfg.stage) << ',' << mean << ',' << lr << '\n';
      log->flush();
    }
  }
  return records;
}

}  // namespace dibo

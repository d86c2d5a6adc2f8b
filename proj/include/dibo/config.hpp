#pragma once

// Run configuration: one JSON document, unknown keys rejected.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dibo/decode.hpp"
#include "dibo/error.hpp"
#include "dibo/eval.hpp"
#include "dibo/model.hpp"
#include "dibo/oracle.hpp"
#include "dibo/pool.hpp"
#include "dibo/text.hpp"
#include "dibo/train.hpp"

namespace dibo {

using Json = nlohmann::ordered_json;

struct TaskBlock {
  std::string oracle_id = "pwm_epistasis";  // pwm_epistasis | sphere | lookup
  std::uint64_t seed = 0;
  int length = 8;
  std::vector<std::string> alphabet = {"A", "C", "G", "T"};
  double lower = -1.0;
  double upper = 1.0;
  std::string lookup_csv;
  bool negate_labels = false;
};

struct PoolBlock {
  std::size_t n_pool = 500;
  SubSampling sub_sampling = SubSampling::even;
  double exclude_top_fraction = 0.0;
  std::size_t dataset_size = 0;  // 0: full space (discrete only)
  double partition_ratio = 0.8;
};

struct CorpusBlock {
  std::size_t n_few = 7;
  std::size_t n_sft_pairs = 512;
  std::size_t n_rl_pairs = 256;
  std::string templates_dir;  // empty: built-in wordings
  ContextMode context_mode = ContextMode::similar;
};

struct StageBlock {
  bool enabled = true;
  StageConfig cfg;
};

struct EvalBlock {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t baseline_random_n = 128;
  bool probe = false;
  std::vector<int> probe_ks = {2, 3};
  std::size_t probe_groups = 500;
};

struct RunConfig {
  TaskBlock task;
  PoolBlock pool;
  CorpusBlock corpus;
  ModelConfig model;
  StageBlock da, sft, rl;
  HarvestConfig harvest;
  EvalBlock eval;
  DelimiterMode delimiter_mode = DelimiterMode::tokens;

  RunConfig() {
    da.cfg.stage = Stage::da;
    da.cfg.lr = 1e-3;
    da.cfg.steps = 512;
    da.cfg.grad_accum = 4;
    da.cfg.batch = 4;
    sft.cfg = da.cfg;
    sft.cfg.stage = Stage::sft;
    rl.cfg = da.cfg;
    rl.cfg.stage = Stage::rl;
    rl.cfg.lr = 5e-6;
    rl.cfg.steps = 128;
  }

  StageBlock& stage(Stage s) { return s == Stage::da ? da : s == Stage::sft ? sft : rl; }
  const StageBlock& stage(Stage s) const { return s == Stage::da ? da : s == Stage::sft ? sft : rl; }

  void validate() const {
    require(pool.n_pool >= 2, ErrorKind::config, "pool.n_pool must be >= 2");
    require(pool.exclude_top_fraction >= 0.0 && pool.exclude_top_fraction < 1.0, ErrorKind::config,
            "pool.exclude_top_fraction must lie in [0, 1)");
    require(pool.partition_ratio > 0.0 && pool.partition_ratio < 1.0, ErrorKind::config,
            "pool.partition_ratio must lie in (0, 1)");
    require(corpus.n_few >= 1, ErrorKind::config, "corpus.n_few must be >= 1");
    require(!eval.seeds.empty(), ErrorKind::config, "eval.seeds must not be empty");
    for (Stage s : {Stage::da, Stage::sft, Stage::rl})
      if (stage(s).enabled) stage(s).cfg.validate();
    harvest.validate();
    if (!corpus.templates_dir.empty())
      require(std::filesystem::is_directory(corpus.templates_dir), ErrorKind::config,
              "corpus.templates_dir does not exist: " + corpus.templates_dir);
    if (task.oracle_id == "lookup")
      require(std::filesystem::exists(task.lookup_csv), ErrorKind::config,
              "task.lookup_csv does not exist: " + task.lookup_csv);
  }
};

// ---------------------------------------------------------------------------
// JSON reading with unknown-key rejection

namespace detail {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j.is_object(), ErrorKind::config, path_ + " must be a JSON object");
  }

  template <class V>
  void get(const char* key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const Json& at(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      require(used_.count(key) != 0, ErrorKind::config, "unknown key " + path_ + "." + key);
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline ContextMode parse_context_mode(const std::string& s) {
  if (s == "similar") return ContextMode::similar;
  if (s == "random") return ContextMode::random;
  fail(ErrorKind::config, "unknown context_mode '" + s + "'");
}

inline SubSampling parse_sub_sampling(const std::string& s) {
  if (s == "even") return SubSampling::even;
  if (s == "random") return SubSampling::random;
  fail(ErrorKind::config, "unknown sub_sampling '" + s + "'");
}

inline DelimiterMode parse_delimiter_mode(const std::string& s) {
  if (s == "tokens") return DelimiterMode::tokens;
  if (s == "plain_text") return DelimiterMode::plain_text;
  fail(ErrorKind::config, "unknown delimiter_mode '" + s + "'");
}

inline void read_stage(Reader& parent, const char* key, StageBlock& block) {
  if (!parent.has(key)) return;
  Reader r(parent.at(key), parent.child(key));
  r.get("enabled", block.enabled);
  r.get("lr", block.cfg.lr);
  r.get("steps", block.cfg.steps);
  r.get("grad_accum", block.cfg.grad_accum);
  r.get("batch", block.cfg.batch);
  r.get("weight_decay", block.cfg.weight_decay);
  r.get("warmup_steps", block.cfg.warmup_steps);
  r.get("grad_clip", block.cfg.grad_clip);
  if (block.cfg.stage == Stage::rl) {
    std::string w = to_string(block.cfg.rl_weighting);
    r.get("rl_weighting", w);
    block.cfg.rl_weighting = parse_rl_weighting(w);
  }
  r.finish();
}

}  // namespace detail

inline std::string to_string(ContextMode m) { return m == ContextMode::random ? "random" : "similar"; }
inline std::string to_string(SubSampling m) { return m == SubSampling::random ? "random" : "even"; }
inline std::string to_string(DelimiterMode m) { return m == DelimiterMode::plain_text ? "plain_text" : "tokens"; }

inline RunConfig config_from_json(const Json& j) {
  using detail::Reader;
  RunConfig c;
  Reader root(j, "config");
  if (root.has("task")) {
    Reader r(root.at("task"), "task");
    r.get("oracle_id", c.task.oracle_id);
    r.get("seed", c.task.seed);
    r.get("length", c.task.length);
    r.get("alphabet", c.task.alphabet);
    r.get("lower", c.task.lower);
    r.get("upper", c.task.upper);
    r.get("lookup_csv", c.task.lookup_csv);
    r.get("negate_labels", c.task.negate_labels);
    r.finish();
  }
  if (root.has("pool")) {
    Reader r(root.at("pool"), "pool");
    r.get("n_pool", c.pool.n_pool);
    std::string ss = to_string(c.pool.sub_sampling);
    r.get("sub_sampling", ss);
    c.pool.sub_sampling = detail::parse_sub_sampling(ss);
    r.get("exclude_top_fraction", c.pool.exclude_top_fraction);
    r.get("dataset_size", c.pool.dataset_size);
    r.get("partition_ratio", c.pool.partition_ratio);
    r.finish();
  }
  if (root.has("corpus")) {
    Reader r(root.at("corpus"), "corpus");
    r.get("n_few", c.corpus.n_few);
    r.get("n_sft_pairs", c.corpus.n_sft_pairs);
    r.get("n_rl_pairs", c.corpus.n_rl_pairs);
    r.get("templates_dir", c.corpus.templates_dir);
    std::string cm = to_string(c.corpus.context_mode);
    r.get("context_mode", cm);
    c.corpus.context_mode = detail::parse_context_mode(cm);
    r.finish();
  }
  if (root.has("model")) c.model = model_config_from_json(root.at("model"));
  if (root.has("stages")) {
    Reader r(root.at("stages"), "stages");
    detail::read_stage(r, "da", c.da);
    detail::read_stage(r, "sft", c.sft);
    detail::read_stage(r, "rl", c.rl);
    r.finish();
  }
  if (root.has("harvest")) {
    Reader r(root.at("harvest"), "harvest");
    r.get("n_candidates", c.harvest.n_candidates);
    r.get("max_attempts_multiplier", c.harvest.max_attempts_multiplier);
    std::string dm = to_string(c.harvest.decode_mode);
    r.get("decode_mode", dm);
    c.harvest.decode_mode = parse_decode_mode(dm);
    r.get("iterative_steps", c.harvest.iterative_steps);
    std::string cm = to_string(c.harvest.context_mode);
    r.get("context_mode", cm);
    c.harvest.context_mode = detail::parse_context_mode(cm);
    r.get("use_val_templates", c.harvest.use_val_templates);
    r.finish();
  }
  if (root.has("eval")) {
    Reader r(root.at("eval"), "eval");
    r.get("seeds", c.eval.seeds);
    r.get("baseline_random_n", c.eval.baseline_random_n);
    r.get("probe", c.eval.probe);
    r.get("probe_ks", c.eval.probe_ks);
    r.get("probe_groups", c.eval.probe_groups);
    r.finish();
  }
  std::string dm = to_string(c.delimiter_mode);
  root.get("delimiter_mode", dm);
  c.delimiter_mode = detail::parse_delimiter_mode(dm);
  root.finish();
  c.harvest.n_few = c.corpus.n_few;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, "config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline Json stage_to_json(const StageBlock& b) {
  Json j = {{"enabled", b.enabled},       {"lr", b.cfg.lr},
            {"steps", b.cfg.steps},       {"grad_accum", b.cfg.grad_accum},
            {"batch", b.cfg.batch},       {"weight_decay", b.cfg.weight_decay},
            {"warmup_steps", b.cfg.warmup_steps}, {"grad_clip", b.cfg.grad_clip}};
  if (b.cfg.stage == Stage::rl) j["rl_weighting"] = to_string(b.cfg.rl_weighting);
  return j;
}

/// Fully resolved configuration; feeding it back yields the same RunConfig.
inline Json to_json(const RunConfig& c) {
  Json j;
  j["task"] = {{"oracle_id", c.task.oracle_id}, {"seed", c.task.seed},     {"length", c.task.length},
               {"alphabet", c.task.alphabet},   {"lower", c.task.lower},   {"upper", c.task.upper},
               {"lookup_csv", c.task.lookup_csv}, {"negate_labels", c.task.negate_labels}};
  j["pool"] = {{"n_pool", c.pool.n_pool},
               {"sub_sampling", to_string(c.pool.sub_sampling)},
               {"exclude_top_fraction", c.pool.exclude_top_fraction},
               {"dataset_size", c.pool.dataset_size},
               {"partition_ratio", c.pool.partition_ratio}};
  j["corpus"] = {{"n_few", c.corpus.n_few},
                 {"n_sft_pairs", c.corpus.n_sft_pairs},
                 {"n_rl_pairs", c.corpus.n_rl_pairs},
                 {"templates_dir", c.corpus.templates_dir},
                 {"context_mode", to_string(c.corpus.context_mode)}};
  j["model"] = to_json(c.model);
  j["stages"] = {{"da", stage_to_json(c.da)}, {"sft", stage_to_json(c.sft)}, {"rl", stage_to_json(c.rl)}};
  j["harvest"] = {{"n_candidates", c.harvest.n_candidates},
                  {"max_attempts_multiplier", c.harvest.max_attempts_multiplier},
                  {"decode_mode", to_string(c.harvest.decode_mode)},
                  {"iterative_steps", c.harvest.iterative_steps},
                  {"context_mode", to_string(c.harvest.context_mode)},
                  {"use_val_templates", c.harvest.use_val_templates}};
  j["eval"] = {{"seeds", c.eval.seeds},
               {"baseline_random_n", c.eval.baseline_random_n},
               {"probe", c.eval.probe},
               {"probe_ks", c.eval.probe_ks},
               {"probe_groups", c.eval.probe_groups}};
  j["delimiter_mode"] = to_string(c.delimiter_mode);
  return j;
}

}  // namespace dibo

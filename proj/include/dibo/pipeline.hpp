#pragma once

// End-to-end orchestration: data generation, enabled training stages in
// DA -> SFT -> RL order, harvesting, evaluation and the optional ranking
// probe, with every artifact written under one run directory.
//
// Layout of a run directory:
//   config.json               resolved configuration
//   vocab.tsv                 tokenizer
//   report.csv                per-seed and aggregate metrics
//   seed_<s>/pool.jsonl       offline pool
//   seed_<s>/sft_pairs.jsonl  DA/SFT pair specs
//   seed_<s>/rl_pairs.jsonl   RL pair specs (RL enabled only)
//   seed_<s>/ckpt_<chain>.bin checkpoint after each stage, e.g. ckpt_da_sft.bin
//   seed_<s>/loss_<chain>.csv per-step losses
//   seed_<s>/harvest.jsonl    harvested candidates
//   seed_<s>/probe.csv        ranking probe (when enabled)
//   failure.json              written only when a phase fails

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dibo/config.hpp"
#include "dibo/corpus.hpp"
#include "dibo/decode.hpp"
#include "dibo/eval.hpp"
#include "dibo/model.hpp"
#include "dibo/oracle.hpp"
#include "dibo/pool.hpp"
#include "dibo/text.hpp"
#include "dibo/train.hpp"
#include "dibo/vocab.hpp"

namespace dibo {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// runs/<YYYYmmdd-HHMMSS>
inline fs::path timestamped_run_dir(const fs::path& root = "runs") {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return root / name.str();
}

// ---------------------------------------------------------------------------
// task and data

struct TaskSetup {
  TaskSpec task;
  Oracle oracle;
  NormalizationSpec normalization;
  TemplateSet templates;
  Delimiters delims;
  Vocab vocab;
};

inline TaskSpec task_from_config(const TaskBlock& b) {
  TaskSpec t;
  t.oracle_id = b.oracle_id;
  t.seed = b.seed;
  t.length = b.length;
  if (b.oracle_id == "sphere") {
    t.kind = TaskKind::continuous;
    t.bounds.assign(static_cast<std::size_t>(b.length), Bounds{b.lower, b.upper});
  } else {
    require(b.oracle_id == "pwm_epistasis" || b.oracle_id == "lookup", ErrorKind::config,
            "unknown oracle_id '" + b.oracle_id + "'");
    t.kind = TaskKind::discrete;
    t.alphabet = b.alphabet;
  }
  t.validate();
  return t;
}

inline TaskSetup make_task_setup(const RunConfig& cfg) {
  const TaskSpec task = task_from_config(cfg.task);
  Oracle oracle = cfg.task.oracle_id == "lookup"
                      ? Oracle::from_lookup_csv(task, cfg.task.lookup_csv, cfg.task.negate_labels)
                      : Oracle::make(task);
  const NormalizationSpec norm = oracle.enumerate_extrema();
  TemplateSet templates =
      cfg.corpus.templates_dir.empty() ? TemplateSet::builtin() : TemplateSet::load_dir(cfg.corpus.templates_dir);
  templates.validate();
  Vocab vocab = build_vocab(task, templates, cfg.delimiter_mode);
  return {task, std::move(oracle), norm, std::move(templates), Delimiters::for_mode(cfg.delimiter_mode),
          std::move(vocab)};
}

/// Labeled source dataset: the full space (discrete, dataset_size 0) or a
/// fixed random sample, minus the top `exclude_top_fraction` by label.
inline std::vector<LabeledDesign> source_dataset(const RunConfig& cfg, const TaskSetup& s) {
  std::vector<LabeledDesign> data;
  if (cfg.pool.dataset_size == 0) {
    data = full_space_dataset(s.oracle);
  } else {
    Rng rng = make_rng(cfg.task.seed, fnv1a("dataset"));
    data = sampled_dataset(s.oracle, cfg.pool.dataset_size, rng);
  }
  if (cfg.pool.exclude_top_fraction > 0.0) data = truncate_top(std::move(data), cfg.pool.exclude_top_fraction);
  return data;
}

inline OfflinePool make_pool(const RunConfig& cfg, const TaskSetup& s, const std::vector<LabeledDesign>& data,
                             std::uint64_t seed) {
  Rng rng = make_rng(seed, fnv1a("pool"));
  return build_pool(data, cfg.pool.n_pool, s.normalization, cfg.pool.sub_sampling, &rng);
}

// ---------------------------------------------------------------------------
// per-seed steps

/// Pool, partition, similarity index and pair datasets for one seed.
struct SeedData {
  OfflinePool pool;
  Partition partition;
  SimilarityIndex index;
  std::vector<PairSpec> sft_pairs;
  RlDataset rl;

  SeedData(const RunConfig& cfg, const TaskSetup& s, const std::vector<LabeledDesign>& data, std::uint64_t seed)
      : pool(make_pool(cfg, s, data, seed)),
        partition(build_partition(pool, cfg.pool.partition_ratio)),
        index(s.task, pool) {
    const int n_templates = static_cast<int>(s.templates.train.size());
    Rng sft_rng = make_rng(seed, fnv1a("sft_pairs"));
    sft_pairs = build_sft_pairs(pool, partition, index, cfg.corpus.n_few, cfg.corpus.n_sft_pairs, n_templates,
                                sft_rng, cfg.corpus.context_mode);
    if (cfg.rl.enabled) {
      Rng rl_rng = make_rng(seed, fnv1a("rl_pairs"));
      rl = build_rl_pairs(pool, index, cfg.corpus.n_few, cfg.corpus.n_rl_pairs, rl_rng, cfg.corpus.context_mode,
                          n_templates);
    }
  }

  void write(const TaskSpec& task, const fs::path& dir) const {
    fs::create_directories(dir);
    write_text(dir / "pool.jsonl", pool_to_jsonl(task, pool));
    write_text(dir / "sft_pairs.jsonl", pairs_to_jsonl(sft_pairs));
    if (!rl.pairs.empty()) write_text(dir / "rl_pairs.jsonl", pairs_to_jsonl(rl.pairs));
  }
};

/// Phase label used in failure records.
struct Progress {
  std::string phase;
};

/// Enabled stages up to and including `upto`, joined by '_' (e.g. "da_sft").
/// Empty when `upto` and everything before it is disabled.
inline std::string stage_chain(const RunConfig& cfg, Stage upto) {
  std::string chain;
  for (Stage s : {Stage::da, Stage::sft, Stage::rl}) {
    if (cfg.stage(s).enabled) {
      if (!chain.empty()) chain += "_";
      chain += to_string(s);
    }
    if (s == upto) break;
  }
  return chain;
}

inline fs::path checkpoint_path(const RunConfig& cfg, const fs::path& dir, Stage stage) {
  return dir / ("ckpt_" + stage_chain(cfg, stage) + ".bin");
}

inline fs::path seed_dir(const fs::path& run_dir, std::uint64_t seed) {
  return run_dir / ("seed_" + std::to_string(seed));
}

template <class T>
Model<T> initial_model(const RunConfig& cfg, const TaskSetup& s, std::uint64_t seed) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(s.vocab.size());
  Rng init_rng = make_rng(seed, fnv1a("init"));
  return Model<T>(mc, init_rng);
}

/// The model as it stands after every enabled stage up to `upto`: the latest
/// existing checkpoint in the chain, else the seeded initialization.
template <class T>
Model<T> model_after(const RunConfig& cfg, const TaskSetup& s, std::uint64_t seed, const fs::path& dir, Stage upto) {
  std::vector<Stage> chain;
  for (Stage st : {Stage::da, Stage::sft, Stage::rl}) {
    if (cfg.stage(st).enabled) chain.push_back(st);
    if (st == upto) break;
  }
  if (chain.empty()) return initial_model<T>(cfg, s, seed);
  const fs::path ckpt = checkpoint_path(cfg, dir, chain.back());
  require(fs::exists(ckpt), ErrorKind::io, "missing checkpoint " + ckpt.string() + "; run the earlier stages first");
  Model<T> m = Model<T>::load(ckpt.string());
  require(m.config().vocab_size == static_cast<int>(s.vocab.size()), ErrorKind::shape,
          "checkpoint vocabulary size does not match the task vocabulary");
  return m;
}

/// Trains one stage in place and writes its checkpoint and loss log. An
/// existing checkpoint is loaded instead (resume).
template <class T>
void train_stage(const RunConfig& cfg, const TaskSetup& s, const SeedData& sd, std::uint64_t seed,
                 const fs::path& dir, Stage st, Model<T>& model, std::ostream* log) {
  require(cfg.stage(st).enabled, ErrorKind::config, "stage " + to_string(st) + " is disabled in the config");
  fs::create_directories(dir);
  const std::string chain = stage_chain(cfg, st);
  const fs::path ckpt = checkpoint_path(cfg, dir, st);
  if (fs::exists(ckpt)) {
    if (log) *log << "[seed " << seed << "] resume: " << ckpt.filename().string() << std::endl;
    model = Model<T>::load(ckpt.string());
    return;
  }
  const auto max_len = static_cast<std::size_t>(cfg.model.max_len);
  const StageData data =
      st == Stage::rl ? encode_corpus(s.task, sd.pool, sd.rl.pairs, s.templates, s.vocab, s.delims, max_len,
                                      PromptMode::rl, sd.rl.reward_std)
                      : encode_corpus(s.task, sd.pool, sd.sft_pairs, s.templates, s.vocab, s.delims, max_len,
                                      PromptMode::sft);
  StageConfig sc = cfg.stage(st).cfg;
  sc.stage = st;
  sc.seed = seed;
  std::ofstream loss_log(dir / ("loss_" + chain + ".csv"));
  loss_log << std::setprecision(10);
  write_loss_header(loss_log);
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = run_stage(sc, data, model, s.vocab.mask_id(), &loss_log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log)
    *log << "[seed " << seed << "] " << to_string(st) << ": " << records.size() << " steps, final loss "
         << format_number(records.back().loss) << ", " << format_number(secs) << " s" << std::endl;
  const fs::path tmp = dir / ("ckpt_" + chain + ".bin.tmp");
  model.save(tmp.string());
  fs::rename(tmp, ckpt);
}

inline HarvestContext harvest_context(const TaskSetup& s, const SeedData& sd) {
  HarvestContext h;
  h.task = &s.task;
  h.pool = &sd.pool;
  h.index = &sd.index;
  h.oracle = &s.oracle;
  h.normalization = &s.normalization;
  h.templates = &s.templates;
  h.vocab = &s.vocab;
  h.delims = s.delims;
  return h;
}

inline Json harvest_stats_json(const HarvestResult& h) {
  return {{"candidates", h.candidates.size()}, {"attempts", h.attempts},   {"parse_failures", h.parse_failures},
          {"duplicates", h.duplicates},        {"clipped", h.clipped},     {"exhausted", h.exhausted}};
}

template <class T>
HarvestResult harvest_seed(const RunConfig& cfg, const TaskSetup& s, const SeedData& sd, std::uint64_t seed,
                           const Model<T>& model, const fs::path& dir, std::ostream* log) {
  Rng rng = make_rng(seed, fnv1a("harvest"));
  HarvestResult h = harvest(model, harvest_context(s, sd), cfg.harvest, rng);
  write_text(dir / "harvest.jsonl", harvest_to_jsonl(s.task, h.candidates));
  write_text(dir / "harvest_stats.json", harvest_stats_json(h).dump(2) + "\n");
  if (log)
    *log << "[seed " << seed << "] harvest: " << h.candidates.size() << " candidates, " << h.attempts
         << " attempts, " << h.parse_failures << " parse failures" << (h.exhausted ? " (exhausted)" : "")
         << std::endl;
  return h;
}

/// Reads harvest.jsonl and harvest_stats.json back.
inline HarvestResult load_harvest(const TaskSpec& task, const fs::path& dir) {
  HarvestResult h;
  std::istringstream in(read_text(dir / "harvest.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    Candidate c;
    c.design = design_from_json(task, j.at("design"));
    c.raw = j.at("raw").get<double>();
    c.norm = j.at("norm").get<double>();
    c.attempt = c.prompt_id = j.at("attempt").get<std::size_t>();
    h.candidates.push_back(std::move(c));
  }
  if (fs::exists(dir / "harvest_stats.json")) {
    const Json st = Json::parse(read_text(dir / "harvest_stats.json"));
    h.attempts = st.at("attempts").get<std::size_t>();
    h.parse_failures = st.at("parse_failures").get<std::size_t>();
    h.duplicates = st.at("duplicates").get<std::size_t>();
    h.clipped = st.at("clipped").get<std::size_t>();
    h.exhausted = st.at("exhausted").get<bool>();
  }
  return h;
}

inline const char* const kScoreMetrics[] = {"max", "median", "top5", "top10", "top20"};

/// Candidate metrics, harvest statistics and both baselines for one seed.
inline ReportRow evaluate_seed(const RunConfig& cfg, const TaskSetup& s, const OfflinePool& pool,
                               const HarvestResult& h, std::uint64_t seed) {
  ReportRow row;
  if (h.candidates.empty()) {
    for (const char* m : kScoreMetrics) row.set(m, std::numeric_limits<double>::quiet_NaN());
  } else {
    row = evaluate(h.candidates);
  }
  row.set("n_valid", static_cast<double>(h.candidates.size()));
  row.set("attempts", static_cast<double>(h.attempts));
  row.set("parse_failure_rate", h.parse_failure_rate());
  row.set("duplicates", static_cast<double>(h.duplicates));
  row.set("clipped", static_cast<double>(h.clipped));
  row.set("exhausted", h.exhausted ? 1.0 : 0.0);
  row.set("d_best", baseline_pool_best(pool));
  Rng base_rng = make_rng(seed, fnv1a("baseline_random"));
  for (const auto& [k, v] : baseline_random(s.oracle, s.normalization, cfg.eval.baseline_random_n, base_rng).metrics)
    row.set("random_" + k, v);
  return row;
}

template <class T>
std::vector<ProbeResult> probe_seed(const RunConfig& cfg, const TaskSetup& s, const OfflinePool& pool,
                                    std::uint64_t seed, const Model<T>& model) {
  std::vector<ProbeResult> out;
  for (int K : cfg.eval.probe_ks) {
    ProbeConfig pc;
    pc.K = K;
    pc.groups = cfg.eval.probe_groups;
    pc.seed = seed;
    out.push_back(ranking_probe(model, s.task, pool, s.vocab, s.delims, pc));
  }
  return out;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  ReportRow row;
  HarvestResult harvest;
  std::vector<ProbeResult> probes;
};

template <class T>
SeedOutcome run_seed(const RunConfig& cfg, const TaskSetup& s, const std::vector<LabeledDesign>& data,
                     std::uint64_t seed, const fs::path& dir, Progress& progress, std::ostream* log) {
  progress.phase = "gen-data";
  const SeedData sd(cfg, s, data, seed);
  sd.write(s.task, dir);
  Model<T> model = initial_model<T>(cfg, s, seed);
  for (Stage st : {Stage::da, Stage::sft, Stage::rl}) {
    if (!cfg.stage(st).enabled) continue;
    progress.phase = "train-" + to_string(st);
    train_stage(cfg, s, sd, seed, dir, st, model, log);
  }
  progress.phase = "harvest";
  SeedOutcome out;
  out.seed = seed;
  out.harvest = harvest_seed(cfg, s, sd, seed, model, dir, log);
  progress.phase = "eval";
  out.row = evaluate_seed(cfg, s, sd.pool, out.harvest, seed);
  if (cfg.eval.probe) {
    progress.phase = "probe";
    out.probes = probe_seed(cfg, s, sd.pool, seed, model);
    for (const auto& p : out.probes) out.row.set("probe_k" + std::to_string(p.K) + "_mean_rank", p.mean_rank);
    write_text(dir / "probe.csv", probe_csv(out.probes));
  }
  return out;
}

struct PipelineResult {
  fs::path run_dir;
  std::vector<SeedOutcome> seeds;

  std::vector<ReportRow> rows() const {
    std::vector<ReportRow> r;
    for (const auto& s : seeds) r.push_back(s.row);
    return r;
  }
  double mean(const std::string& metric) const {
    double acc = 0.0;
    for (const auto& s : seeds) acc += s.row.get(metric);
    return acc / static_cast<double>(seeds.size());
  }
};

inline void write_failure(const fs::path& run_dir, const std::string& phase, const Error& e) {
  Json j = {{"phase", phase}, {"kind", to_string(e.kind())}, {"message", e.what()}};
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  std::ofstream(run_dir / "failure.json") << j.dump(2) << '\n';
}

template <class T>
PipelineResult run_pipeline_as(const RunConfig& cfg, const fs::path& run_dir, std::ostream* log) {
  Progress progress{"setup"};
  try {
    fs::create_directories(run_dir);
    write_text(run_dir / "config.json", to_json(cfg).dump(2) + "\n");
    const TaskSetup setup = make_task_setup(cfg);
    write_text(run_dir / "vocab.tsv", setup.vocab.serialize());
    progress.phase = "gen-data";
    const auto data = source_dataset(cfg, setup);
    PipelineResult result;
    result.run_dir = run_dir;
    for (std::uint64_t seed : cfg.eval.seeds)
      result.seeds.push_back(
          run_seed<T>(cfg, setup, data, seed, seed_dir(run_dir, seed), progress, log));
    progress.phase = "report";
    std::vector<std::uint64_t> seeds(cfg.eval.seeds.begin(), cfg.eval.seeds.end());
    write_text(run_dir / "report.csv", report_csv(seeds, result.rows()));
    return result;
  } catch (const Error& e) {
    write_failure(run_dir, progress.phase, e);
    throw;
  } catch (const std::exception& e) {
    write_failure(run_dir, progress.phase, Error(ErrorKind::io, e.what()));
    throw;
  }
}

inline PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& run_dir, std::ostream* log = nullptr) {
  return cfg.model.precision == Precision::check ? run_pipeline_as<double>(cfg, run_dir, log)
                                                 : run_pipeline_as<float>(cfg, run_dir, log);
}

// ---------------------------------------------------------------------------
// ablations

struct AblationCell {
  std::string name;
  RunConfig config;
};

struct AblationResult {
  std::vector<std::string> names;
  std::vector<PipelineResult> results;

  const PipelineResult& at(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return results[i];
    fail(ErrorKind::config, "no ablation cell named " + name);
  }
};

/// The seven non-empty stage subsets, full pipeline first.
inline std::vector<AblationCell> stage_ablation_cells(const RunConfig& base) {
  std::vector<AblationCell> cells;
  for (int mask : {7, 3, 5, 6, 1, 2, 4}) {
    AblationCell c{"", base};
    c.config.da.enabled = mask & 1;
    c.config.sft.enabled = mask & 2;
    c.config.rl.enabled = mask & 4;
    for (Stage s : {Stage::da, Stage::sft, Stage::rl})
      if (c.config.stage(s).enabled) c.name += (c.name.empty() ? "" : "+") + to_string(s);
    cells.push_back(std::move(c));
  }
  return cells;
}

/// Two-cell comparisons: base value first.
inline std::vector<AblationCell> variant_cells(const RunConfig& base, const std::string& kind) {
  AblationCell a{"", base}, b{"", base};
  if (kind == "backbone") {
    a.name = "bidirectional";
    a.config.model.attention = AttentionMode::bidirectional;
    b.name = "causal";
    b.config.model.attention = AttentionMode::causal;
  } else if (kind == "context") {
    a.name = "similar";
    a.config.corpus.context_mode = ContextMode::similar;
    b.name = "random";
    b.config.corpus.context_mode = ContextMode::random;
  } else if (kind == "subsampling") {
    a.name = "even";
    a.config.pool.sub_sampling = SubSampling::even;
    b.name = "random";
    b.config.pool.sub_sampling = SubSampling::random;
  } else if (kind == "delimiter") {
    a.name = "tokens";
    a.config.delimiter_mode = DelimiterMode::tokens;
    b.name = "plain_text";
    b.config.delimiter_mode = DelimiterMode::plain_text;
  } else {
    fail(ErrorKind::config, "unknown ablation kind '" + kind + "'");
  }
  return {a, b};
}

/// Runs each cell in `dir/<name>`. With share_checkpoints, a stage checkpoint
/// already produced by an earlier cell for the same chain and seed is copied
/// in first; only valid when cells differ in stage enable flags alone.
inline AblationResult run_ablation(const std::vector<AblationCell>& cells, const fs::path& dir, bool share_checkpoints,
                                   std::ostream* log = nullptr) {
  AblationResult out;
  std::vector<fs::path> done;
  for (const auto& cell : cells) {
    const fs::path cell_dir = dir / cell.name;
    if (share_checkpoints) {
      for (std::uint64_t seed : cell.config.eval.seeds) {
        const std::string sd = "seed_" + std::to_string(seed);
        for (Stage st : {Stage::da, Stage::sft, Stage::rl}) {
          if (!cell.config.stage(st).enabled) continue;
          const std::string file = checkpoint_path(cell.config, "", st).string();
          for (const auto& prev : done) {
            if (!fs::exists(prev / sd / file) || fs::exists(cell_dir / sd / file)) continue;
            fs::create_directories(cell_dir / sd);
            fs::copy_file(prev / sd / file, cell_dir / sd / file);
          }
        }
      }
    }
    if (log) *log << "== cell " << cell.name << std::endl;
    out.names.push_back(cell.name);
    out.results.push_back(run_pipeline(cell.config, cell_dir, log));
    done.push_back(cell_dir);
  }
  std::string csv = "cell,metric,mean,std\n";
  for (std::size_t i = 0; i < out.names.size(); ++i) {
    const Aggregate a = aggregate(out.results[i].rows());
    for (std::size_t j = 0; j < a.names.size(); ++j)
      csv += out.names[i] + "," + a.names[j] + "," + format_number(a.mean[j]) + "," + format_number(a.std[j]) + "\n";
  }
  write_text(dir / "ablation.csv", csv);
  return out;
}

}  // namespace dibo

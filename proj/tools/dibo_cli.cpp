// dibo: command-line driver for data generation, staged training, harvesting,
// evaluation, the ranking probe, full pipelines and ablation matrices.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dibo/dibo.hpp"

namespace fs = std::filesystem;
using namespace dibo;

namespace {

struct Options {
  std::string config_path;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::string stage = "da";
  std::string ablation = "stages";
  bool quiet = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? config_from_json(Json::object()) : load_config(o.config_path);
  if (!o.seeds.empty()) cfg.eval.seeds = o.seeds;
  return cfg;
}

fs::path resolve_out(const Options& o) { return o.out.empty() ? timestamped_run_dir() : fs::path(o.out); }

/// Shared setup for the single-step subcommands.
struct Session {
  RunConfig cfg;
  fs::path dir;
  TaskSetup setup;
  std::vector<LabeledDesign> data;

  explicit Session(const Options& o) : cfg(resolve_config(o)), dir(resolve_out(o)), setup(make_task_setup(cfg)) {
    fs::create_directories(dir);
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
    write_text(dir / "vocab.tsv", setup.vocab.serialize());
    data = source_dataset(cfg, setup);
  }
};

template <class T>
void cmd_train(const Options& o, Progress& p, std::ostream* log) {
  Session s(o);
  const Stage st = parse_stage(o.stage);
  for (std::uint64_t seed : s.cfg.eval.seeds) {
    p.phase = "gen-data";
    const SeedData sd(s.cfg, s.setup, s.data, seed);
    const fs::path dir = seed_dir(s.dir, seed);
    sd.write(s.setup.task, dir);
    p.phase = "train-" + o.stage;
    Model<T> model = st == Stage::da    ? initial_model<T>(s.cfg, s.setup, seed)
                     : st == Stage::sft ? model_after<T>(s.cfg, s.setup, seed, dir, Stage::da)
                                        : model_after<T>(s.cfg, s.setup, seed, dir, Stage::sft);
    train_stage(s.cfg, s.setup, sd, seed, dir, st, model, log);
  }
}

template <class T>
void cmd_harvest(const Options& o, Progress& p, std::ostream* log) {
  Session s(o);
  for (std::uint64_t seed : s.cfg.eval.seeds) {
    p.phase = "harvest";
    const SeedData sd(s.cfg, s.setup, s.data, seed);
    const fs::path dir = seed_dir(s.dir, seed);
    sd.write(s.setup.task, dir);
    const Model<T> model = model_after<T>(s.cfg, s.setup, seed, dir, Stage::rl);
    harvest_seed(s.cfg, s.setup, sd, seed, model, dir, log);
  }
}

void cmd_eval(const Options& o, Progress& p) {
  Session s(o);
  p.phase = "eval";
  std::vector<ReportRow> rows;
  for (std::uint64_t seed : s.cfg.eval.seeds) {
    const SeedData sd(s.cfg, s.setup, s.data, seed);
    rows.push_back(evaluate_seed(s.cfg, s.setup, sd.pool, load_harvest(s.setup.task, seed_dir(s.dir, seed)), seed));
  }
  const std::string csv = report_csv(s.cfg.eval.seeds, rows);
  write_text(s.dir / "report.csv", csv);
  std::cout << csv;
}

template <class T>
void cmd_probe(const Options& o, Progress& p) {
  Session s(o);
  p.phase = "probe";
  for (std::uint64_t seed : s.cfg.eval.seeds) {
    const SeedData sd(s.cfg, s.setup, s.data, seed);
    const fs::path dir = seed_dir(s.dir, seed);
    sd.write(s.setup.task, dir);
    const Model<T> model = model_after<T>(s.cfg, s.setup, seed, dir, Stage::rl);
    const std::string csv = probe_csv(probe_seed(s.cfg, s.setup, sd.pool, seed, model));
    write_text(dir / "probe.csv", csv);
    std::cout << "seed " << seed << "\n" << csv;
  }
}

template <class F>
int guarded(const fs::path& dir, Progress& p, F&& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    write_failure(dir, p.phase, e);
    std::cerr << "error: " << e.what() << "\nfailure record: " << (dir / "failure.json").string() << "\n";
    return 1;
  } catch (const std::exception& e) {
    write_failure(dir, p.phase, Error(ErrorKind::io, e.what()));
    std::cerr << "error: " << e.what() << "\nfailure record: " << (dir / "failure.json").string() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-diffusion LM adaptation for offline black-box optimization (desk scale)"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", o.out, "run directory (default runs/<timestamp>)");
    sub->add_option("--seeds", o.seeds, "override eval.seeds");
    sub->add_flag("-q,--quiet", o.quiet, "suppress progress lines");
  };
  auto* gen = app.add_subcommand("gen-data", "write pool, pair files and vocabulary");
  auto* train = app.add_subcommand("train", "run one training stage (resumes from earlier checkpoints)");
  train->add_option("--stage", o.stage, "da | sft | rl")->check(CLI::IsMember({"da", "sft", "rl"}));
  auto* harvest_cmd = app.add_subcommand("harvest", "decode candidates from the latest checkpoint");
  auto* eval = app.add_subcommand("eval", "score harvest files and write report.csv");
  auto* probe = app.add_subcommand("probe", "ranking probe on the latest checkpoint");
  auto* pipeline = app.add_subcommand("pipeline", "gen-data, training stages, harvest, eval (and probe)");
  auto* ablate = app.add_subcommand("ablate", "run an ablation matrix");
  ablate->add_option("--kind", o.ablation, "stages | backbone | context | subsampling | delimiter")
      ->check(CLI::IsMember({"stages", "backbone", "context", "subsampling", "delimiter"}));
  for (auto* sub : {gen, train, harvest_cmd, eval, probe, pipeline, ablate}) common(sub);

  CLI11_PARSE(app, argc, argv);

  std::ostream* log = o.quiet ? nullptr : &std::cerr;
  Progress progress{"setup"};
  fs::path dir = o.out.empty() ? timestamped_run_dir() : fs::path(o.out);
  o.out = dir.string();

  return guarded(dir, progress, [&] {
    const RunConfig cfg = resolve_config(o);
    const bool check = cfg.model.precision == Precision::check;
    if (app.got_subcommand(gen)) {
      Session s(o);
      progress.phase = "gen-data";
      for (std::uint64_t seed : s.cfg.eval.seeds) SeedData(s.cfg, s.setup, s.data, seed).write(s.setup.task, seed_dir(s.dir, seed));
    } else if (app.got_subcommand(train)) {
      check ? cmd_train<double>(o, progress, log) : cmd_train<float>(o, progress, log);
    } else if (app.got_subcommand(harvest_cmd)) {
      check ? cmd_harvest<double>(o, progress, log) : cmd_harvest<float>(o, progress, log);
    } else if (app.got_subcommand(eval)) {
      cmd_eval(o, progress);
    } else if (app.got_subcommand(probe)) {
      check ? cmd_probe<double>(o, progress) : cmd_probe<float>(o, progress);
    } else if (app.got_subcommand(pipeline)) {
      const auto result = run_pipeline(cfg, dir, log);
      std::cout << read_text(result.run_dir / "report.csv");
    } else if (app.got_subcommand(ablate)) {
      progress.phase = "ablate";
      const bool stages = o.ablation == "stages";
      const auto cells = stages ? stage_ablation_cells(cfg) : variant_cells(cfg, o.ablation);
      run_ablation(cells, dir, stages, log);
      std::cout << read_text(dir / "ablation.csv");
    }
    std::cerr << "run directory: " << dir.string() << "\n";
  });
}

#pragma once

// Command-line front end. Each subcommand loads its inputs, calls the
// corresponding library operation and writes that operation's TSV report.
// Exit codes: 0 ok, 2 configuration/usage error, 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "serank/config.hpp"
#include "serank/experiments.hpp"
#include "serank/flops.hpp"
#include "serank/letor.hpp"
#include "serank/metrics.hpp"
#include "serank/models.hpp"
#include "serank/trainer.hpp"

namespace serank::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct Splits {
  Dataset train, valid, test;
  FeatureStats stats;
};

inline Dataset load_split(const std::string& key, const std::string& path, std::size_t c, bool discard) {
  if (path.empty()) throw ConfigError(key + " is not set");
  if (!std::filesystem::exists(path)) throw ConfigError(key + ": no such file '" + path + "'");
  return parse_letor_file(path, c, {discard});
}

inline Checkpoint load_checkpoint_arg(const std::string& dir) {
  if (!std::filesystem::exists(std::filesystem::path(dir) / "model.cfg"))
    throw ConfigError("--checkpoint: no checkpoint at '" + dir + "'");
  return load_checkpoint(dir);
}

/// Reads the configured splits and standardizes them with training statistics.
inline Splits load_splits(const RunConfig& cfg, bool need_test) {
  const DataConfig& d = cfg.data;
  Splits s;
  s.train = load_split("data.train", d.train, d.feature_count, d.discard_no_relevant);
  s.valid = load_split("data.valid", d.valid, d.feature_count, d.discard_no_relevant);
  if (need_test || !d.test.empty()) s.test = load_split("data.test", d.test, d.feature_count, false);
  s.test.feature_count = d.feature_count;
  if (d.standardize) {
    s.stats = compute_stats(s.train);
    s.train = normalize(s.train, s.stats);
    s.valid = normalize(s.valid, s.stats);
    s.test = normalize(s.test, s.stats);
  }
  return s;
}

/// Output stream: the named file, or `fallback` when path is empty.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      out_ = &fallback;
    } else {
      file_.open(path);
      if (!file_) throw ConfigError("cannot write '" + path + "'");
      out_ = &file_;
    }
  }
  std::ostream& operator*() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

inline RunConfig resolve_config(const CommonOptions& o, bool required) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_run_config(o.config);
  else if (required) throw ConfigError("--config is required");
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = std::max(1u, *o.threads);
  return cfg;
}

inline void print_summary(std::ostream& err, const std::string& title, const MetricReport& r) {
  err << title << " (" << r.query_count << " queries, " << r.skipped << " skipped):";
  for (const auto& [k, v] : r.ndcg_at) err << "  NDCG@" << k << " " << std::fixed << std::setprecision(4) << v << " ("
                                           << std::setprecision(2) << 100.0 * v << ")";
  err << std::defaultfloat << '\n';
}

inline int cmd_train(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(o, true);
  if (!o.out.empty()) cfg.output_dir = o.out;
  Splits data = load_splits(cfg, false);
  ModelSpec spec = cfg.model_spec(cfg.data.feature_count);
  TrainConfig tc = cfg.train_config();
  tc.validate();
  ScoringModel model = init_model(spec);

  TrainResult r = train(std::move(model), data.train, data.valid, tc);

  namespace fs = std::filesystem;
  fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  save_checkpoint(dir / "best", r.best, data.stats);
  save_checkpoint(dir / "final", r.last, data.stats);
  {
    std::ofstream log(dir / "train_log.tsv");
    write_train_log(log, r.log);
  }
  {
    std::ofstream cfg_out(dir / "run.cfg");
    write_kv(cfg_out, config_values(cfg));
  }
  if (!data.test.groups.empty()) {
    MetricReport rep = evaluate(r.best, data.test, default_cutoffs(), cfg.threads);
    std::ofstream m(dir / "test_metrics.tsv");
    write_metric_tsv(m, rep);
    write_metric_tsv(out, rep);
    print_summary(err, "test", rep);
  }
  err << "best step " << r.best_step << ", checkpoints in " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_eval(const std::string& checkpoint, const std::string& data_path, const CommonOptions& o,
                    std::ostream& out, std::ostream& err) {
  Checkpoint ck = load_checkpoint_arg(checkpoint);
  Dataset ds = load_split("--data", data_path, ck.model.spec.input_width, false);
  if (!ck.stats.empty()) ds = normalize(ds, ck.stats);
  MetricReport rep = evaluate(ck.model, ds, default_cutoffs(), o.threads.value_or(1));
  Sink sink(o.out, out);
  write_metric_tsv(*sink, rep);
  print_summary(err, "eval", rep);
  return kExitOk;
}

inline int cmd_flops(std::size_t docs, std::size_t features, const CommonOptions& o, std::ostream& out) {
  RunConfig cfg = resolve_config(o, false);
  FlopsReport rep = count_flops(cfg.model_spec(features), docs, features);
  Sink sink(o.out, out);
  write_flops_tsv(*sink, rep);
  return kExitOk;
}

inline int cmd_stability(const std::string& checkpoint, const std::string& data_path, double fraction,
                         const CommonOptions& o, std::ostream& out, std::ostream& err) {
  Checkpoint ck = load_checkpoint_arg(checkpoint);
  Dataset ds = load_split("--data", data_path, ck.model.spec.input_width, false);
  if (!ck.stats.empty()) ds = normalize(ds, ck.stats);
  StabilityReport rep = stability_test(ck.model, ds, fraction, o.seed.value_or(0));
  Sink sink(o.out, out);
  write_stability_tsv(*sink, rep);
  err << "stability: " << rep.query_count << " queries, " << rep.skipped_empty << " emptied, "
      << rep.skipped_no_relevant << " without relevant survivors\n";
  return kExitOk;
}

inline int cmd_ablate(const CommonOptions& o, std::ostream& out) {
  RunConfig cfg = resolve_config(o, true);
  Splits data = load_splits(cfg, true);
  std::vector<AblationRow> rows =
      ablation_suite(data.train, data.valid, data.test, cfg.model_spec(cfg.data.feature_count), cfg.train_config());
  Sink sink(o.out, out);
  write_ablation_tsv(*sink, rows);
  return kExitOk;
}

inline int cmd_gen_synthetic(const CommonOptions& o, std::ostream& err) {
  RunConfig cfg = resolve_config(o, false);
  std::filesystem::path dir = o.out.empty() ? cfg.output_dir : o.out;
  std::filesystem::create_directories(dir);
  SyntheticSplits s = generate_synthetic(cfg.synthetic_config());
  write_letor_file(dir / "train.txt", s.train);
  write_letor_file(dir / "valid.txt", s.valid);
  write_letor_file(dir / "test.txt", s.test);
  err << "wrote " << s.train.size() << "/" << s.valid.size() << "/" << s.test.size() << " queries ("
      << to_string(cfg.synthetic.task) << ") to " << dir.string() << '\n';
  return kExitOk;
}

/// Entry point shared by the executable and the tests. args excludes argv[0].
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Sequencewise learning-to-rank toolkit", "serank"};
  app.require_subcommand(1);
  std::string keys_help = config_keys_help();

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", common.config, "run configuration file");
    sub->add_option("--out", common.out, "output directory or report file");
    sub->add_option("--seed", common.seed, "override the root seed");
    sub->add_option("--threads", common.threads, "worker threads");
    if (with_config) sub->footer(keys_help);
  };

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoints, log and test metrics to --out");
  add_common(train_cmd, true);

  std::string checkpoint, data_path;
  auto* eval_cmd = app.add_subcommand("eval", "NDCG@{1,5,10} of a checkpoint on a LETOR file");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--data", data_path, "LETOR file")->required();
  add_common(eval_cmd, false);

  std::size_t docs = 200, features = 136;
  auto* flops_cmd = app.add_subcommand("flops", "FLOPs of one forward pass over L documents with C features");
  flops_cmd->add_option("--L,--docs", docs, "documents per query")->capture_default_str();
  flops_cmd->add_option("--C,--features", features, "features per document")->capture_default_str();
  add_common(flops_cmd, true);

  double fraction = 0.5;
  auto* stab_cmd = app.add_subcommand("stability", "NDCG of surviving documents, scored with and without the rest");
  stab_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  stab_cmd->add_option("--data", data_path, "LETOR file")->required();
  stab_cmd->add_option("--fraction", fraction, "fraction of documents removed per query")->capture_default_str();
  add_common(stab_cmd, false);

  auto* ablate_cmd = app.add_subcommand("ablate", "train SERank-b and its squeeze/excitation ablations");
  add_common(ablate_cmd, true);

  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write seeded synthetic train/valid/test LETOR files to --out");
  add_common(gen_cmd, true);

  std::vector<std::string> argv_store{"serank"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(common, out, err);
    if (*eval_cmd) return cmd_eval(checkpoint, data_path, common, out, err);
    if (*flops_cmd) return cmd_flops(docs, features, common, out);
    if (*stab_cmd) return cmd_stability(checkpoint, data_path, fraction, common, out, err);
    if (*ablate_cmd) return cmd_ablate(common, out);
    if (*gen_cmd) return cmd_gen_synthetic(common, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SchemaError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingAbort& e) {
    err << "training aborted: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace serank::cli

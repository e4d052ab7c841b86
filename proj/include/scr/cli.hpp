#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "scr/gradcheck.hpp"
#include "scr/metrics.hpp"
#include "scr/model_loss.hpp"
#include "scr/priors.hpp"
#include "scr/sweep.hpp"
#include "scr/synthgen.hpp"
#include "scr/train.hpp"

namespace scr::cli {

inline constexpr int kUsageError = 2;

/// Accepts "inf" / "-inf" in addition to ordinary decimals.
inline double parse_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::filesystem::path sidecar(const std::filesystem::path& data, const std::string& suffix) {
  std::filesystem::path p = data;
  return p.replace_extension(suffix);
}

/// Scenes of a generated corpus split 70/10/20, validated against its metadata.
inline Experiment load_experiment(const std::filesystem::path& data) {
  const auto meta_path = sidecar(data, ".meta.json");
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw std::runtime_error("dataset metadata not found: " + meta_path.string());
  const DatasetConfig dc = dataset_config_from_json(nlohmann::json::parse(meta_in));
  Dataset d = split_dataset(read_jsonl(data, Vocab{dc.num_obj_classes, dc.num_rel_classes()}));
  return Experiment::from_splits(std::move(d.train), std::move(d.val), std::move(d.test),
                                 dc.num_obj_classes, dc.num_rel_classes());
}

struct TrainFlags {
  std::string loss = "scr";
  std::string variant = "freq-emb";
  std::string delta = "0.7";
  std::string lambda_skew = "0.06";
  std::string task = "predcls";
  TrainConfig config;

  void attach(CLI::App* cmd) {
    cmd->add_option("--loss", loss, "Loss mode")->check(CLI::IsMember({"ce", "scr"}));
    cmd->add_option("--variant", variant, "Skew-logit source")
        ->check(CLI::IsMember({"emb", "freq", "freq-emb"}));
    cmd->add_option("--delta", delta, "Skew threshold offset (accepts inf/-inf)");
    cmd->add_option("--lambda-skew", lambda_skew, "Entropy coefficient");
    cmd->add_option("--task", task, "Evaluation protocol")->check(CLI::IsMember({"predcls", "sgcls"}));
    cmd->add_option("--lr", config.learning_rate, "SGD learning rate");
    cmd->add_option("--epochs", config.epochs, "Training epochs");
    cmd->add_option("--batch-scenes", config.batch_scenes, "Scenes per mini-batch");
    cmd->add_option("--embedding-dim", config.embedding_dim, "Label embedding width");
    cmd->add_option("--seed", config.seed, "Training seed");
  }

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.loss_mode = parse_loss_mode(loss);
    c.skew_variant = parse_skew_variant(variant);
    c.delta = parse_real(delta);
    c.lambda_skew = parse_real(lambda_skew);
    c.task = parse_task(task);
    return c;
  }
};

inline void write_json(const nlohmann::json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

/// Entry point of the `scr` tool. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Skew class-balanced re-weighting on synthetic long-tailed scene graphs", "scr"};
  app.require_subcommand(1);

  // gen
  DatasetConfig gen_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--scenes", gen_cfg.num_scenes, "Number of scenes");
  gen->add_option("--min-entities", gen_cfg.min_entities);
  gen->add_option("--max-entities", gen_cfg.max_entities);
  gen->add_option("--obj-classes", gen_cfg.num_obj_classes);
  gen->add_option("--predicates", gen_cfg.num_predicates, "Non-background predicate classes");
  gen->add_option("--zipf", gen_cfg.zipf_exponent);
  gen->add_option("--annotation-rate", gen_cfg.annotation_rate);
  gen->add_option("--feature-dim", gen_cfg.feature_dim);
  gen->add_option("--noise", gen_cfg.feature_noise_sigma);
  gen->add_option("--affinity", gen_cfg.pair_affinity);
  gen->add_option("--seed", gen_cfg.seed);
  gen->add_option("--out", gen_out, "Output JSON-lines file")->required();

  // train
  TrainFlags train_flags;
  std::string train_data, train_out, train_history, train_freq_out;
  auto* train_cmd = app.add_subcommand("train", "Train a predictor on a corpus");
  train_cmd->add_option("--data", train_data, "Corpus written by gen")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--history", train_history, "History JSON (default: <out>.history.json)");
  train_cmd->add_option("--freq-out", train_freq_out, "Also write the frequency table");
  train_flags.attach(train_cmd);

  // eval
  std::string eval_ckpt, eval_data, eval_split = "test", eval_task = "predcls", eval_out, eval_freq;
  bool eval_unconstrained = false, eval_macro = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint written by train");
  eval->add_option("--data", eval_data, "Corpus written by gen")->required();
  eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--task", eval_task)->check(CLI::IsMember({"predcls", "sgcls"}));
  eval->add_option("--freq", eval_freq, "Frequency table (default: rebuilt from the train split)");
  eval->add_option("--out", eval_out, "Metrics JSON (default: stdout)");
  eval->add_flag("--no-graph-constraint", eval_unconstrained, "Rank every predicate of every pair");
  eval->add_flag("--macro", eval_macro, "Average recall per scene");

  // sweep
  TrainFlags sweep_flags;
  std::string sweep_data, sweep_out, sweep_deltas = "0.6,0.7,0.8", sweep_lambdas = "0.03,0.06,0.08",
                                     sweep_variants = "freq-emb";
  auto* sweep = app.add_subcommand("sweep", "Grid over delta, lambda-skew and skew variant");
  sweep->add_option("--data", sweep_data, "Corpus written by gen")->required();
  sweep->add_option("--deltas", sweep_deltas, "Comma-separated");
  sweep->add_option("--lambdas", sweep_lambdas, "Comma-separated");
  sweep->add_option("--variants", sweep_variants, "Comma-separated subset of emb,freq,freq-emb");
  sweep->add_option("--out", sweep_out, "CSV path (default: stdout)");
  sweep_flags.attach(sweep);

  // gradcheck
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 7;
  double gc_h = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all gradients");
  gradcheck->add_option("--instances", gc_instances);
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--step", gc_h, "Central-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (gen->parsed()) {
      const Dataset d = sample_dataset(gen_cfg);
      const auto scenes = d.all();
      write_jsonl(scenes, gen_out);
      const std::filesystem::path path(gen_out);
      write_json(to_json(gen_cfg), sidecar(path, ".meta.json").string(), out);
      const nlohmann::json stats = to_json(dataset_stats(scenes, gen_cfg.num_rel_classes()));
      write_json(stats, sidecar(path, ".stats.json").string(), out);
      out << stats.dump() << '\n';
      return 0;
    }
    if (train_cmd->parsed()) {
      const TrainConfig cfg = train_flags.resolve();
      const Experiment exp = load_experiment(train_data);
      const TrainResult r = train(cfg, exp.train, exp.val, exp.freq);
      save_checkpoint(r.params, train_out);
      nlohmann::json history = to_json(r.history);
      history["config"] = to_json(cfg);
      const std::string hist_path =
          train_history.empty() ? sidecar(train_out, ".history.json").string() : train_history;
      write_json(history, hist_path, out);
      if (!train_freq_out.empty()) save_freq_table(exp.freq, train_freq_out);
      if (!r.history.epochs.empty()) {
        out << "final train loss " << std::setprecision(17) << r.history.epochs.back().train_loss << '\n';
      }
      return 0;
    }
    if (eval->parsed()) {
      if (eval_ckpt.empty() || !std::filesystem::exists(eval_ckpt)) {
        err << "error: checkpoint not found" << (eval_ckpt.empty() ? "" : ": " + eval_ckpt) << '\n';
        return 1;
      }
      const ModelParams params = load_checkpoint(eval_ckpt);
      Experiment exp = load_experiment(eval_data);
      if (!eval_freq.empty()) exp.freq = load_freq_table(eval_freq);
      EvalOptions opts;
      opts.task = parse_task(eval_task);
      opts.graph_constraint = !eval_unconstrained;
      opts.macro_over_scenes = eval_macro;
      const auto& scenes = eval_split == "train" ? exp.train : eval_split == "val" ? exp.val : exp.test;
      MetricsReport report = evaluate(params, scenes, exp.freq, exp.train_triplets, opts);
      report.config = {{"checkpoint", eval_ckpt},
                       {"split", eval_split},
                       {"task", eval_task},
                       {"graph_constraint", opts.graph_constraint},
                       {"macro_over_scenes", opts.macro_over_scenes}};
      write_json(to_json(report), eval_out, out);
      return 0;
    }
    if (sweep->parsed()) {
      const TrainConfig base = sweep_flags.resolve();
      std::vector<double> deltas, lambdas;
      std::vector<SkewVariant> variants;
      for (const auto& s : split_list(sweep_deltas)) deltas.push_back(parse_real(s));
      for (const auto& s : split_list(sweep_lambdas)) lambdas.push_back(parse_real(s));
      for (const auto& s : split_list(sweep_variants)) variants.push_back(parse_skew_variant(s));
      const Experiment exp = load_experiment(sweep_data);
      const auto rows = run_sweep(base, deltas, lambdas, variants, exp);
      if (sweep_out.empty()) {
        write_sweep_csv(rows, out);
      } else {
        write_sweep_csv(rows, std::filesystem::path(sweep_out));
      }
      return 0;
    }
    if (gradcheck->parsed()) {
      const GradcheckReport r = run_gradcheck(gc_instances, gc_seed, gc_h);
      out << "instances " << r.instances << ", coordinates " << r.coordinates << '\n';
      out << "max relative error " << std::setprecision(3) << std::scientific << r.max_rel_error
          << (r.worst_block.empty() ? "" : " (" + r.worst_block + ")") << '\n';
      return r.max_rel_error < 1e-4 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return kUsageError;
}

}  // namespace scr::cli

#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <fstream>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "scr/metrics.hpp"
#include "scr/priors.hpp"
#include "scr/synthgen.hpp"
#include "scr/train.hpp"

namespace scr {

/// Splits plus the statistics every run derives from the training split.
struct Experiment {
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> val;
  std::vector<SceneRecord> test;
  FreqTable freq;
  std::set<TripletClass> train_triplets;

  static Experiment from_splits(std::vector<SceneRecord> train, std::vector<SceneRecord> val,
                                std::vector<SceneRecord> test, std::size_t num_obj_classes,
                                std::size_t num_rel_classes) {
    Experiment e{std::move(train), std::move(val), std::move(test), {}, {}};
    e.freq = build_freq_table(e.train, num_obj_classes, num_rel_classes);
    e.train_triplets = triplet_classes(e.train);
    return e;
  }

  static Experiment from_dataset(const Dataset& d) {
    return from_splits(d.train, d.val, d.test, d.truth.num_obj_classes, d.truth.num_rel_classes);
  }
};

struct RunResult {
  TrainResult trained;
  MetricsReport report;
};

/// Train on the training split, evaluate on the test split.
inline RunResult run_once(const TrainConfig& config, const Experiment& exp,
                          EvalOptions options = {}) {
  options.task = config.task;
  RunResult r;
  r.trained = train(config, exp.train, exp.val, exp.freq);
  r.report = evaluate(r.trained.params, exp.test, exp.freq, exp.train_triplets, options);
  r.report.config = to_json(config);
  r.report.history = to_json(r.trained.history);
  return r;
}

struct SweepRow {
  SkewVariant variant = SkewVariant::FreqEmb;
  double delta = 0.0;
  double lambda_skew = 0.0;
  MetricsReport report;
};

/// Cartesian product variants x deltas x lambdas, each run from the same seed.
inline std::vector<SweepRow> run_sweep(const TrainConfig& base, std::span<const double> deltas,
                                       std::span<const double> lambdas,
                                       std::span<const SkewVariant> variants,
                                       const Experiment& exp, const EvalOptions& options = {}) {
  if (deltas.empty() || lambdas.empty() || variants.empty()) {
    throw std::invalid_argument("run_sweep: every grid axis needs at least one value");
  }
  std::vector<SweepRow> rows;
  for (SkewVariant v : variants) {
    for (double d : deltas) {
      for (double l : lambdas) {
        TrainConfig cfg = base;
        cfg.skew_variant = v;
        cfg.delta = d;
        cfg.lambda_skew = l;
        rows.push_back({v, d, l, run_once(cfg, exp, options).report});
      }
    }
  }
  return rows;
}

/// Shortest decimal that reads back to the same double.
inline std::string shortest(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
  out << "variant,delta,lambda,k,recall,mean_recall,zs_recall\n";
  for (const auto& row : rows) {
    for (const auto& r : row.report.at_k) {
      out << to_string(row.variant) << ',' << shortest(row.delta) << ',' << shortest(row.lambda_skew)
          << ',' << r.k << ',' << shortest(r.recall) << ',' << shortest(r.mean_recall) << ','
          << (r.zs_recall ? shortest(*r.zs_recall) : "") << '\n';
    }
  }
}

inline void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_sweep_csv(rows, out);
}

}  // namespace scr

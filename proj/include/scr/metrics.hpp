#pragma once

#include <algorithm>
#include <cassert>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "scr/model_loss.hpp"
#include "scr/priors.hpp"
#include "scr/scene.hpp"
#include "scr/synthgen.hpp"

namespace scr {

/// One ranked (pair, predicate) hypothesis.
struct Candidate {
  std::size_t subject = 0;
  std::size_t object = 0;
  ClassIndex predicate = 0;
  ClassIndex subj_label = 0;  // predicted labels (ground truth in PREDCLS)
  ClassIndex obj_label = 0;
  double score = 0.0;
};

using SceneRanking = std::vector<Candidate>;

struct EvalOptions {
  Task task = Task::PredCls;
  std::vector<std::size_t> ks{20, 50, 100};
  bool graph_constraint = true;   // at most one predicate per ordered pair
  bool macro_over_scenes = false; // average per-scene recall instead of pooling
};

struct RecallAtK {
  std::size_t k = 0;
  double recall = 0.0;
  double mean_recall = 0.0;
  std::optional<double> zs_recall;
  std::vector<std::optional<double>> per_predicate;  // predicates 1..C-1; empty classes are nullopt
};

struct MetricsReport {
  std::vector<RecallAtK> at_k;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json history = nlohmann::json();

  const RecallAtK& at(std::size_t k) const {
    for (const auto& r : at_k) {
      if (r.k == k) return r;
    }
    throw std::out_of_range("MetricsReport: no entry for K=" + std::to_string(k));
  }
};

/// Sorts candidates by score, ties broken by pair then predicate so that
/// rankings are deterministic.
inline void sort_candidates(SceneRanking& ranking) {
  std::stable_sort(ranking.begin(), ranking.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.subject != b.subject) return a.subject < b.subject;
    if (a.object != b.object) return a.object < b.object;
    return a.predicate < b.predicate;
  });
}

/// Softmax over the combined predicate logits of every ordered pair, background
/// excluded from the candidates.
inline SceneRanking rank_scene(const ModelParams& params, const SceneRecord& scene,
                               const FreqTable& freq, const EvalOptions& options) {
  const SceneRecord* one[] = {&scene};
  SceneBatch batch = make_batch(one);
  std::vector<ClassIndex> labels = batch.objects.labels;
  if (options.task == Task::SgCls) {
    labels = argmax_rows(object_logits(params, batch.objects.features));
    relabel_pairs(batch.pairs, labels);
  }
  const PredicateLogits pl = predicate_logits(params, batch.pairs, freq);
  const std::size_t n = scene.entities.size();
  SceneRanking ranking;
  std::size_t row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const RealVector p = softmax_row(pl.combined.row(row));
      if (options.graph_constraint) {
        ClassIndex best = 1;
        for (ClassIndex r = 2; r < p.size(); ++r) {
          if (p[r] > p[best]) best = r;
        }
        ranking.push_back({i, j, best, labels[i], labels[j], p[best]});
      } else {
        for (ClassIndex r = 1; r < p.size(); ++r) {
          ranking.push_back({i, j, r, labels[i], labels[j], p[r]});
        }
      }
      ++row;
    }
  }
  sort_candidates(ranking);
  return ranking;
}

/// R@K, mR@K and zero-shot R@K from ranked candidates. A ground-truth triplet
/// is recalled at K when a candidate among the first K has the same pair,
/// predicate and entity labels.
inline MetricsReport score_rankings(std::span<const SceneRanking> rankings,
                                    std::span<const SceneRecord> scenes,
                                    std::size_t num_rel_classes,
                                    const std::set<TripletClass>& train_triplets,
                                    const EvalOptions& options) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  if (rankings.size() != scenes.size()) {
    throw std::invalid_argument("evaluate: one ranking per scene required");
  }
  MetricsReport report;
  for (std::size_t k : options.ks) {
    std::vector<std::uint64_t> hit_by_class(num_rel_classes, 0);
    std::vector<std::uint64_t> gt_by_class(num_rel_classes, 0);
    std::uint64_t hits = 0, total = 0, zs_hits = 0, zs_total = 0;
    double scene_recall_sum = 0.0;
    std::size_t scenes_with_gt = 0;

    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& scene = scenes[s];
      const auto& ranking = rankings[s];
      const std::size_t top = std::min(k, ranking.size());
      std::uint64_t scene_hits = 0;
      for (const auto& t : scene.triplets) {
        const ClassIndex ls = scene.entities[t.subject].label;
        const ClassIndex lo = scene.entities[t.object].label;
        if (t.predicate >= num_rel_classes) throw std::out_of_range("evaluate: predicate out of range");
        bool found = false;
        for (std::size_t c = 0; c < top && !found; ++c) {
          const auto& cand = ranking[c];
          found = cand.subject == t.subject && cand.object == t.object &&
                  cand.predicate == t.predicate && cand.subj_label == ls && cand.obj_label == lo;
        }
        ++total;
        ++gt_by_class[t.predicate];
        if (found) {
          ++hits;
          ++scene_hits;
          ++hit_by_class[t.predicate];
        }
        if (!train_triplets.contains({ls, t.predicate, lo})) {
          ++zs_total;
          if (found) ++zs_hits;
        }
      }
      if (!scene.triplets.empty()) {
        ++scenes_with_gt;
        scene_recall_sum += static_cast<double>(scene_hits) / static_cast<double>(scene.triplets.size());
      }
    }

    RecallAtK r;
    r.k = k;
    if (options.macro_over_scenes) {
      r.recall = scenes_with_gt == 0 ? 0.0 : scene_recall_sum / static_cast<double>(scenes_with_gt);
    } else {
      r.recall = total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
    }
    if (zs_total > 0) r.zs_recall = static_cast<double>(zs_hits) / static_cast<double>(zs_total);
    double class_sum = 0.0;
    std::size_t populated = 0;
    for (std::size_t c = 1; c < num_rel_classes; ++c) {
      if (gt_by_class[c] == 0) {
        r.per_predicate.emplace_back();
        continue;
      }
      const double rc = static_cast<double>(hit_by_class[c]) / static_cast<double>(gt_by_class[c]);
      r.per_predicate.emplace_back(rc);
      class_sum += rc;
      ++populated;
    }
    r.mean_recall = populated == 0 ? 0.0 : class_sum / static_cast<double>(populated);
    report.at_k.push_back(std::move(r));
  }
  return report;
}

inline MetricsReport evaluate(const ModelParams& params, std::span<const SceneRecord> scenes,
                              const FreqTable& freq, const std::set<TripletClass>& train_triplets,
                              const EvalOptions& options = {}) {
  std::vector<SceneRanking> rankings;
  rankings.reserve(scenes.size());
  for (const auto& s : scenes) rankings.push_back(rank_scene(params, s, freq, options));
  return score_rankings(rankings, scenes, freq.num_rel_classes(), train_triplets, options);
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json k = nlohmann::json::object();
  for (const auto& r : report.at_k) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& v : r.per_predicate) per.push_back(optional_json(v));
    k[std::to_string(r.k)] = {{"recall", r.recall},
                              {"mean_recall", r.mean_recall},
                              {"zs_recall", optional_json(r.zs_recall)},
                              {"per_predicate_recall", std::move(per)}};
  }
  nlohmann::json top_per = nlohmann::json::array();
  if (!report.at_k.empty()) {
    const auto& largest = *std::max_element(report.at_k.begin(), report.at_k.end(),
                                            [](const auto& a, const auto& b) { return a.k < b.k; });
    for (const auto& v : largest.per_predicate) top_per.push_back(optional_json(v));
  }
  nlohmann::json out = {{"k", std::move(k)},
                        {"per_predicate_recall", std::move(top_per)},
                        {"config", report.config}};
  if (!report.history.is_null()) out["history"] = report.history;
  return out;
}

}  // namespace scr

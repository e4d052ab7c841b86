#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "scr/numerics.hpp"
#include "scr/random.hpp"
#include "scr/scene.hpp"

namespace scr {

/// Knobs of the synthetic long-tailed corpus. `num_predicates` counts the
/// non-background predicates; the predicate vocabulary is that plus one.
struct DatasetConfig {
  std::size_t num_scenes = 2000;
  std::size_t min_entities = 4;
  std::size_t max_entities = 10;
  std::size_t num_obj_classes = 12;
  std::size_t num_predicates = 30;
  double zipf_exponent = 1.5;
  double annotation_rate = 0.15;
  std::size_t feature_dim = 16;
  double feature_noise_sigma = 0.5;
  double pair_affinity = 3.0;  // spread of the pair-conditional predicate preferences
  std::uint64_t seed = 42;

  std::size_t num_rel_classes() const noexcept { return num_predicates + 1; }

  void validate() const {
    if (num_obj_classes < 2 || num_predicates < 1) {
      throw std::invalid_argument("DatasetConfig: vocabularies need at least two classes");
    }
    if (max_entities < 2) {
      throw std::invalid_argument("DatasetConfig: max_entities must be at least 2");
    }
    if (min_entities < 2 || min_entities > max_entities) {
      throw std::invalid_argument("DatasetConfig: need 2 <= min_entities <= max_entities");
    }
    if (!(annotation_rate > 0.0 && annotation_rate <= 1.0)) {
      throw std::invalid_argument("DatasetConfig: annotation_rate must lie in (0, 1]");
    }
    if (!(zipf_exponent >= 0.0) || !(feature_noise_sigma >= 0.0) || !(pair_affinity >= 0.0)) {
      throw std::invalid_argument("DatasetConfig: negative distribution parameter");
    }
    if (feature_dim == 0 || num_scenes == 0) {
      throw std::invalid_argument("DatasetConfig: feature_dim and num_scenes must be positive");
    }
  }
};

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"num_scenes", c.num_scenes},
          {"min_entities", c.min_entities},
          {"max_entities", c.max_entities},
          {"num_obj_classes", c.num_obj_classes},
          {"num_predicates", c.num_predicates},
          {"num_rel_classes", c.num_rel_classes()},
          {"zipf_exponent", c.zipf_exponent},
          {"annotation_rate", c.annotation_rate},
          {"feature_dim", c.feature_dim},
          {"feature_noise_sigma", c.feature_noise_sigma},
          {"pair_affinity", c.pair_affinity},
          {"seed", c.seed}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.num_scenes = j.at("num_scenes").get<std::size_t>();
  c.min_entities = j.at("min_entities").get<std::size_t>();
  c.max_entities = j.at("max_entities").get<std::size_t>();
  c.num_obj_classes = j.at("num_obj_classes").get<std::size_t>();
  c.num_predicates = j.at("num_predicates").get<std::size_t>();
  c.zipf_exponent = j.at("zipf_exponent").get<double>();
  c.annotation_rate = j.at("annotation_rate").get<double>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.feature_noise_sigma = j.at("feature_noise_sigma").get<double>();
  c.pair_affinity = j.at("pair_affinity").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

/// Normalized Zipf probabilities for ranks 1..n.
inline RealVector zipf_probabilities(std::size_t n, double exponent) {
  RealVector p(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    p[k] = std::pow(static_cast<double>(k + 1), -exponent);
    total += p[k];
  }
  for (double& x : p) x /= total;
  return p;
}

/// Latent generator of the corpus.
struct GroundTruthModel {
  std::size_t num_obj_classes = 0;
  std::size_t num_rel_classes = 0;
  RealMatrix prototypes;    // num_obj_classes x feature_dim
  RealMatrix conditionals;  // (s * num_obj_classes + o) x num_rel_classes; column 0 is zero

  std::span<const double> conditional(ClassIndex s, ClassIndex o) const {
    return conditionals.row(s * num_obj_classes + o);
  }
};

/// Pair-conditional predicate distributions whose average over uniformly
/// drawn class pairs is exactly the Zipf marginal. Preferences are additive in
/// subject and object class on the log scale; Sinkhorn scaling pins both the
/// per-pair normalization and the marginal.
inline GroundTruthModel make_ground_truth(const DatasetConfig& config, std::uint64_t stream_seed) {
  const std::size_t c_obj = config.num_obj_classes;
  const std::size_t c_rel = config.num_rel_classes();
  const std::size_t preds = config.num_predicates;
  Rng rng(stream_seed);

  GroundTruthModel truth;
  truth.num_obj_classes = c_obj;
  truth.num_rel_classes = c_rel;
  truth.prototypes = RealMatrix(c_obj, config.feature_dim);
  for (double& x : truth.prototypes.data()) x = rng.normal();

  RealMatrix subj_pref(c_obj, preds);
  RealMatrix obj_pref(c_obj, preds);
  for (double& x : subj_pref.data()) x = rng.normal(0.0, config.pair_affinity);
  for (double& x : obj_pref.data()) x = rng.normal(0.0, config.pair_affinity);

  const std::size_t pairs = c_obj * c_obj;
  const RealVector zipf = zipf_probabilities(preds, config.zipf_exponent);
  RealMatrix kernel(pairs, preds);
  for (std::size_t s = 0; s < c_obj; ++s) {
    for (std::size_t o = 0; o < c_obj; ++o) {
      for (std::size_t r = 0; r < preds; ++r) {
        kernel(s * c_obj + o, r) = std::exp(subj_pref(s, r) + obj_pref(o, r));
      }
    }
  }
  RealVector row_scale(pairs, 1.0);
  RealVector col_scale(preds, 1.0);
  const double npairs = static_cast<double>(pairs);
  for (int iter = 0; iter < 20000; ++iter) {
    for (std::size_t p = 0; p < pairs; ++p) {
      double t = 0.0;
      for (std::size_t r = 0; r < preds; ++r) t += kernel(p, r) * col_scale[r];
      row_scale[p] = 1.0 / t;
    }
    double worst = 0.0;
    for (std::size_t r = 0; r < preds; ++r) {
      double t = 0.0;
      for (std::size_t p = 0; p < pairs; ++p) t += row_scale[p] * kernel(p, r);
      const double target = zipf[r] * npairs;
      worst = std::max(worst, std::abs(t * col_scale[r] - target) / target);
      col_scale[r] = target / t;
    }
    if (worst < 1e-13) break;
  }
  truth.conditionals = RealMatrix(pairs, c_rel);
  for (std::size_t p = 0; p < pairs; ++p) {
    double total = 0.0;
    for (std::size_t r = 0; r < preds; ++r) total += row_scale[p] * kernel(p, r) * col_scale[r];
    for (std::size_t r = 0; r < preds; ++r) {
      truth.conditionals(p, r + 1) = row_scale[p] * kernel(p, r) * col_scale[r] / total;
    }
  }
  return truth;
}

inline SceneRecord sample_scene(const DatasetConfig& config, const GroundTruthModel& truth,
                                std::uint64_t scene_seed) {
  Rng rng(scene_seed);
  SceneRecord scene;
  const std::size_t span = config.max_entities - config.min_entities + 1;
  const std::size_t n = config.min_entities + rng.below(span);
  scene.entities.resize(n);
  for (auto& e : scene.entities) {
    e.label = rng.below(config.num_obj_classes);
    e.features.resize(config.feature_dim);
    auto proto = truth.prototypes.row(e.label);
    for (std::size_t k = 0; k < config.feature_dim; ++k) {
      e.features[k] = proto[k] + rng.normal(0.0, config.feature_noise_sigma);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!rng.bernoulli(config.annotation_rate)) continue;
      auto cond = truth.conditional(scene.entities[i].label, scene.entities[j].label);
      scene.triplets.push_back({i, j, rng.categorical(cond)});
    }
  }
  return scene;
}

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// 70 / 10 / 20 by scene order.
inline SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.train = n * 7 / 10;
  s.val = n / 10;
  s.test = n - s.train - s.val;
  return s;
}

struct Dataset {
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> val;
  std::vector<SceneRecord> test;
  GroundTruthModel truth;

  std::vector<SceneRecord> all() const {
    std::vector<SceneRecord> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
  }
};

inline Dataset split_dataset(std::vector<SceneRecord> scenes) {
  const SplitSizes sz = split_sizes(scenes.size());
  Dataset d;
  auto first = std::make_move_iterator(scenes.begin());
  d.train.assign(first, first + static_cast<std::ptrdiff_t>(sz.train));
  d.val.assign(first + static_cast<std::ptrdiff_t>(sz.train),
               first + static_cast<std::ptrdiff_t>(sz.train + sz.val));
  d.test.assign(first + static_cast<std::ptrdiff_t>(sz.train + sz.val),
                std::make_move_iterator(scenes.end()));
  return d;
}

/// (subject class, predicate, object class)
using TripletClass = std::tuple<ClassIndex, ClassIndex, ClassIndex>;

inline std::set<TripletClass> triplet_classes(std::span<const SceneRecord> scenes) {
  std::set<TripletClass> out;
  for (const auto& s : scenes) {
    for (const auto& t : s.triplets) {
      out.emplace(s.entities[t.subject].label, t.predicate, s.entities[t.object].label);
    }
  }
  return out;
}

inline bool has_zero_shot_triplet(std::span<const SceneRecord> train,
                                  std::span<const SceneRecord> test) {
  const auto seen = triplet_classes(train);
  for (const auto& s : test) {
    for (const auto& t : s.triplets) {
      if (!seen.contains({s.entities[t.subject].label, t.predicate, s.entities[t.object].label})) {
        return true;
      }
    }
  }
  return false;
}

/// Generates the corpus as a pure function of the config. Scene k draws from
/// its own stream so scenes are order independent. If the test split holds
/// no triplet class unseen in train, the pair-conditional tables are redrawn.
inline Dataset sample_dataset(const DatasetConfig& config) {
  config.validate();
  constexpr std::uint64_t kMaxAttempts = 32;
  for (std::uint64_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t base = derive_seed(config.seed, attempt);
    GroundTruthModel truth = make_ground_truth(config, derive_seed(base, 0x7472757468ULL));
    std::vector<SceneRecord> scenes(config.num_scenes);
    for (std::size_t k = 0; k < config.num_scenes; ++k) {
      scenes[k] = sample_scene(config, truth, derive_seed(base, 0x100000000ULL + k));
    }
    Dataset d = split_dataset(std::move(scenes));
    d.truth = std::move(truth);
    bool test_has_triplets = false;
    for (const auto& s : d.test) test_has_triplets |= !s.triplets.empty();
    if (!test_has_triplets || has_zero_shot_triplet(d.train, d.test)) return d;
  }
  throw std::runtime_error("sample_dataset: could not produce a zero-shot test triplet");
}

// JSON-lines scene files.

inline nlohmann::json to_json(const SceneRecord& scene) {
  nlohmann::json entities = nlohmann::json::array();
  for (const auto& e : scene.entities) entities.push_back({{"c", e.label}, {"f", e.features}});
  nlohmann::json triplets = nlohmann::json::array();
  for (const auto& t : scene.triplets) triplets.push_back({t.subject, t.object, t.predicate});
  return {{"entities", std::move(entities)}, {"triplets", std::move(triplets)}};
}

/// Vocabulary bounds checked on read, when known.
struct Vocab {
  std::size_t num_obj_classes = 0;
  std::size_t num_rel_classes = 0;
};

inline SceneRecord scene_from_json(const nlohmann::json& j, std::optional<Vocab> vocab = {}) {
  SceneRecord scene;
  for (const auto& je : j.at("entities")) {
    Entity e{je.at("c").get<ClassIndex>(), je.at("f").get<RealVector>()};
    if (vocab && e.label >= vocab->num_obj_classes) {
      throw std::runtime_error("object label " + std::to_string(e.label) + " out of range");
    }
    scene.entities.push_back(std::move(e));
  }
  const std::size_t n = scene.entities.size();
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& jt : j.at("triplets")) {
    if (!jt.is_array() || jt.size() != 3) throw std::runtime_error("triplet must be [s, o, r]");
    Triplet t{jt[0].get<std::size_t>(), jt[1].get<std::size_t>(), jt[2].get<ClassIndex>()};
    if (t.subject >= n || t.object >= n) throw std::runtime_error("triplet entity index out of range");
    if (t.subject == t.object) throw std::runtime_error("triplet subject equals object");
    if (t.predicate == kBackground) throw std::runtime_error("triplet predicate must be >= 1");
    if (vocab && t.predicate >= vocab->num_rel_classes) {
      throw std::runtime_error("predicate " + std::to_string(t.predicate) + " out of range");
    }
    if (!seen.emplace(t.subject, t.object).second) {
      throw std::runtime_error("duplicate annotation for one entity pair");
    }
    scene.triplets.push_back(t);
  }
  return scene;
}

inline void write_jsonl(std::span<const SceneRecord> scenes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : scenes) out << to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<SceneRecord> read_jsonl(const std::filesystem::path& path,
                                           std::optional<Vocab> vocab = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset not found: " + path.string());
  std::vector<SceneRecord> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json(nlohmann::json::parse(line), vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scenes;
}

struct DatasetStats {
  std::vector<std::uint64_t> counts;  // per predicate, background at 0
  double background_share = 0.0;
};

inline DatasetStats dataset_stats(std::span<const SceneRecord> scenes, std::size_t num_rel_classes) {
  if (scenes.empty()) throw std::invalid_argument("dataset_stats: empty corpus");
  DatasetStats st;
  st.counts.assign(num_rel_classes, 0);
  std::uint64_t pairs = 0;
  for (const auto& s : scenes) {
    const std::uint64_t n = s.entities.size();
    pairs += n * (n > 0 ? n - 1 : 0);
    for (const auto& t : s.triplets) {
      if (t.predicate >= num_rel_classes) throw std::out_of_range("dataset_stats: predicate out of range");
      ++st.counts[t.predicate];
    }
  }
  std::uint64_t annotated = 0;
  for (std::size_t r = 1; r < num_rel_classes; ++r) annotated += st.counts[r];
  st.counts[kBackground] = pairs - annotated;
  st.background_share = pairs == 0 ? 0.0 : static_cast<double>(st.counts[kBackground]) / static_cast<double>(pairs);
  return st;
}

inline nlohmann::json to_json(const DatasetStats& st) {
  return {{"counts", st.counts}, {"background_share", st.background_share}};
}

}  // namespace scr

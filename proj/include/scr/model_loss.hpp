#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scr/numerics.hpp"
#include "scr/priors.hpp"
#include "scr/random.hpp"
#include "scr/scene.hpp"
#include "scr/scr_core.hpp"

namespace scr {

enum class Task { PredCls, SgCls };

inline std::string_view to_string(Task t) { return t == Task::PredCls ? "predcls" : "sgcls"; }

inline Task parse_task(std::string_view s) {
  if (s == "predcls") return Task::PredCls;
  if (s == "sgcls") return Task::SgCls;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

/// Fully connected layer: y = x W + b, W is in_dim x out_dim.
struct Dense {
  RealMatrix weight;
  RealVector bias;

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim) : weight(in_dim, out_dim), bias(out_dim, 0.0) {}

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }

  /// Adds x W + b to `out` (which must already have out_dim entries).
  void accumulate(std::span<const double> x, std::span<double> out) const {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += bias[c];
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double xk = x[k];
      auto w = weight.row(k);
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += xk * w[c];
    }
  }

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct ModelDims {
  std::size_t feature_dim = 16;
  std::size_t num_obj_classes = 12;
  std::size_t num_rel_classes = 31;
  std::size_t embedding_dim = kDefaultEmbeddingDim;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Learnable weights of the toy predictor.
struct ModelParams {
  ModelDims dims;
  std::uint64_t seed = 0;
  Dense object_head;             // feature_dim -> |C_obj|
  Dense visual_head;             // 2 * feature_dim -> |C_rel|
  Dense embedding_head;          // 2 * embedding_dim -> |C_rel|
  LabelEmbeddingTable embedding; // |C_obj| x embedding_dim

  ModelParams() = default;
  explicit ModelParams(const ModelDims& d, std::uint64_t seed_value = 0)
      : dims(d),
        seed(seed_value),
        object_head(d.feature_dim, d.num_obj_classes),
        visual_head(2 * d.feature_dim, d.num_rel_classes),
        embedding_head(2 * d.embedding_dim, d.num_rel_classes),
        embedding(d.num_obj_classes, d.embedding_dim) {}

  /// Every learnable block as a mutable view, in a fixed order.
  std::vector<std::pair<std::string, std::span<double>>> blocks() {
    return {{"object_head.weight", object_head.weight.data()},
            {"object_head.bias", object_head.bias},
            {"visual_head.weight", visual_head.weight.data()},
            {"visual_head.bias", visual_head.bias},
            {"embedding_head.weight", embedding_head.weight.data()},
            {"embedding_head.bias", embedding_head.bias},
            {"embedding.table", embedding.weights.data()}};
  }

  std::size_t size() {
    std::size_t n = 0;
    for (auto& [name, block] : blocks()) n += block.size();
    return n;
  }

  RealVector flatten() {
    RealVector out;
    for (auto& [name, block] : blocks()) out.insert(out.end(), block.begin(), block.end());
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != size()) throw std::invalid_argument("ModelParams::assign: size mismatch");
    std::size_t k = 0;
    for (auto& [name, block] : blocks()) {
      for (double& x : block) x = flat[k++];
    }
  }

  bool all_finite() {
    for (auto& [name, block] : blocks()) {
      if (!scr::all_finite(block)) return false;
    }
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p(dims, seed);
  Rng rng(derive_seed(seed, 0x7061726D73ULL));
  for (auto& [name, block] : p.blocks()) {
    if (name.ends_with(".bias")) continue;
    const double sigma = name == "embedding.table" ? 0.5 : 0.01;
    for (double& x : block) x = rng.normal(0.0, sigma);
  }
  return p;
}

struct ObjectBatch {
  RealMatrix features;             // entities x feature_dim
  std::vector<ClassIndex> labels;  // ground truth
};

/// All ordered entity pairs of a set of scenes.
struct PairBatch {
  RealMatrix pair_features;               // pairs x (2 * feature_dim): [x_s ; x_o]
  std::vector<std::size_t> subj_index;    // rows of the matching ObjectBatch
  std::vector<std::size_t> obj_index;
  std::vector<ClassIndex> subj_labels;    // labels fed to the priors
  std::vector<ClassIndex> obj_labels;
  std::vector<ClassIndex> targets;        // predicate, background = 0

  std::size_t size() const noexcept { return targets.size(); }
};

struct SceneBatch {
  ObjectBatch objects;
  PairBatch pairs;
};

/// Flattens scenes into one object batch and one pair batch holding every
/// ordered pair, background included.
inline SceneBatch make_batch(std::span<const SceneRecord* const> scenes) {
  std::size_t entities = 0;
  std::size_t pairs = 0;
  std::size_t dim = 0;
  for (const auto* s : scenes) {
    const std::size_t n = s->entities.size();
    entities += n;
    pairs += n * (n - 1);
    if (n > 0) dim = s->entities.front().features.size();
  }
  if (entities == 0 || pairs == 0 || dim == 0) {
    throw std::invalid_argument("make_batch: no entity pairs");
  }
  SceneBatch b;
  b.objects.features = RealMatrix(entities, dim);
  b.objects.labels.reserve(entities);
  b.pairs.pair_features = RealMatrix(pairs, 2 * dim);
  std::size_t base = 0;
  std::size_t row = 0;
  for (const auto* s : scenes) {
    const std::size_t n = s->entities.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = s->entities[i].features;
      if (f.size() != dim) throw std::invalid_argument("make_batch: inconsistent feature width");
      std::copy(f.begin(), f.end(), b.objects.features.row(base + i).begin());
      b.objects.labels.push_back(s->entities[i].label);
    }
    const auto grid = s->predicate_grid();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        auto dst = b.pairs.pair_features.row(row);
        const auto& fi = s->entities[i].features;
        const auto& fj = s->entities[j].features;
        std::copy(fi.begin(), fi.end(), dst.begin());
        std::copy(fj.begin(), fj.end(), dst.begin() + static_cast<std::ptrdiff_t>(dim));
        b.pairs.subj_index.push_back(base + i);
        b.pairs.obj_index.push_back(base + j);
        b.pairs.subj_labels.push_back(s->entities[i].label);
        b.pairs.obj_labels.push_back(s->entities[j].label);
        b.pairs.targets.push_back(grid[i * n + j]);
        ++row;
      }
    }
    base += n;
  }
  return b;
}

inline RealMatrix object_logits(const ModelParams& params, const RealMatrix& features) {
  if (features.cols() != params.object_head.in_dim()) {
    throw std::invalid_argument("object_logits: feature width " + std::to_string(features.cols()) +
                                " != " + std::to_string(params.object_head.in_dim()));
  }
  RealMatrix out(features.rows(), params.object_head.out_dim());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    params.object_head.accumulate(features.row(i), out.row(i));
  }
  return out;
}

inline std::vector<ClassIndex> argmax_rows(const RealMatrix& m) {
  std::vector<ClassIndex> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    out[i] = static_cast<ClassIndex>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

/// Replaces the prior-facing labels of a pair batch by predicted object labels.
inline void relabel_pairs(PairBatch& pairs, std::span<const ClassIndex> object_labels) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs.subj_labels[i] = object_labels[pairs.subj_index[i]];
    pairs.obj_labels[i] = object_labels[pairs.obj_index[i]];
  }
}

struct PredicateLogits {
  RealMatrix combined;      // R_vis + sigmoid(R_freq) + R_emb
  RealMatrix freq_raw;      // R_freq before the sigmoid
  RealMatrix emb;           // R_emb
  RealMatrix emb_inputs;    // pair embeddings [l_s ; l_o], kept for the backward pass
};

inline PredicateLogits predicate_logits(const ModelParams& params, const PairBatch& batch,
                                        const FreqTable& freq) {
  const auto& d = params.dims;
  if (freq.num_obj_classes() != d.num_obj_classes || freq.num_rel_classes() != d.num_rel_classes) {
    throw std::invalid_argument("predicate_logits: frequency table vocabulary mismatch");
  }
  const std::size_t n = batch.size();
  if (batch.pair_features.rows() != n || batch.subj_labels.size() != n ||
      batch.obj_labels.size() != n) {
    throw std::invalid_argument("predicate_logits: inconsistent pair batch");
  }
  if (batch.pair_features.cols() != params.visual_head.in_dim()) {
    throw std::invalid_argument("predicate_logits: pair feature width mismatch");
  }
  const std::size_t classes = d.num_rel_classes;
  PredicateLogits out{RealMatrix(n, classes), RealMatrix(n, classes), RealMatrix(n, classes),
                      RealMatrix(n, 2 * d.embedding_dim)};
  for (std::size_t i = 0; i < n; ++i) {
    const RealVector fl = freq_logits(freq, batch.subj_labels[i], batch.obj_labels[i]);
    const RealVector pe = pair_embedding(params.embedding, batch.subj_labels[i], batch.obj_labels[i]);
    std::copy(fl.begin(), fl.end(), out.freq_raw.row(i).begin());
    std::copy(pe.begin(), pe.end(), out.emb_inputs.row(i).begin());
    params.embedding_head.accumulate(pe, out.emb.row(i));

    auto r = out.combined.row(i);
    params.visual_head.accumulate(batch.pair_features.row(i), r);
    auto e = out.emb.row(i);
    for (std::size_t c = 0; c < classes; ++c) r[c] += stable_sigmoid(fl[c]) + e[c];
  }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  RealMatrix grad_logits;
};

/// Mean softmax cross-entropy.
inline LossAndGrad object_loss(const RealMatrix& logits, std::span<const ClassIndex> targets) {
  if (logits.empty() || targets.empty()) throw std::invalid_argument("object_loss: empty batch");
  if (targets.size() != logits.rows()) {
    throw std::invalid_argument("object_loss: one target per row required");
  }
  const std::size_t n = logits.rows();
  LossAndGrad out{0.0, RealMatrix(n, logits.cols())};
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= logits.cols()) throw std::out_of_range("object_loss: target out of range");
    const RealVector lsm = log_softmax_row(logits.row(i));
    out.loss -= lsm[targets[i]];
    auto g = out.grad_logits.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = std::exp(lsm[c]) * scale;
    g[targets[i]] -= scale;
  }
  out.loss *= scale;
  return out;
}

/// Weighted cross-entropy normalized by the sum of the sample weights.
/// Weights are constants for the gradient.
inline LossAndGrad relation_loss(const RealMatrix& logits, std::span<const ClassIndex> targets,
                                 std::span<const double> weights) {
  if (logits.empty() || targets.empty()) throw std::invalid_argument("relation_loss: empty batch");
  if (targets.size() != logits.rows() || weights.size() != logits.rows()) {
    throw std::invalid_argument("relation_loss: weight/target length mismatch");
  }
  double weight_sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("relation_loss: weights must be positive");
    weight_sum += w;
  }
  const double gamma = 1.0 / weight_sum;
  const std::size_t n = logits.rows();
  LossAndGrad out{0.0, RealMatrix(n, logits.cols())};
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= logits.cols()) throw std::out_of_range("relation_loss: target out of range");
    const RealVector lsm = log_softmax_row(logits.row(i));
    out.loss -= weights[i] * lsm[targets[i]];
    const double scale = gamma * weights[i];
    auto g = out.grad_logits.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = std::exp(lsm[c]) * scale;
    g[targets[i]] -= scale;
  }
  out.loss *= gamma;
  return out;
}

inline LossAndGrad relation_loss(const RealMatrix& logits, std::span<const ClassIndex> targets,
                                 const SkewDiagnostics& diagnostics) {
  return relation_loss(logits, targets, diagnostics.weight);
}

enum class LossMode { CE, SCR };

inline std::string_view to_string(LossMode m) { return m == LossMode::CE ? "ce" : "scr"; }

inline LossMode parse_loss_mode(std::string_view s) {
  if (s == "ce") return LossMode::CE;
  if (s == "scr") return LossMode::SCR;
  throw std::invalid_argument("unknown loss mode '" + std::string(s) + "'");
}

struct LossConfig {
  LossMode mode = LossMode::SCR;
  SkewVariant variant = SkewVariant::FreqEmb;
  double delta = kDefaultDelta;
  double lambda_skew = kDefaultLambdaSkew;
  Task task = Task::PredCls;
};

struct LossBreakdown {
  double obj_loss = 0.0;
  double rel_loss = 0.0;
  double total = 0.0;
  ModelParams grads;
  SkewDiagnostics diagnostics;
};

/// Object loss plus re-weighted relation loss with analytic gradients for
/// every parameter block. In SGCLS the priors see argmax object predictions.
/// When `frozen` is given its weights replace the ones derived from the batch.
inline LossBreakdown total_loss(const ModelParams& params, const ObjectBatch& objects,
                                const PairBatch& pairs, const FreqTable& freq,
                                const LossConfig& config,
                                const SkewDiagnostics* frozen = nullptr) {
  LossBreakdown out;
  out.grads = ModelParams(params.dims, params.seed);

  const RealMatrix obj_logits = object_logits(params, objects.features);
  const LossAndGrad obj = object_loss(obj_logits, objects.labels);

  const PairBatch* rel_batch = &pairs;
  PairBatch relabeled;
  if (config.task == Task::SgCls) {
    relabeled = pairs;
    relabel_pairs(relabeled, argmax_rows(obj_logits));
    rel_batch = &relabeled;
  }
  const PredicateLogits pl = predicate_logits(params, *rel_batch, freq);

  if (frozen != nullptr) {
    out.diagnostics = *frozen;
  } else if (config.mode == LossMode::CE) {
    out.diagnostics = uniform_diagnostics(pl.combined.rows(), pl.combined.cols());
  } else {
    const SkewLogits skew = skew_logits(pl.freq_raw, pl.emb, config.variant);
    out.diagnostics = compute_sample_weights(skew, rel_batch->targets, config.delta,
                                             config.lambda_skew);
  }
  const LossAndGrad rel = relation_loss(pl.combined, rel_batch->targets, out.diagnostics);

  out.obj_loss = obj.loss;
  out.rel_loss = rel.loss;
  out.total = obj.loss + rel.loss;

  // Object head.
  auto& go = out.grads.object_head;
  for (std::size_t i = 0; i < objects.features.rows(); ++i) {
    auto x = objects.features.row(i);
    auto g = obj.grad_logits.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) go.bias[c] += g[c];
    for (std::size_t k = 0; k < x.size(); ++k) {
      auto w = go.weight.row(k);
      for (std::size_t c = 0; c < g.size(); ++c) w[c] += x[k] * g[c];
    }
  }

  // Visual head, embedding head and the embedding rows that fed each pair.
  auto& gv = out.grads.visual_head;
  auto& ge = out.grads.embedding_head;
  auto& gt = out.grads.embedding.weights;
  const std::size_t dim = params.dims.embedding_dim;
  for (std::size_t i = 0; i < rel_batch->size(); ++i) {
    auto g = rel.grad_logits.row(i);
    auto xv = rel_batch->pair_features.row(i);
    auto xe = pl.emb_inputs.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) {
      gv.bias[c] += g[c];
      ge.bias[c] += g[c];
    }
    for (std::size_t k = 0; k < xv.size(); ++k) {
      auto w = gv.weight.row(k);
      for (std::size_t c = 0; c < g.size(); ++c) w[c] += xv[k] * g[c];
    }
    for (std::size_t k = 0; k < xe.size(); ++k) {
      auto w = ge.weight.row(k);
      auto wp = params.embedding_head.weight.row(k);
      double back = 0.0;
      for (std::size_t c = 0; c < g.size(); ++c) {
        w[c] += xe[k] * g[c];
        back += wp[c] * g[c];
      }
      const ClassIndex owner = k < dim ? rel_batch->subj_labels[i] : rel_batch->obj_labels[i];
      gt(owner, k < dim ? k : k - dim) += back;
    }
  }
  return out;
}

inline void sgd_step(ModelParams& params, ModelParams& grads, double learning_rate) {
  auto dst = params.blocks();
  auto src = grads.blocks();
  for (std::size_t b = 0; b < dst.size(); ++b) {
    auto& p = dst[b].second;
    auto& g = src[b].second;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= learning_rate * g[k];
  }
}

// Checkpoint serialization.

namespace detail {

inline nlohmann::json matrix_to_json(const RealMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

inline void matrix_from_json(const nlohmann::json& j, RealMatrix& m, std::string_view what) {
  if (j.size() != m.rows()) throw std::runtime_error("checkpoint: row count mismatch in " + std::string(what));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (j[i].size() != m.cols()) {
      throw std::runtime_error("checkpoint: column count mismatch in " + std::string(what));
    }
    for (std::size_t c = 0; c < m.cols(); ++c) m(i, c) = j[i][c].get<double>();
  }
}

inline nlohmann::json dense_to_json(const Dense& d) {
  return {{"weight", matrix_to_json(d.weight)}, {"bias", d.bias}};
}

inline void dense_from_json(const nlohmann::json& j, Dense& d, std::string_view what) {
  matrix_from_json(j.at("weight"), d.weight, what);
  auto bias = j.at("bias").get<std::vector<double>>();
  if (bias.size() != d.bias.size()) throw std::runtime_error("checkpoint: bias size mismatch in " + std::string(what));
  d.bias = std::move(bias);
}

}  // namespace detail

inline nlohmann::json to_json(const ModelParams& p) {
  return {{"dims",
           {{"feature_dim", p.dims.feature_dim},
            {"num_obj_classes", p.dims.num_obj_classes},
            {"num_rel_classes", p.dims.num_rel_classes},
            {"embedding_dim", p.dims.embedding_dim}}},
          {"seed", p.seed},
          {"object_head", detail::dense_to_json(p.object_head)},
          {"visual_head", detail::dense_to_json(p.visual_head)},
          {"embedding_head", detail::dense_to_json(p.embedding_head)},
          {"embedding", detail::matrix_to_json(p.embedding.weights)}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  const auto& jd = j.at("dims");
  ModelDims dims{jd.at("feature_dim").get<std::size_t>(), jd.at("num_obj_classes").get<std::size_t>(),
                 jd.at("num_rel_classes").get<std::size_t>(), jd.at("embedding_dim").get<std::size_t>()};
  ModelParams p(dims, j.at("seed").get<std::uint64_t>());
  detail::dense_from_json(j.at("object_head"), p.object_head, "object_head");
  detail::dense_from_json(j.at("visual_head"), p.visual_head, "visual_head");
  detail::dense_from_json(j.at("embedding_head"), p.embedding_head, "embedding_head");
  detail::matrix_from_json(j.at("embedding"), p.embedding.weights, "embedding");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << to_json(p).dump() << '\n';
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint not found: " + path.string());
  return params_from_json(nlohmann::json::parse(in));
}

}  // namespace scr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "scr/model_loss.hpp"
#include "scr/priors.hpp"
#include "scr/random.hpp"
#include "scr/scene.hpp"

namespace scr {

struct TrainConfig {
  LossMode loss_mode = LossMode::SCR;
  SkewVariant skew_variant = SkewVariant::FreqEmb;
  double delta = kDefaultDelta;
  double lambda_skew = kDefaultLambdaSkew;
  Task task = Task::PredCls;
  double learning_rate = 1.0;
  std::size_t epochs = 16;
  std::size_t batch_scenes = 16;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::uint64_t seed = 42;

  LossConfig loss_config() const {
    return {loss_mode, skew_variant, delta, lambda_skew, task};
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  // JSON has no infinities; they are echoed as strings.
  auto real = [](double x) -> nlohmann::json {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
  };
  return {{"loss", std::string(to_string(c.loss_mode))},
          {"variant", std::string(to_string(c.skew_variant))},
          {"delta", real(c.delta)},
          {"lambda_skew", real(c.lambda_skew)},
          {"task", std::string(to_string(c.task))},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_scenes", c.batch_scenes},
          {"embedding_dim", c.embedding_dim},
          {"seed", c.seed}};
}

struct EpochRecord {
  double train_loss = 0.0;  // mean total loss over the epoch's batches
  double obj_loss = 0.0;
  double rel_loss = 0.0;
  double triggered_fraction = 0.0;  // share of pair samples with beta > 0
  std::optional<double> val_loss;   // unweighted total loss on the validation scenes
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_loss;  // total loss at every optimizer step
};

inline nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"train_loss", e.train_loss},
                      {"obj_loss", e.obj_loss},
                      {"rel_loss", e.rel_loss},
                      {"triggered_fraction", e.triggered_fraction},
                      {"val_loss", e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr)}});
  }
  return {{"epochs", std::move(epochs)}, {"step_loss", h.step_loss}};
}

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

inline ModelDims model_dims_for(std::span<const SceneRecord> scenes, const FreqTable& freq,
                                std::size_t embedding_dim) {
  std::size_t feature_dim = 0;
  for (const auto& s : scenes) {
    if (!s.entities.empty()) {
      feature_dim = s.entities.front().features.size();
      break;
    }
  }
  if (feature_dim == 0) throw std::invalid_argument("train: scenes carry no entity features");
  return {feature_dim, freq.num_obj_classes(), freq.num_rel_classes(), embedding_dim};
}

/// Unweighted object + relation loss over a scene set, one scene at a time.
inline double validation_loss(const ModelParams& params, std::span<const SceneRecord> scenes,
                              const FreqTable& freq, Task task) {
  LossConfig ce;
  ce.mode = LossMode::CE;
  ce.task = task;
  double total = 0.0;
  for (const auto& s : scenes) {
    const SceneRecord* one[] = {&s};
    const SceneBatch b = make_batch(one);
    total += total_loss(params, b.objects, b.pairs, freq, ce).total;
  }
  return total / static_cast<double>(scenes.size());
}

/// Mini-batch SGD over whole scenes. Each epoch visits the scenes in an order
/// drawn from the epoch's own stream; re-weighting statistics are computed
/// per batch.
inline TrainResult train(const TrainConfig& config, std::span<const SceneRecord> train_scenes,
                         std::span<const SceneRecord> val_scenes, const FreqTable& freq) {
  if (train_scenes.empty()) throw std::invalid_argument("train: empty training set");
  if (config.batch_scenes == 0) throw std::invalid_argument("train: batch_scenes must be positive");

  TrainResult result;
  result.params = init_params(model_dims_for(train_scenes, freq, config.embedding_dim), config.seed);
  const LossConfig loss = config.loss_config();

  std::vector<std::size_t> order(train_scenes.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    Rng rng(derive_seed(config.seed, 0x65706F6368ULL + epoch));
    rng.shuffle(std::span<std::size_t>(order));

    EpochRecord rec;
    std::size_t batches = 0;
    std::size_t samples = 0;
    std::size_t triggered = 0;
    std::vector<const SceneRecord*> chunk;
    for (std::size_t start = 0; start < order.size(); start += config.batch_scenes) {
      chunk.clear();
      const std::size_t stop = std::min(order.size(), start + config.batch_scenes);
      for (std::size_t k = start; k < stop; ++k) chunk.push_back(&train_scenes[order[k]]);
      const SceneBatch batch = make_batch(chunk);
      LossBreakdown lb = total_loss(result.params, batch.objects, batch.pairs, freq, loss);
      sgd_step(result.params, lb.grads, config.learning_rate);
      if (!result.params.all_finite()) {
        throw std::runtime_error("train: non-finite parameters after step " +
                                 std::to_string(result.history.step_loss.size()));
      }
      result.history.step_loss.push_back(lb.total);
      rec.train_loss += lb.total;
      rec.obj_loss += lb.obj_loss;
      rec.rel_loss += lb.rel_loss;
      for (double b : lb.diagnostics.beta) triggered += b > 0.0 ? 1 : 0;
      samples += lb.diagnostics.beta.size();
      ++batches;
    }
    rec.train_loss /= static_cast<double>(batches);
    rec.obj_loss /= static_cast<double>(batches);
    rec.rel_loss /= static_cast<double>(batches);
    rec.triggered_fraction = static_cast<double>(triggered) / static_cast<double>(samples);
    if (!val_scenes.empty()) {
      rec.val_loss = validation_loss(result.params, val_scenes, freq, config.task);
    }
    result.history.epochs.push_back(rec);
  }
  return result;
}

}  // namespace scr

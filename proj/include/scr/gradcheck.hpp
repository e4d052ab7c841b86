#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scr/model_loss.hpp"
#include "scr/priors.hpp"
#include "scr/random.hpp"
#include "scr/synthgen.hpp"

namespace scr {

/// One randomized gradient-check problem: small vocabularies, a three-scene
/// micro-batch and parameters drawn wider than the training initialization.
struct GradcheckInstance {
  ModelParams params;
  SceneBatch batch;
  FreqTable freq;
  LossConfig loss;
};

inline GradcheckInstance make_gradcheck_instance(std::uint64_t seed) {
  Rng rng(seed);
  DatasetConfig dc;
  dc.num_scenes = 3;
  dc.min_entities = 2;
  dc.max_entities = 2 + rng.below(3);
  dc.num_obj_classes = 2 + rng.below(4);
  dc.num_predicates = 2 + rng.below(5);
  dc.feature_dim = 2 + rng.below(4);
  dc.annotation_rate = 0.5;
  dc.seed = seed;

  std::vector<SceneRecord> scenes;
  const GroundTruthModel truth = make_ground_truth(dc, derive_seed(seed, 1));
  for (std::size_t k = 0; k < dc.num_scenes; ++k) {
    scenes.push_back(sample_scene(dc, truth, derive_seed(seed, 2 + k)));
  }

  GradcheckInstance inst;
  inst.freq = build_freq_table(scenes, dc.num_obj_classes, dc.num_rel_classes());
  ModelDims dims{dc.feature_dim, dc.num_obj_classes, dc.num_rel_classes(), 2 + rng.below(3)};
  inst.params = ModelParams(dims, seed);
  for (auto& [name, block] : inst.params.blocks()) {
    for (double& x : block) x = rng.normal(0.0, 0.7);
  }
  std::vector<const SceneRecord*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  inst.batch = make_batch(ptrs);

  static constexpr SkewVariant kVariants[] = {SkewVariant::Emb, SkewVariant::Freq,
                                              SkewVariant::FreqEmb};
  inst.loss.mode = rng.below(4) == 0 ? LossMode::CE : LossMode::SCR;
  inst.loss.variant = kVariants[rng.below(3)];
  inst.loss.task = rng.below(2) == 0 ? Task::PredCls : Task::SgCls;
  inst.loss.delta = rng.uniform(0.0, 2.0);
  inst.loss.lambda_skew = rng.uniform(0.02, 0.2);
  return inst;
}

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_block;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
};

/// Compares the analytic gradient of every parameter block with central
/// differences of the loss, holding the sample weights of the base point fixed.
inline GradcheckReport run_gradcheck(std::size_t instances, std::uint64_t seed, double h = 1e-5,
                                     double abs_floor = 1e-7) {
  GradcheckReport report;
  for (std::size_t n = 0; n < instances; ++n) {
    GradcheckInstance inst = make_gradcheck_instance(derive_seed(seed, n));
    const LossBreakdown base =
        total_loss(inst.params, inst.batch.objects, inst.batch.pairs, inst.freq, inst.loss);
    ModelParams probe = inst.params;
    auto f = [&](const RealVector& flat) {
      probe.assign(flat);
      return total_loss(probe, inst.batch.objects, inst.batch.pairs, inst.freq, inst.loss,
                        &base.diagnostics)
          .total;
    };
    const RealVector numeric = finite_diff_gradient(f, inst.params.flatten(), h);
    ModelParams grads = base.grads;
    std::size_t k = 0;
    for (auto& [name, block] : grads.blocks()) {
      for (double g : block) {
        const double err = gradient_rel_error(g, numeric[k++], abs_floor);
        if (err > report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_block = name;
        }
      }
    }
    report.coordinates += k;
    ++report.instances;
  }
  return report;
}

}  // namespace scr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "scr/numerics.hpp"
#include "scr/random.hpp"
#include "scr/scene.hpp"

namespace scr {

inline constexpr double kFreqSmoothing = 1e-3;
inline constexpr double kFreqLogitClamp = 30.0;

/// Empirical (subject class, object class) -> predicate count table.
class FreqTable {
 public:
  FreqTable() = default;
  FreqTable(std::size_t num_obj_classes, std::size_t num_rel_classes,
            double epsilon = kFreqSmoothing)
      : num_obj_(num_obj_classes),
        num_rel_(num_rel_classes),
        epsilon_(epsilon),
        counts_(num_obj_classes * num_obj_classes * num_rel_classes, 0) {
    if (num_obj_classes == 0 || num_rel_classes < 2) {
      throw std::invalid_argument("FreqTable: invalid vocabulary sizes");
    }
    if (!(epsilon > 0.0)) {
      throw std::invalid_argument("FreqTable: smoothing epsilon must be positive");
    }
  }

  std::size_t num_obj_classes() const noexcept { return num_obj_; }
  std::size_t num_rel_classes() const noexcept { return num_rel_; }
  double epsilon() const noexcept { return epsilon_; }

  std::uint64_t& at(ClassIndex s, ClassIndex o, ClassIndex r) {
    check(s, o, r);
    return counts_[(s * num_obj_ + o) * num_rel_ + r];
  }
  std::uint64_t at(ClassIndex s, ClassIndex o, ClassIndex r) const {
    check(s, o, r);
    return counts_[(s * num_obj_ + o) * num_rel_ + r];
  }

  std::span<const std::uint64_t> pair_counts(ClassIndex s, ClassIndex o) const {
    check(s, o, 0);
    return {counts_.data() + (s * num_obj_ + o) * num_rel_, num_rel_};
  }

  std::uint64_t total() const noexcept {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  /// Smoothed conditional distribution over predicates for (s, o).
  RealVector probabilities(ClassIndex s, ClassIndex o) const {
    auto c = pair_counts(s, o);
    double denom = epsilon_ * static_cast<double>(num_rel_);
    for (auto x : c) denom += static_cast<double>(x);
    RealVector p(num_rel_);
    for (std::size_t r = 0; r < num_rel_; ++r) p[r] = (static_cast<double>(c[r]) + epsilon_) / denom;
    return p;
  }

  friend bool operator==(const FreqTable&, const FreqTable&) = default;

 private:
  void check(ClassIndex s, ClassIndex o, ClassIndex r) const {
    if (s >= num_obj_ || o >= num_obj_ || r >= num_rel_) {
      throw std::out_of_range("FreqTable: index out of range");
    }
  }

  std::size_t num_obj_ = 0;
  std::size_t num_rel_ = 0;
  double epsilon_ = kFreqSmoothing;
  std::vector<std::uint64_t> counts_;
};

/// Counts every ordered entity pair of every scene; unannotated pairs land in
/// the background column.
inline FreqTable build_freq_table(std::span<const SceneRecord> scenes, std::size_t num_obj_classes,
                                  std::size_t num_rel_classes, double epsilon = kFreqSmoothing) {
  FreqTable table(num_obj_classes, num_rel_classes, epsilon);
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const auto& scene = scenes[k];
    const std::size_t n = scene.entities.size();
    for (const auto& e : scene.entities) {
      if (e.label >= num_obj_classes) {
        throw std::out_of_range("build_freq_table: scene " + std::to_string(k) +
                                " has object label " + std::to_string(e.label) + " out of range");
      }
    }
    for (const auto& t : scene.triplets) {
      if (t.predicate >= num_rel_classes || t.subject >= n || t.object >= n) {
        throw std::out_of_range("build_freq_table: scene " + std::to_string(k) +
                                " has an invalid triplet");
      }
    }
    const auto grid = scene.predicate_grid();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        ++table.at(scene.entities[i].label, scene.entities[j].label, grid[i * n + j]);
      }
    }
  }
  return table;
}

/// Log-odds of the smoothed pair-conditional predicate distribution, clamped
/// to +-30. Sigmoid of these recovers the smoothed probabilities.
inline RealVector freq_logits(const FreqTable& table, ClassIndex subj, ClassIndex obj) {
  RealVector p = table.probabilities(subj, obj);
  for (double& x : p) {
    x = std::clamp(std::log(x / (1.0 - x)), -kFreqLogitClamp, kFreqLogitClamp);
  }
  return p;
}

inline nlohmann::json to_json(const FreqTable& table) {
  nlohmann::json counts = nlohmann::json::array();
  for (std::size_t s = 0; s < table.num_obj_classes(); ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t o = 0; o < table.num_obj_classes(); ++o) {
      auto c = table.pair_counts(s, o);
      row.push_back(std::vector<std::uint64_t>(c.begin(), c.end()));
    }
    counts.push_back(std::move(row));
  }
  return {{"num_obj_classes", table.num_obj_classes()},
          {"num_rel_classes", table.num_rel_classes()},
          {"epsilon", table.epsilon()},
          {"counts", std::move(counts)}};
}

inline FreqTable freq_table_from_json(const nlohmann::json& j) {
  FreqTable table(j.at("num_obj_classes").get<std::size_t>(),
                  j.at("num_rel_classes").get<std::size_t>(), j.at("epsilon").get<double>());
  const auto& counts = j.at("counts");
  if (counts.size() != table.num_obj_classes()) {
    throw std::runtime_error("freq table: subject dimension mismatch");
  }
  for (std::size_t s = 0; s < table.num_obj_classes(); ++s) {
    if (counts[s].size() != table.num_obj_classes()) {
      throw std::runtime_error("freq table: object dimension mismatch");
    }
    for (std::size_t o = 0; o < table.num_obj_classes(); ++o) {
      const auto& cell = counts[s][o];
      if (cell.size() != table.num_rel_classes()) {
        throw std::runtime_error("freq table: predicate dimension mismatch");
      }
      for (std::size_t r = 0; r < table.num_rel_classes(); ++r) {
        table.at(s, o, r) = cell[r].get<std::uint64_t>();
      }
    }
  }
  return table;
}

inline void save_freq_table(const FreqTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(table).dump() << '\n';
}

inline FreqTable load_freq_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("freq table not found: " + path.string());
  return freq_table_from_json(nlohmann::json::parse(in));
}

inline constexpr std::size_t kDefaultEmbeddingDim = 16;

/// Learnable per-object-class label embeddings.
struct LabelEmbeddingTable {
  RealMatrix weights;  // num_obj_classes x dim

  LabelEmbeddingTable() = default;
  LabelEmbeddingTable(std::size_t num_obj_classes, std::size_t dim)
      : weights(num_obj_classes, dim) {}

  std::size_t num_classes() const noexcept { return weights.rows(); }
  std::size_t dim() const noexcept { return weights.cols(); }

  void randomize(Rng& rng, double sigma) {
    for (double& x : weights.data()) x = rng.normal(0.0, sigma);
  }

  friend bool operator==(const LabelEmbeddingTable&, const LabelEmbeddingTable&) = default;
};

/// [l_subj ; l_obj]
inline RealVector pair_embedding(const LabelEmbeddingTable& emb, ClassIndex subj, ClassIndex obj) {
  if (subj >= emb.num_classes() || obj >= emb.num_classes()) {
    throw std::out_of_range("pair_embedding: class index out of range");
  }
  RealVector out;
  out.reserve(2 * emb.dim());
  auto a = emb.weights.row(subj);
  auto b = emb.weights.row(obj);
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace scr

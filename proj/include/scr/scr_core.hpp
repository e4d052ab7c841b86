#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scr/numerics.hpp"

namespace scr {

/// Which non-visual logits feed the skew-logit estimate.
enum class SkewVariant { Emb, Freq, FreqEmb };

inline std::string_view to_string(SkewVariant v) {
  switch (v) {
    case SkewVariant::Emb: return "emb";
    case SkewVariant::Freq: return "freq";
    case SkewVariant::FreqEmb: return "freq-emb";
  }
  return "?";
}

inline SkewVariant parse_skew_variant(std::string_view s) {
  if (s == "emb") return SkewVariant::Emb;
  if (s == "freq") return SkewVariant::Freq;
  if (s == "freq-emb" || s == "freq_emb" || s == "freq+emb") return SkewVariant::FreqEmb;
  throw std::invalid_argument("unknown skew variant '" + std::string(s) + "'");
}

/// Sigmoid-activated non-visual predicate scores, one row per pair sample.
/// Every entry lies strictly inside (0, 1).
using SkewLogits = RealMatrix;

/// Per-predicate pseudo-counts: column sums of the skew logits.
using SampleEstimates = RealVector;

/// Everything the re-weighting step derives for one mini-batch.
struct SkewDiagnostics {
  RealVector skew;              // target-anchored skewness per sample
  RealVector entropy;           // scaled entropy per sample, in [0, lambda_skew]
  RealVector beta;              // 0 for samples at or below threshold
  RealVector effective_number;  // E at the sample's own target class
  RealVector weight;            // final weight at the sample's target class
  RealMatrix class_weights;     // per-sample weight vector; rows sum to |C_rel|
  SampleEstimates estimates;
  double threshold = 0.0;
  double mean_skew = 0.0;
};

inline constexpr double kDefaultDelta = 0.7;
inline constexpr double kDefaultLambdaSkew = 0.06;
inline constexpr double kMaxBeta = 1.0 - 1e-9;
inline constexpr double kMinSkewVariance = 1e-12;

inline SkewLogits skew_logits(const RealMatrix& freq_logits, const RealMatrix& emb_logits,
                              SkewVariant variant) {
  if (!freq_logits.same_shape(emb_logits)) {
    throw std::invalid_argument("skew_logits: shape mismatch between freq and emb logits");
  }
  SkewLogits out(freq_logits.rows(), freq_logits.cols());
  auto src_f = freq_logits.data();
  auto src_e = emb_logits.data();
  auto dst = out.data();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    double z = 0.0;
    switch (variant) {
      case SkewVariant::Emb: z = src_e[k]; break;
      case SkewVariant::Freq: z = src_f[k]; break;
      case SkewVariant::FreqEmb: z = src_f[k] + src_e[k]; break;
    }
    dst[k] = stable_sigmoid(z);
  }
  return out;
}

inline SampleEstimates sample_estimates(const SkewLogits& skew) {
  if (skew.empty()) {
    throw std::invalid_argument("sample_estimates: empty batch");
  }
  SampleEstimates m(skew.cols(), 0.0);
  for (std::size_t i = 0; i < skew.rows(); ++i) {
    auto r = skew.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) m[j] += r[j];
  }
  return m;
}

/// Third standardized moment of the row's deviations from the target entry
/// (not from the row mean). Rows with vanishing spread around the target
/// return exactly 0.
inline double target_skew(std::span<const double> row, ClassIndex y) {
  if (y >= row.size()) {
    throw std::out_of_range("target_skew: target index " + std::to_string(y) +
                            " out of range for " + std::to_string(row.size()) + " classes");
  }
  const double anchor = row[y];
  double m2 = 0.0;
  double m3 = 0.0;
  for (double r : row) {
    const double d = r - anchor;
    m2 += d * d;
    m3 += d * d * d;
  }
  const double n = static_cast<double>(row.size());
  m2 /= n;
  m3 /= n;
  if (m2 < kMinSkewVariance) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

/// lambda * normalized entropy of the row, with log base |C_rel|.
inline double entropy_skew(std::span<const double> row, double lambda_skew) {
  if (!(lambda_skew > 0.0)) {
    throw std::invalid_argument("entropy_skew: lambda_skew must be positive");
  }
  if (row.size() < 2) {
    throw std::invalid_argument("entropy_skew: need at least two classes");
  }
  const RealVector p = normalize_positive(row);
  const double log_base = std::log(static_cast<double>(row.size()));
  double h = 0.0;
  for (double pj : p) {
    if (pj > 0.0) h -= pj * (std::log(pj) / log_base);
  }
  h = std::clamp(h, 0.0, 1.0);
  return lambda_skew * h;
}

inline double skew_threshold(std::span<const double> skews, double delta) {
  if (skews.empty()) {
    throw std::invalid_argument("skew_threshold: empty skew vector");
  }
  double total = 0.0;
  for (double s : skews) total += s;
  return total / static_cast<double>(skews.size()) - delta;
}

/// (1 - beta^m) / (1 - beta), with a real-valued exponent.
inline double effective_number(double beta, double m) {
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw std::invalid_argument("effective_number: beta must lie in [0, 1)");
  }
  if (beta == 0.0) return 1.0;
  const double power = std::exp(m * std::log(beta));
  return (1.0 - power) / (1.0 - beta);
}

/// Per-sample loss weights for one mini-batch.
///
/// Samples whose target skew exceeds the batch threshold get
/// beta = 1 - H_skew; all others get beta = 0 and therefore uniform weights.
/// Each sample's class-weight vector is 1 / E(beta_i, max(m_j, 1)) rescaled to
/// sum to the number of classes; the returned weight is its target entry.
inline SkewDiagnostics compute_sample_weights(const SkewLogits& skew,
                                              std::span<const ClassIndex> targets,
                                              double delta = kDefaultDelta,
                                              double lambda_skew = kDefaultLambdaSkew) {
  if (skew.empty()) {
    throw std::invalid_argument("compute_sample_weights: empty batch");
  }
  if (targets.size() != skew.rows()) {
    throw std::invalid_argument("compute_sample_weights: one target per row required");
  }
  const std::size_t n = skew.rows();
  const std::size_t classes = skew.cols();

  SkewDiagnostics d;
  d.estimates = sample_estimates(skew);
  d.skew.resize(n);
  d.entropy.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= classes) {
      throw std::out_of_range("compute_sample_weights: target " + std::to_string(targets[i]) +
                              " at row " + std::to_string(i) + " out of range");
    }
    d.skew[i] = target_skew(skew.row(i), targets[i]);
    d.entropy[i] = entropy_skew(skew.row(i), lambda_skew);
  }
  d.threshold = skew_threshold(d.skew, delta);
  d.mean_skew = skew_threshold(d.skew, 0.0);

  RealVector counts(classes);
  for (std::size_t j = 0; j < classes; ++j) counts[j] = std::max(d.estimates[j], 1.0);

  d.beta.assign(n, 0.0);
  d.effective_number.resize(n);
  d.weight.resize(n);
  d.class_weights = RealMatrix(n, classes);
  const double class_count = static_cast<double>(classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (d.skew[i] > d.threshold) {
      d.beta[i] = std::min(1.0 - d.entropy[i], kMaxBeta);
    }
    auto w = d.class_weights.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      w[j] = 1.0 / effective_number(d.beta[i], counts[j]);
      total += w[j];
    }
    for (std::size_t j = 0; j < classes; ++j) w[j] = w[j] * class_count / total;
    d.effective_number[i] = effective_number(d.beta[i], counts[targets[i]]);
    d.weight[i] = w[targets[i]];
  }
  return d;
}

/// Diagnostics for plain cross-entropy: every weight is 1.
inline SkewDiagnostics uniform_diagnostics(std::size_t rows, std::size_t classes) {
  SkewDiagnostics d;
  d.skew.assign(rows, 0.0);
  d.entropy.assign(rows, 0.0);
  d.beta.assign(rows, 0.0);
  d.effective_number.assign(rows, 1.0);
  d.weight.assign(rows, 1.0);
  d.class_weights = RealMatrix(rows, classes, 1.0);
  return d;
}

}  // namespace scr

#pragma once

// Training objectives for the three stages: binary cross-entropy over
// documents, categorical cross-entropy over document pairs and answer types,
// soft-target cross-entropy for the span heads, and the weighted totals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3/core.hpp"

namespace r3 {

inline constexpr double kProbFloor = 1e-12;

/// Probabilities entering a log are kept inside [1e-12, 1 - 1e-12].
inline double clamp_prob(double p) noexcept {
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

struct LossWeights {
  double lambda1 = 1.0;  // retrieve
  double lambda2 = 1.0;  // refine
  double lambda3 = 1.0;  // answer type
  double lambda4 = 1.0;  // start + end
  double lambda5 = 1.0;  // supporting facts

  void validate() const {
    for (double w : {lambda1, lambda2, lambda3, lambda4, lambda5}) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
      }
    }
  }
};

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double total = 0.0;
  for (double x : xs) total += std::exp(x - hi);
  return hi + std::log(total);
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  for (double x : logits) {
    if (!std::isfinite(x)) throw std::invalid_argument("log_softmax: non-finite logit");
  }
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// -sum_k target_k * log p_k.
inline double soft_cross_entropy(const Distribution& target,
                                 std::span<const double> predicted_log_probs) {
  if (target.size() != predicted_log_probs.size()) {
    throw std::invalid_argument("soft_cross_entropy: length mismatch (" +
                                std::to_string(target.size()) + " vs " +
                                std::to_string(predicted_log_probs.size()) + ")");
  }
  for (double lp : predicted_log_probs) {
    if (!std::isfinite(lp)) throw std::invalid_argument("soft_cross_entropy: non-finite log prob");
  }
  if (std::abs(log_sum_exp(predicted_log_probs)) > 1e-6) {
    throw std::invalid_argument("soft_cross_entropy: predictions are not a log-distribution");
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] != 0.0) loss -= target[k] * predicted_log_probs[k];
  }
  return loss;
}

/// Mean binary cross-entropy. Labels may be soft (any value in [0,1]).
inline double binary_cross_entropy(std::span<const double> labels, std::span<const double> probs) {
  if (labels.size() != probs.size()) {
    throw std::invalid_argument("binary_cross_entropy: length mismatch");
  }
  if (labels.empty()) throw std::invalid_argument("binary_cross_entropy: no entries");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i];
    if (!(y >= 0.0 && y <= 1.0)) throw std::invalid_argument("binary_cross_entropy: label outside [0,1]");
    if (!std::isfinite(probs[i]) || probs[i] < 0.0 || probs[i] > 1.0) {
      throw std::invalid_argument("binary_cross_entropy: probability outside [0,1]");
    }
    const double p = clamp_prob(probs[i]);
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return total / static_cast<double>(labels.size());
}

inline double retrieval_bce(std::span<const double> labels, std::span<const double> probs) {
  return binary_cross_entropy(labels, probs);
}

/// -log p(gold pair); exactly one label must be 1.
inline double refine_ce(std::span<const int> labels, std::span<const double> pair_log_probs) {
  if (labels.size() != pair_log_probs.size()) {
    throw std::invalid_argument("refine_ce: length mismatch");
  }
  std::size_t gold = labels.size();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("refine_ce: labels must be 0/1");
    if (labels[i] == 1) {
      gold = i;
      ++positives;
    }
  }
  if (positives != 1) {
    throw std::invalid_argument("refine_ce: expected exactly one gold pair, found " +
                                std::to_string(positives));
  }
  return -std::log(clamp_prob(std::exp(pair_log_probs[gold])));
}

inline double type_ce(int label, std::span<const double> type_log_probs) {
  if (type_log_probs.size() != 3) throw std::invalid_argument("type_ce: expected 3 log probs");
  if (label < 0 || label > 2) throw std::out_of_range("type_ce: label outside {0,1,2}");
  return -std::log(clamp_prob(std::exp(type_log_probs[static_cast<std::size_t>(label)])));
}

inline double retrieval_total(double l_retrieve, double l_refine, const LossWeights& w) {
  return w.lambda1 * l_retrieve + w.lambda2 * l_refine;
}

inline double reading_total(double l_type, double l_start, double l_end, double l_sup,
                            const LossWeights& w) {
  return w.lambda3 * l_type + w.lambda4 * (l_start + l_end) + w.lambda5 * l_sup;
}

/// Binary analogue of uniform smoothing: (1 - eps) * y + eps / 2.
inline double smooth_binary_label(double y, double epsilon) {
  return (1.0 - epsilon) * y + epsilon * 0.5;
}

}  // namespace r3

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "opseg/core.hpp"

namespace opseg {

/// Sentinel category id for the background entry of a classification
/// label space.
inline constexpr CategoryId kBackgroundLabel = 0xFFFFFFFEu;

/// Logits over the ordered label space: known things, one background entry,
/// and any number of unknown classes.
struct ClassScores {
  std::vector<double> logits;
  std::vector<CategoryId> label_space;

  void validate() const {
    if (logits.size() != label_space.size())
      throw std::invalid_argument("ClassScores: logits/label_space size mismatch");
    std::size_t bg = 0;
    for (CategoryId c : label_space)
      if (c == kBackgroundLabel) ++bg;
    if (bg != 1)
      throw std::invalid_argument("ClassScores: label space must contain exactly one bg entry");
  }

  std::size_t bg_index() const {
    for (std::size_t i = 0; i < label_space.size(); ++i)
      if (label_space[i] == kBackgroundLabel) return i;
    throw std::invalid_argument("ClassScores: no bg entry");
  }
};

struct LossOutput {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Max-shifted softmax; probabilities are strictly positive and sum to 1.
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  double mx = logits[0];
  for (double z : logits) {
    if (std::isnan(z)) throw std::invalid_argument("softmax: NaN logit");
    mx = std::max(mx, z);
  }
  std::vector<double> probs(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

/// Cross-entropy against a one-hot target: value -log p_target, gradient
/// p - onehot(target).
inline LossOutput ce_loss(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size())
    throw std::out_of_range("ce_loss: target outside the label space");
  std::vector<double> probs = softmax(logits);
  LossOutput out;
  out.value = -std::log(probs[target]);
  out.gradient = std::move(probs);
  out.gradient[target] -= 1.0;
  return out;
}

/// Negative supervision for void-region boxes: sum over known thing classes
/// of -log(1 - p_c). Probabilities are capped at 1 - 1e-12 inside the log so
/// saturated logits stay finite.
inline LossOutput void_suppression_loss(
    std::span<const double> logits, std::span<const std::size_t> known_thing_indices) {
  std::vector<double> probs = softmax(logits);
  for (std::size_t c : known_thing_indices)
    if (c >= logits.size())
      throw std::out_of_range("void_suppression_loss: index outside the label space");

  constexpr double kCap = 1.0 - 1e-12;
  LossOutput out;
  out.gradient.assign(logits.size(), 0.0);

  // d/dz_j of -sum log(1-p_c)  =  [j in S] r_j - p_j * sum_c r_c,
  // with r_c = p_c / (1-p_c).
  double ratio_sum = 0.0;
  for (std::size_t c : known_thing_indices) {
    const double p = std::min(probs[c], kCap);
    out.value += -std::log1p(-p);
    const double r = p / (1.0 - p);
    ratio_sum += r;
    out.gradient[c] += r;
  }
  for (std::size_t j = 0; j < probs.size(); ++j)
    out.gradient[j] -= probs[j] * ratio_sum;
  return out;
}

/// Total classification loss: cross-entropy plus, for void-region boxes, the
/// weighted suppression term. void_weight defaults to the unit sum.
inline LossOutput total_cls_loss(std::span<const double> logits,
                                 std::size_t target, bool is_void,
                                 std::span<const std::size_t> known_thing_indices,
                                 double void_weight = 1.0) {
  LossOutput out = ce_loss(logits, target);
  if (is_void) {
    const LossOutput v = void_suppression_loss(logits, known_thing_indices);
    out.value += void_weight * v.value;
    for (std::size_t i = 0; i < out.gradient.size(); ++i)
      out.gradient[i] += void_weight * v.gradient[i];
  }
  return out;
}

/// Indices of the known thing entries of a label space.
inline std::vector<std::size_t> known_thing_indices(
    const ClassScores& scores, const CategoryTable& cats) {
  scores.validate();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < scores.label_space.size(); ++i) {
    const CategoryId c = scores.label_space[i];
    if (c == kBackgroundLabel) continue;
    const CategoryEntry& e = cats.at(c);
    if (e.status == Status::Known && e.kind == Kind::Thing) idx.push_back(i);
  }
  return idx;
}

}  // namespace opseg

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dermo/errors.hpp"
#include "dermo/label_space.hpp"

namespace dermo {

/// Per-class loss multipliers. For weights derived from counts the mean
/// per-sample weight over the source counts is 1.
class ClassWeights {
 public:
  ClassWeights(std::vector<double> weights, std::vector<std::size_t> source_counts)
      : weights_(std::move(weights)), source_counts_(std::move(source_counts)) {
    if (weights_.empty()) throw ContractError("class weights: empty");
    for (double w : weights_)
      if (!(w > 0.0) || !std::isfinite(w)) throw ContractError("class weights must be positive and finite");
    if (!source_counts_.empty() && source_counts_.size() != weights_.size())
      throw ContractError("class weights: counts and weights differ in length");
  }

  static ClassWeights uniform(std::size_t k) { return ClassWeights(std::vector<double>(k, 1.0), {}); }

  std::size_t size() const noexcept { return weights_.size(); }
  double operator[](std::size_t c) const { return weights_.at(c); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<std::size_t>& source_counts() const noexcept { return source_counts_; }

 private:
  std::vector<double> weights_;
  std::vector<std::size_t> source_counts_;
};

/// w_c = N / (K * n_c).
inline ClassWeights compute_class_weights(std::span<const std::size_t> counts,
                                          const LabelSpace* space = nullptr) {
  if (counts.empty()) throw EmptyInputError("compute_class_weights: no classes");
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0)
      throw DegenerateClassError("compute_class_weights: class " +
                                 (space && c < space->size() ? space->code(c) : std::to_string(c)) +
                                 " has no training samples");
    total += static_cast<double>(counts[c]);
  }
  const double k = static_cast<double>(counts.size());
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) w[c] = total / (k * static_cast<double>(counts[c]));
  return ClassWeights(std::move(w), {counts.begin(), counts.end()});
}

struct LossValue {
  double value = 0.0;
  /// Row-major [sample][class]; empty when not requested.
  std::vector<double> gradient_wrt_logits;
};

namespace detail {

/// Numerically stable softmax (max-logit subtracted). Returns log-sum-exp of the shifted logits.
inline double softmax_into(std::span<const double> logits, std::span<double> probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
  return std::log(sum);
}

inline void check_logits(std::span<const double> logits, std::size_t true_class, const ClassWeights& w) {
  if (logits.size() != w.size())
    throw ContractError("weighted_cross_entropy: " + std::to_string(logits.size()) + " logits for " +
                        std::to_string(w.size()) + " class weights");
  if (true_class >= logits.size()) throw ContractError("weighted_cross_entropy: class index out of range");
  for (double z : logits)
    if (!std::isfinite(z)) throw NumericInputError("weighted_cross_entropy: non-finite logit");
}

}  // namespace detail

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw EmptyInputError("softmax: empty logits");
  std::vector<double> p(logits.size());
  detail::softmax_into(logits, p);
  return p;
}

/// -w[y] * log softmax(z)[y] and its gradient w[y] * (softmax(z) - onehot(y)).
inline LossValue weighted_cross_entropy(std::span<const double> logits, std::size_t true_class,
                                        const ClassWeights& w) {
  detail::check_logits(logits, true_class, w);
  const double mx = *std::max_element(logits.begin(), logits.end());
  LossValue out;
  out.gradient_wrt_logits.resize(logits.size());
  const double log_sum = detail::softmax_into(logits, out.gradient_wrt_logits);
  const double wy = w[true_class];
  // -log p_y = log sum exp(z - max) - (z_y - max)
  out.value = std::max(0.0, wy * (log_sum - (logits[true_class] - mx)));
  for (auto& g : out.gradient_wrt_logits) g *= wy;
  out.gradient_wrt_logits[true_class] -= wy;
  return out;
}

struct LabeledLogits {
  std::vector<double> logits;
  std::size_t true_class;
};

/// Mean weighted loss over a batch; per-sample gradients are scaled by 1/batch.
inline LossValue batch_loss(std::span<const LabeledLogits> samples, const ClassWeights& w) {
  if (samples.empty()) throw EmptyInputError("batch_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(samples.size());
  LossValue out;
  out.gradient_wrt_logits.reserve(samples.size() * w.size());
  for (const auto& s : samples) {
    auto one = weighted_cross_entropy(s.logits, s.true_class, w);
    out.value += one.value;
    for (double g : one.gradient_wrt_logits) out.gradient_wrt_logits.push_back(g * inv);
  }
  out.value *= inv;
  return out;
}

}  // namespace dermo

#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dermo/errors.hpp"

namespace dermo {

/// Nonnegative vector summing to 1. The unit of prediction, ensembling and submission.
class ClassProbabilities {
 public:
  static constexpr double kSumTolerance = 1e-6;

  explicit ClassProbabilities(std::vector<double> p, double sum_tolerance = kSumTolerance) : p_(std::move(p)) {
    if (p_.empty()) throw ContractError("class probabilities: empty vector");
    double sum = 0.0;
    for (double v : p_) {
      if (!std::isfinite(v) || v < 0.0) throw ContractError("class probabilities: entry is negative or non-finite");
      sum += v;
    }
    if (std::abs(sum - 1.0) > sum_tolerance)
      throw ContractError("class probabilities: entries sum to " + std::to_string(sum));
  }

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_.at(i); }
  std::span<const double> values() const noexcept { return p_; }

  /// Index of the largest entry; exact ties go to the lowest index.
  std::size_t argmax() const noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p_.size(); ++i)
      if (p_[i] > p_[best]) best = i;
    return best;
  }

  bool operator==(const ClassProbabilities&) const = default;

 private:
  std::vector<double> p_;
};

}  // namespace dermo

#pragma once

#include <vector>

#include "scyclegan/image.hpp"

namespace scg {

/// Hard Dice, micro-averaged: pixel counts are pooled over every added
/// (prediction, target) pair before the per-class ratio is taken.
class DiceAccumulator {
 public:
  explicit DiceAccumulator(int num_classes = kNumClasses)
      : intersection_(num_classes, 0), predicted_(num_classes, 0), target_(num_classes, 0) {}

  void add(const ClassMask& prediction, const ClassMask& target) {
    if (prediction.height != target.height || prediction.width != target.width) {
      throw ShapeError("dice: prediction and target sizes differ");
    }
    const int classes = num_classes();
    for (std::size_t i = 0; i < target.labels.size(); ++i) {
      const int p = prediction.labels[i], t = target.labels[i];
      if (p >= classes || t >= classes) throw DataError("dice: label outside class range");
      ++predicted_[p];
      ++target_[t];
      if (p == t) ++intersection_[p];
    }
  }

  int num_classes() const { return static_cast<int>(intersection_.size()); }

  /// 2|A n B| / (|A| + |B|), or 1 when the class is absent from both.
  std::vector<double> coefficients() const {
    std::vector<double> out(intersection_.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
      const long long denom = predicted_[c] + target_[c];
      out[c] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(intersection_[c]) / static_cast<double>(denom);
    }
    return out;
  }

  /// Mean over classes 1..C-1.
  double mean_foreground() const { return mean_foreground_of(coefficients()); }

  static double mean_foreground_of(const std::vector<double>& coefficients) {
    if (coefficients.size() < 2) return 0.0;
    double s = 0.0;
    for (std::size_t c = 1; c < coefficients.size(); ++c) s += coefficients[c];
    return s / static_cast<double>(coefficients.size() - 1);
  }

 private:
  std::vector<long long> intersection_, predicted_, target_;
};

}  // namespace scg

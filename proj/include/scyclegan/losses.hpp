#pragma once

#include <cmath>
#include <string>
#include <type_traits>

#include "scyclegan/autograd.hpp"
#include "scyclegan/image.hpp"

namespace scg {

/// Probabilities are clamped to this floor before any logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossWeights {
  double lambda_cycle = 10.0;
  double lambda_seg = 0.5;
};

enum class GanMode { saturating, non_saturating, least_squares };

inline std::string to_string(GanMode m) {
  switch (m) {
    case GanMode::saturating: return "saturating";
    case GanMode::non_saturating: return "non_saturating";
    case GanMode::least_squares: return "least_squares";
  }
  return "?";
}

inline GanMode parse_gan_mode(const std::string& s) {
  if (s == "saturating") return GanMode::saturating;
  if (s == "non_saturating") return GanMode::non_saturating;
  if (s == "least_squares") return GanMode::least_squares;
  throw ArgumentError("unknown GAN mode '" + s + "'");
}

struct DiceParams {
  double epsilon = 1e-6;
};

namespace detail {

// Reductions run at least in double.
template <typename T>
using Acc = std::common_type_t<T, double>;

template <typename T>
void require_finite(const Var<T>& x, const char* what) {
  for (T v : x.value().data) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

template <typename A>
A stable_sigmoid(A x) {
  if (x >= 0) return A(1) / (A(1) + std::exp(-x));
  const A e = std::exp(x);
  return e / (A(1) + e);
}

// mean_i f(x_i) with gradient df(x_i) / n.
template <typename T, typename F, typename DF>
Var<T> reduce_mean(const Var<T>& x, F f, DF df) {
  using A = Acc<T>;
  const auto& v = x.value().data;
  A total = 0;
  for (T xi : v) total += f(static_cast<A>(xi));
  const A n = static_cast<A>(v.size());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(total / n)), {x.node()}, [df, n](Node<T>& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    T* g = src.grad_buffer();
    const A up = static_cast<A>(self.grad[0]) / n;
    for (std::size_t i = 0; i < src.value.size(); ++i) g[i] += static_cast<T>(up * df(static_cast<A>(src.value.data[i])));
  });
}

// mean log(max(sigmoid(sign * x), floor)).
template <typename T>
Var<T> mean_log_sigmoid(const Var<T>& x, double sign) {
  using A = Acc<T>;
  const A sg = sign, floor = kProbabilityFloor;
  return reduce_mean(
      x, [sg, floor](A v) { return std::log(std::max(stable_sigmoid(sg * v), floor)); },
      [sg, floor](A v) {
        const A p = stable_sigmoid(sg * v);
        return p < floor ? A(0) : sg * stable_sigmoid(-sg * v);
      });
}

template <typename T>
Var<T> mean_squared_to(const Var<T>& x, double target) {
  using A = Acc<T>;
  const A t = target;
  return reduce_mean(x, [t](A v) { return (v - t) * (v - t); }, [t](A v) { return A(2) * (v - t); });
}

template <typename T>
Var<T> scaled(const Var<T>& x, T s) {
  return weighted_sum<T>({x}, {s});
}

}  // namespace detail

/// Discriminator objective in minimization form. Log modes:
/// -mean[log sig(real)] - mean[log(1 - sig(fake))]; least squares:
/// mean (real - 1)^2 + mean fake^2 on raw scores.
template <typename T>
Var<T> adversarial_d_loss(const Var<T>& scores_real, const Var<T>& scores_fake, GanMode mode) {
  detail::require_finite(scores_real, "adversarial_d_loss");
  detail::require_finite(scores_fake, "adversarial_d_loss");
  if (mode == GanMode::least_squares) {
    return add(detail::mean_squared_to(scores_real, 1.0), detail::mean_squared_to(scores_fake, 0.0));
  }
  return weighted_sum<T>({detail::mean_log_sigmoid(scores_real, 1.0), detail::mean_log_sigmoid(scores_fake, -1.0)},
                         {T(-1), T(-1)});
}

/// Generator objective. saturating: mean log(1 - sig(fake)) (the literal
/// minimax term); non_saturating: -mean log sig(fake); least_squares:
/// mean (fake - 1)^2.
template <typename T>
Var<T> adversarial_g_loss(const Var<T>& scores_fake, GanMode mode) {
  detail::require_finite(scores_fake, "adversarial_g_loss");
  switch (mode) {
    case GanMode::saturating: return detail::mean_log_sigmoid(scores_fake, -1.0);
    case GanMode::non_saturating: return detail::scaled(detail::mean_log_sigmoid(scores_fake, 1.0), T(-1));
    case GanMode::least_squares: return detail::mean_squared_to(scores_fake, 1.0);
  }
  throw ArgumentError("adversarial_g_loss: bad mode");
}

/// Mean absolute difference between two same-shaped tensors.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_abs_diff");
  using A = detail::Acc<T>;
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  A total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) total += std::abs(static_cast<A>(av[i]) - static_cast<A>(bv[i]));
  const A n = static_cast<A>(av.size());
  return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(total / n)), {a.node(), b.node()}, [n](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    const T up = static_cast<T>(self.grad[0] / n);
    T* gx = x.requires_grad ? x.grad_buffer() : nullptr;
    T* gy = y.requires_grad ? y.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < x.value.size(); ++i) {
      const T d = x.value.data[i] - y.value.data[i];
      const T s = d > T(0) ? up : (d < T(0) ? -up : T(0));
      if (gx) gx[i] += s;
      if (gy) gy[i] -= s;
    }
  });
}

/// Mean-L1 reconstruction error summed over both domains.
template <typename T>
Var<T> cycle_loss(const Var<T>& real_ct, const Var<T>& rec_ct, const Var<T>& real_us, const Var<T>& rec_us) {
  require_same_shape(real_ct.shape(), rec_ct.shape(), "cycle_loss (ct)");
  require_same_shape(real_us.shape(), rec_us.shape(), "cycle_loss (us)");
  return add(mean_abs_diff(rec_ct, real_ct), mean_abs_diff(rec_us, real_us));
}

namespace detail {

template <typename T>
void check_prediction(const Var<T>& pred, const ClassMask& target, const char* what) {
  if (pred.shape().height != target.height || pred.shape().width != target.width) {
    throw ShapeError(std::string(what) + ": prediction " + pred.shape().str() + " vs target " +
                     std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  for (auto l : target.labels) {
    if (l >= pred.shape().channels) throw DataError(std::string(what) + ": target class outside prediction planes");
  }
}

}  // namespace detail

/// Pixel-mean cross-entropy of class probabilities against hard labels.
template <typename T>
Var<T> ce_loss(const Var<T>& pred, const ClassMask& target) {
  detail::check_prediction(pred, target, "ce_loss");
  const std::size_t plane = pred.shape().plane();
  using A = detail::Acc<T>;
  const auto& p = pred.value().data;
  const A floor = kProbabilityFloor;
  A total = 0;
  for (std::size_t i = 0; i < plane; ++i) total -= std::log(std::max<A>(p[target.labels[i] * plane + i], floor));
  const A n = static_cast<A>(plane);
  return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(total / n)), {pred.node()},
                                [labels = target.labels, n, plane, floor](Node<T>& self) {
                                  auto& src = *self.inputs[0];
                                  if (!src.requires_grad) return;
                                  T* g = src.grad_buffer();
                                  const A up = self.grad[0] / n;
                                  for (std::size_t i = 0; i < plane; ++i) {
                                    const std::size_t idx = labels[i] * plane + i;
                                    const A pt = src.value.data[idx];
                                    if (pt >= floor) g[idx] += static_cast<T>(-up / pt);
                                  }
                                });
}

/// Soft Dice loss, class-mean form:
/// 1 - (1/C) sum_c (2 sum y_c p_c + eps) / (sum y_c + sum p_c + eps).
template <typename T>
Var<T> dice_loss(const Var<T>& pred, const ClassMask& target, const DiceParams& params = {}) {
  if (!(params.epsilon > 0.0)) throw ArgumentError("dice_loss: epsilon must be positive");
  detail::check_prediction(pred, target, "dice_loss");
  const int classes = pred.shape().channels;
  const std::size_t plane = pred.shape().plane();
  using A = detail::Acc<T>;
  const auto& p = pred.value().data;
  const A eps = params.epsilon;
  std::vector<A> inter(classes, A(0)), denom(classes, eps);
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const A pc = p[c * plane + i];
      const bool y = target.labels[i] == c;
      if (y) inter[c] += pc;
      denom[c] += pc + (y ? A(1) : A(0));
    }
  }
  A coeff_sum = 0;
  for (int c = 0; c < classes; ++c) coeff_sum += (A(2) * inter[c] + eps) / denom[c];
  const A loss = A(1) - coeff_sum / classes;
  return detail::make_result<T>(
      Tensor<T>::scalar(static_cast<T>(loss)), {pred.node()},
      [labels = target.labels, inter, denom, classes, plane, eps](Node<T>& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad) return;
        T* g = src.grad_buffer();
        const A up = self.grad[0];
        for (int c = 0; c < classes; ++c) {
          const A num = A(2) * inter[c] + eps;
          // d coeff / d p_ci = (2 y_ci * denom - num) / denom^2
          for (std::size_t i = 0; i < plane; ++i) {
            const A y = labels[i] == c ? A(1) : A(0);
            const A dcoeff = (A(2) * y * denom[c] - num) / (denom[c] * denom[c]);
            g[c * plane + i] += static_cast<T>(-up * dcoeff / classes);
          }
        }
      });
}

/// Cross-entropy plus Dice with unit weights.
template <typename T>
Var<T> seg_loss(const Var<T>& pred, const ClassMask& target, const DiceParams& params = {}) {
  return add(ce_loss(pred, target), dice_loss(pred, target, params));
}

/// adv_ct2us + adv_us2ct + lambda_cycle * cycle + lambda_seg * (seg_ct + seg_us).
template <typename T>
Var<T> generator_total(const Var<T>& adv_ct2us, const Var<T>& adv_us2ct, const Var<T>& cycle, const Var<T>& seg_ct,
                       const Var<T>& seg_us, const LossWeights& w) {
  for (const auto* v : {&adv_ct2us, &adv_us2ct, &cycle, &seg_ct, &seg_us}) detail::require_finite(*v, "generator_total");
  if (w.lambda_cycle < 0 || w.lambda_seg < 0) throw ArgumentError("generator_total: loss weights must be non-negative");
  const T lc = static_cast<T>(w.lambda_cycle), ls = static_cast<T>(w.lambda_seg);
  return weighted_sum<T>({adv_ct2us, adv_us2ct, cycle, seg_ct, seg_us}, {T(1), T(1), lc, ls, ls});
}

/// Generator objective with the segmentation terms absent from the graph.
template <typename T>
Var<T> generator_total_without_segmentation(const Var<T>& adv_ct2us, const Var<T>& adv_us2ct, const Var<T>& cycle,
                                            const LossWeights& w) {
  for (const auto* v : {&adv_ct2us, &adv_us2ct, &cycle}) detail::require_finite(*v, "generator_total");
  return weighted_sum<T>({adv_ct2us, adv_us2ct, cycle}, {T(1), T(1), static_cast<T>(w.lambda_cycle)});
}

}  // namespace scg

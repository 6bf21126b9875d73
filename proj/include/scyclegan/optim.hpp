#pragma once

#include <cmath>
#include <vector>

#include "scyclegan/networks.hpp"

namespace scg {

struct AdamHyper {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer bound to one network's parameter layout.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t parameter_count, AdamHyper hyper = {})
      : hyper_(hyper), m_(parameter_count, T(0)), v_(parameter_count, T(0)) {}

  /// One update with the network's accumulated gradients. A frozen network
  /// is left untouched (moments and step count included).
  void step(Network<T>& net, double lr) {
    if (net.mode() == Mode::frozen) return;
    if (net.parameter_count() != m_.size()) throw ShapeError("Adam: optimizer state does not match network");
    ++steps_;
    const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(hyper_.beta1), b2 = static_cast<T>(hyper_.beta2);
    std::size_t offset = 0;
    for (auto& p : net.mutable_parameters()) {
      auto& value = p.var.mutable_value().data;
      const auto& grad = p.var.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const T g = grad.empty() ? T(0) : grad[i];
        T& m = m_[offset + i];
        T& v = v_[offset + i];
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g * g;
        const T m_hat = static_cast<T>(m / c1);
        const T v_hat = static_cast<T>(v / c2);
        value[i] -= static_cast<T>(lr) * (m_hat / (std::sqrt(v_hat) + static_cast<T>(hyper_.eps)));
      }
      offset += value.size();
    }
  }

  long long steps() const { return steps_; }
  const std::vector<T>& first_moment() const { return m_; }
  const std::vector<T>& second_moment() const { return v_; }
  const AdamHyper& hyper() const { return hyper_; }

  void restore(long long steps, std::vector<T> m, std::vector<T> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("Adam: restored moments have wrong length");
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamHyper hyper_;
  std::vector<T> m_, v_;
  long long steps_ = 0;
};

}  // namespace scg

#pragma once

// Minimal reverse-mode automatic differentiation over CHW tensors.
//
// A Var is a handle to a graph node. Nodes created from inputs that do not
// require gradients keep no history, so frozen sub-networks and detached
// values cost nothing at backward time. Parameters are long-lived leaf nodes
// whose gradient buffers accumulate until explicitly cleared.

#include <cmath>
#include <functional>
#include <memory>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scyclegan/tensor.hpp"

namespace scg {

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;  // empty until something flows into this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  const NodePtr& node() const { return node_; }

  /// Scalar convenience for 1x1x1 results.
  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape().str());
    return node_->value.data[0];
  }

  /// Seeds d(this)/d(this) = 1 and propagates to every reachable node that
  /// requires a gradient.
  void backward() const {
    if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar, got " + shape().str());
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node<T>* child = n->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T, typename Backprop>
Var<T> make_result(Tensor<T> value, std::vector<typename Var<T>::NodePtr> inputs, Backprop&& backprop) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in->requires_grad;
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backprop = std::forward<Backprop>(backprop);
  }
  return Var<T>(std::move(node));
}

// Applies a pointwise map whose derivative can be expressed from (x, y).
template <typename T, typename F, typename DF>
Var<T> pointwise(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = f(in[i]);
  return make_result<T>(std::move(out), {x.node()}, [df](Node<T>& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    T* g = src.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      g[i] += self.grad[i] * df(src.value.data[i], self.value.data[i]);
    }
  });
}

}  // namespace detail

/// Copies the value into a fresh leaf that carries no gradient history.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>(x.value(), false);
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return detail::make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Sum of scalar terms with fixed weights: sum_i weights[i] * terms[i].
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    throw ArgumentError("weighted_sum: terms and weights must be non-empty and equal length");
  }
  T total = T(0);
  std::vector<typename Var<T>::NodePtr> inputs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].item();
    inputs.push_back(terms[i].node());
  }
  return detail::make_result<T>(Tensor<T>::scalar(total), std::move(inputs), [weights](Node<T>& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (self.inputs[i]->requires_grad) self.inputs[i]->grad_buffer()[0] += weights[i] * self.grad[0];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  if (a.shape().height != b.shape().height || a.shape().width != b.shape().width) {
    throw ShapeError("concat_channels: spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Shape s{a.shape().channels + b.shape().channels, a.shape().height, a.shape().width};
  Tensor<T> out(s);
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  std::copy(b.value().data.begin(), b.value().data.end(), out.data.begin() + a.value().size());
  return detail::make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad) {
        T* g = in->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::pointwise(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::pointwise(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::pointwise(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// Per-pixel softmax across channels.
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  const auto& in = x.value().data;
  for (std::size_t p = 0; p < plane; ++p) {
    T peak = in[p];
    for (int c = 1; c < s.channels; ++c) peak = std::max(peak, in[c * plane + p]);
    T total = T(0);
    for (int c = 0; c < s.channels; ++c) {
      const T e = std::exp(in[c * plane + p] - peak);
      out.data[c * plane + p] = e;
      total += e;
    }
    for (int c = 0; c < s.channels; ++c) out.data[c * plane + p] /= total;
  }
  return detail::make_result<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    const Shape s = self.value.shape;
    const std::size_t plane = s.plane();
    T* g = src.grad_buffer();
    const auto& y = self.value.data;
    for (std::size_t p = 0; p < plane; ++p) {
      T dot = T(0);
      for (int c = 0; c < s.channels; ++c) dot += y[c * plane + p] * self.grad[c * plane + p];
      for (int c = 0; c < s.channels; ++c) {
        g[c * plane + p] += y[c * plane + p] * (self.grad[c * plane + p] - dot);
      }
    }
  });
}

/// Per-channel normalization over the spatial plane, without affine terms.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  std::vector<T> inv_std(s.channels);
  for (int c = 0; c < s.channels; ++c) {
    const T* src = x.value().plane(c);
    // Statistics in at least double: float planes with variance near eps
    // otherwise lose most of their significant digits.
    using A = std::common_type_t<T, double>;
    A mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    mean /= static_cast<A>(plane);
    A var = 0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<A>(plane);
    const A inv = A(1) / std::sqrt(var + static_cast<A>(eps));
    inv_std[c] = static_cast<T>(inv);
    T* dst = out.plane(c);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>((src[i] - mean) * inv);
  }
  return detail::make_result<T>(std::move(out), {x.node()}, [inv_std](Node<T>& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    const Shape s = self.value.shape;
    const std::size_t plane = s.plane();
    T* g = src.grad_buffer();
    for (int c = 0; c < s.channels; ++c) {
      const T* y = self.value.plane(c);
      const T* dy = self.grad.data() + c * plane;
      using A = std::common_type_t<T, double>;
      A mean_dy = 0, mean_dy_y = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        mean_dy += dy[i];
        mean_dy_y += static_cast<A>(dy[i]) * y[i];
      }
      mean_dy /= static_cast<A>(plane);
      mean_dy_y /= static_cast<A>(plane);
      T* gx = g + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        gx[i] += static_cast<T>(inv_std[c] * (dy[i] - mean_dy - y[i] * mean_dy_y));
      }
    }
  });
}

/// 2x2 max pooling with stride 2. Spatial dims must be even.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.height % 2 != 0 || s.width % 2 != 0) throw ShapeError("max_pool2: odd spatial size " + s.str());
  const Shape os{s.channels, s.height / 2, s.width / 2};
  Tensor<T> out(os);
  std::vector<std::size_t> argmax(os.size());
  const auto& in = x.value();
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < os.height; ++y) {
      for (int xx = 0; xx < os.width; ++xx) {
        std::size_t best = (c * s.plane()) + (2 * y) * s.width + 2 * xx;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * s.plane()) + (2 * y + dy) * s.width + 2 * xx + dx;
            if (in.data[idx] > in.data[best]) best = idx;
          }
        }
        const std::size_t o = (c * os.plane()) + y * os.width + xx;
        out.data[o] = in.data[best];
        argmax[o] = best;
      }
    }
  }
  return detail::make_result<T>(std::move(out), {x.node()}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    T* g = src.grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

}  // namespace scg

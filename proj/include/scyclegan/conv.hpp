#pragma once

// Convolutions lowered to GEMM through im2col. Column buffers are rebuilt
// during backprop instead of being retained, which keeps the memory held by
// a six-network training graph proportional to its activations.

#include <Eigen/Core>

#include "scyclegan/autograd.hpp"

namespace scg {

enum class PadMode { zero, reflect };

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  PadMode pad_mode = PadMode::zero;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Sequential sum in a fixed order. Eigen's vectorised reductions peel
// differently depending on pointer alignment, which made bias gradients
// vary between otherwise identical runs.
template <typename T>
T ordered_sum(const T* p, std::size_t n) {
  std::common_type_t<T, double> acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  return static_cast<T>(acc);
}

// Source index along one axis for a padded position, or -1 for a zero pad.
inline int padded_index(int pos, int n, PadMode mode) {
  if (pos >= 0 && pos < n) return pos;
  if (mode == PadMode::zero) return -1;
  if (n == 1) return 0;
  int p = pos;
  while (p < 0 || p >= n) p = p < 0 ? -p : 2 * (n - 1) - p;
  return p;
}

// For each kernel tap and output coordinate, the source coordinate (or -1).
inline std::vector<int> tap_table(int in, int out, const ConvGeometry& g) {
  std::vector<int> table(static_cast<std::size_t>(g.kernel) * out);
  for (int k = 0; k < g.kernel; ++k) {
    for (int o = 0; o < out; ++o) table[k * out + o] = padded_index(o * g.stride + k - g.pad, in, g.pad_mode);
  }
  return table;
}

// Output positions [lo, hi) along one axis whose tap reads the unpadded
// source at o * stride + k - pad; everything outside goes through the table.
struct DirectRange {
  int lo = 0, hi = 0;
};

inline std::vector<DirectRange> direct_ranges(const std::vector<int>& table, int out, const ConvGeometry& g) {
  std::vector<DirectRange> ranges(g.kernel);
  for (int k = 0; k < g.kernel; ++k) {
    auto direct = [&](int o) { return table[k * out + o] >= 0 && table[k * out + o] == o * g.stride + k - g.pad; };
    int lo = 0;
    while (lo < out && !direct(lo)) ++lo;
    int hi = lo;
    while (hi < out && direct(hi)) ++hi;
    ranges[k] = {lo, hi};
  }
  return ranges;
}

template <typename T>
void im2col(const Tensor<T>& x, const ConvGeometry& g, int oh, int ow, const std::vector<int>& rows,
            const std::vector<int>& cols, std::vector<T>& col) {
  const int k = g.kernel;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  col.resize(static_cast<std::size_t>(x.shape.channels) * k * k * out_plane);
  const auto direct = direct_ranges(cols, ow, g);
  for (int c = 0; c < x.shape.channels; ++c) {
    const T* src = x.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * out_plane;
        const int* col_idx = cols.data() + kx * ow;
        const auto [lo, hi] = direct[kx];
        const int shift = kx - g.pad;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = rows[ky * oh + oy];
          T* out = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0) {
            std::fill(out, out + ow, T(0));
            continue;
          }
          const T* row = src + static_cast<std::size_t>(iy) * x.shape.width;
          for (int ox = 0; ox < lo; ++ox) out[ox] = col_idx[ox] >= 0 ? row[col_idx[ox]] : T(0);
          if (g.stride == 1) {
            std::copy(row + lo + shift, row + hi + shift, out + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) out[ox] = row[ox * g.stride + shift];
          }
          for (int ox = hi; ox < ow; ++ox) out[ox] = col_idx[ox] >= 0 ? row[col_idx[ox]] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& col, const Shape& s, const ConvGeometry& g, int oh, int ow,
            const std::vector<int>& rows, const std::vector<int>& cols, T* grad) {
  const int k = g.kernel;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const auto direct = direct_ranges(cols, ow, g);
  for (int c = 0; c < s.channels; ++c) {
    T* dst = grad + c * s.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * out_plane;
        const int* col_idx = cols.data() + kx * ow;
        const auto [lo, hi] = direct[kx];
        const int shift = kx - g.pad;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = rows[ky * oh + oy];
          if (iy < 0) continue;
          T* row = dst + static_cast<std::size_t>(iy) * s.width;
          const T* in = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < lo; ++ox) {
            if (col_idx[ox] >= 0) row[col_idx[ox]] += in[ox];
          }
          if (g.stride == 1) {
            T* r = row + shift;
            for (int ox = lo; ox < hi; ++ox) r[ox] += in[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox * g.stride + shift] += in[ox];
          }
          for (int ox = hi; ox < ow; ++ox) {
            if (col_idx[ox] >= 0) row[col_idx[ox]] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution. `weight` holds (out, in, k, k) row-major values; `bias`
/// may be an undefined Var when the layer has none.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int out_channels,
              const ConvGeometry& g) {
  const Shape s = x.shape();
  const int oh = g.out_size(s.height);
  const int ow = g.out_size(s.width);
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: input " + s.str() + " too small for kernel");
  const int taps = s.channels * g.kernel * g.kernel;
  if (weight.value().size() != static_cast<std::size_t>(out_channels) * taps) {
    throw ShapeError("conv2d: weight size does not match " + std::to_string(out_channels) + "x" +
                     std::to_string(taps));
  }
  const auto rows = detail::tap_table(s.height, oh, g);
  const auto cols = detail::tap_table(s.width, ow, g);
  std::vector<T> col;
  detail::im2col(x.value(), g, oh, ow, rows, cols, col);

  const Eigen::Index out_plane = static_cast<Eigen::Index>(oh) * ow;
  Tensor<T> out(Shape{out_channels, oh, ow});
  detail::MatMap<T> y(out.data.data(), out_channels, out_plane);
  detail::ConstMatMap<T> w(weight.value().data.data(), out_channels, taps);
  detail::ConstMatMap<T> c(col.data(), taps, out_plane);
  y.noalias() = w * c;
  std::vector<typename Var<T>::NodePtr> inputs{x.node(), weight.node()};
  if (bias.defined()) {
    for (int o = 0; o < out_channels; ++o) y.row(o).array() += bias.value().data[o];
    inputs.push_back(bias.node());
  }

  return detail::make_result<T>(
      std::move(out), std::move(inputs), [g, rows, cols, taps, out_channels](Node<T>& self) {
        auto& xin = *self.inputs[0];
        auto& win = *self.inputs[1];
        const Shape s = xin.value.shape;
        const int oh = self.value.shape.height;
        const int ow = self.value.shape.width;
        const Eigen::Index out_plane = static_cast<Eigen::Index>(oh) * ow;
        detail::ConstMatMap<T> dy(self.grad.data(), out_channels, out_plane);
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          T* gb = self.inputs[2]->grad_buffer();
          for (int o = 0; o < out_channels; ++o) gb[o] += detail::ordered_sum(self.grad.data() + o * out_plane, static_cast<std::size_t>(out_plane));
        }
        if (!win.requires_grad && !xin.requires_grad) return;
        std::vector<T> col;
        if (win.requires_grad) {
          detail::im2col(xin.value, g, oh, ow, rows, cols, col);
          detail::ConstMatMap<T> c(col.data(), taps, out_plane);
          detail::MatMap<T> gw(win.grad_buffer(), out_channels, taps);
          gw.noalias() += dy * c.transpose();
        }
        if (xin.requires_grad) {
          col.resize(static_cast<std::size_t>(taps) * out_plane);
          detail::MatMap<T> dc(col.data(), taps, out_plane);
          detail::ConstMatMap<T> w(win.value.data.data(), out_channels, taps);
          dc.noalias() = w.transpose() * dy;
          detail::col2im(col, s, g, oh, ow, rows, cols, xin.grad_buffer());
        }
      });
}

/// Transposed 2x2 convolution with stride 2 (exact 2x upsampling).
/// `weight` holds (in, out, 2, 2) row-major values.
template <typename T>
Var<T> conv_transpose2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int out_channels) {
  const Shape s = x.shape();
  const int taps = out_channels * 4;
  if (weight.value().size() != static_cast<std::size_t>(s.channels) * taps) {
    throw ShapeError("conv_transpose2: weight size mismatch for input " + s.str());
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(s.plane());
  // cols(out*4, HW) = W^T (out*4, in) * X (in, HW)
  detail::ConstMatMap<T> w(weight.value().data.data(), s.channels, taps);
  detail::ConstMatMap<T> xm(x.value().data.data(), s.channels, plane);
  detail::RowMatrix<T> cols = w.transpose() * xm;

  const Shape os{out_channels, s.height * 2, s.width * 2};
  Tensor<T> out(os);
  for (int o = 0; o < out_channels; ++o) {
    const T b = bias.defined() ? bias.value().data[o] : T(0);
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const T* src = cols.data() + (static_cast<Eigen::Index>(o) * 4 + dy * 2 + dx) * plane;
        for (int y = 0; y < s.height; ++y) {
          T* dst = out.plane(o) + static_cast<std::size_t>(2 * y + dy) * os.width + dx;
          for (int xx = 0; xx < s.width; ++xx) dst[2 * xx] = src[y * s.width + xx] + b;
        }
      }
    }
  }
  std::vector<typename Var<T>::NodePtr> inputs{x.node(), weight.node()};
  if (bias.defined()) inputs.push_back(bias.node());

  return detail::make_result<T>(std::move(out), std::move(inputs), [taps, out_channels](Node<T>& self) {
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    const Shape s = xin.value.shape;
    const Shape os = self.value.shape;
    const Eigen::Index plane = static_cast<Eigen::Index>(s.plane());
    detail::RowMatrix<T> dcols(taps, plane);
    for (int o = 0; o < out_channels; ++o) {
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          T* dst = dcols.data() + (static_cast<Eigen::Index>(o) * 4 + dy * 2 + dx) * plane;
          for (int y = 0; y < s.height; ++y) {
            const T* src = self.grad.data() + o * os.plane() + static_cast<std::size_t>(2 * y + dy) * os.width + dx;
            for (int xx = 0; xx < s.width; ++xx) dst[y * s.width + xx] = src[2 * xx];
          }
        }
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      T* gb = self.inputs[2]->grad_buffer();
      for (int o = 0; o < out_channels; ++o) gb[o] += detail::ordered_sum(dcols.data() + static_cast<Eigen::Index>(o) * 4 * plane, static_cast<std::size_t>(4 * plane));
    }
    if (win.requires_grad) {
      detail::ConstMatMap<T> xm(xin.value.data.data(), s.channels, plane);
      detail::MatMap<T> gw(win.grad_buffer(), s.channels, taps);
      gw.noalias() += xm * dcols.transpose();
    }
    if (xin.requires_grad) {
      detail::ConstMatMap<T> w(win.value.data.data(), s.channels, taps);
      detail::MatMap<T> gx(xin.grad_buffer(), s.channels, plane);
      gx.noalias() += w * dcols;
    }
  });
}

}  // namespace scg

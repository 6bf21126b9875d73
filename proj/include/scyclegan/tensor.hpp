#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "scyclegan/errors.hpp"

namespace scg {

/// Channel-major planar shape of a single (batch size 1) feature map.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return plane() * channels; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

/// Dense CHW buffer. Used for activations, normalized images, one-hot masks
/// and (flattened) parameters alike.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
      throw ShapeError("tensor buffer of " + std::to_string(data.size()) +
                       " values does not match shape " + shape.str());
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1}, std::vector<T>{v}); }

  std::size_t size() const { return data.size(); }
  T& at(int c, int y, int x) { return data[(c * shape.plane()) + y * shape.width + x]; }
  const T& at(int c, int y, int x) const { return data[(c * shape.plane()) + y * shape.width + x]; }
  T* plane(int c) { return data.data() + c * shape.plane(); }
  const T* plane(int c) const { return data.data() + c * shape.plane(); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

}  // namespace scg

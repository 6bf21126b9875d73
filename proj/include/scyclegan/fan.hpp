#pragma once

#include <cmath>
#include <numbers>

#include "scyclegan/image.hpp"

namespace scg {

/// Sector footprint of a convex probe. Pixel (row, col) is sampled at its
/// center (row + 0.5, col + 0.5); the apex is in the same continuous frame,
/// so an apex at (0, width / 2) sits on the top edge, centered.
struct FanGeometry {
  double apex_row = 0.0;
  double apex_col = 0.0;
  double half_aperture = 35.0 * std::numbers::pi / 180.0;  // radians from the downward vertical
  double r_min = 0.0;
  double r_max = 0.0;

  void validate(int height, int width) const {
    if (!(half_aperture > 0.0 && half_aperture < std::numbers::pi / 2)) {
      throw ArgumentError("fan: half aperture must lie in (0, pi/2)");
    }
    if (!(r_min >= 0.0 && r_min < r_max)) throw ArgumentError("fan: need 0 <= r_min < r_max");
    if (!(apex_row < height) || apex_col < 0.0 || apex_col > width) {
      throw ArgumentError("fan: apex must lie within or above the canvas");
    }
  }

  /// Membership test in squared-distance / slope form.
  bool contains(int row, int col) const {
    const double dy = row + 0.5 - apex_row;
    const double dx = col + 0.5 - apex_col;
    const double r2 = dx * dx + dy * dy;
    if (r2 < r_min * r_min || r2 > r_max * r_max) return false;
    if (dy > 0.0) return std::abs(dx) <= dy * std::tan(half_aperture);
    return dx == 0.0 && dy == 0.0;
  }

  double radius(int row, int col) const { return std::hypot(row + 0.5 - apex_row, col + 0.5 - apex_col); }
};

/// Apex top-center, 35 degree half-aperture, radial band [0.05h, 0.95h].
inline FanGeometry default_fan(int height, int width) {
  FanGeometry f;
  f.apex_row = 0.0;
  f.apex_col = width / 2.0;
  f.half_aperture = 35.0 * std::numbers::pi / 180.0;
  f.r_min = 0.05 * height;
  f.r_max = 0.95 * height;
  return f;
}

inline ByteImage apply_fan_mask(const ByteImage& img, const FanGeometry& fan) {
  fan.validate(img.height, img.width);
  ByteImage out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!fan.contains(y, x)) std::fill_n(out.pixel(y, x), 3, std::uint8_t{0});
    }
  }
  return out;
}

/// Normalized-domain variant: outside pixels become -1.
template <typename T>
Tensor<T> apply_fan_mask(const Tensor<T>& img, const FanGeometry& fan) {
  fan.validate(img.shape.height, img.shape.width);
  Tensor<T> out = img;
  for (int y = 0; y < img.shape.height; ++y) {
    for (int x = 0; x < img.shape.width; ++x) {
      if (fan.contains(y, x)) continue;
      for (int c = 0; c < img.shape.channels; ++c) out.at(c, y, x) = T(-1);
    }
  }
  return out;
}

/// Labels outside the fan become background.
inline ClassMask apply_fan_mask(const ClassMask& mask, const FanGeometry& fan) {
  fan.validate(mask.height, mask.width);
  ClassMask out = mask;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!fan.contains(y, x)) out.at(y, x) = 0;
    }
  }
  return out;
}

}  // namespace scg

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "scyclegan/tensor.hpp"

namespace scg {

/// Number of semantic classes: background plus liver, kidney, spleen, pancreas.
inline constexpr int kNumClasses = 5;

/// 8-bit interleaved RGB raster, the storage form of every image on disk.
struct ByteImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  ByteImage() = default;
  ByteImage(int h, int w, std::uint8_t fill = 0) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t* pixel(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int y, int x) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool operator==(const ByteImage&) const = default;
};

/// Per-pixel class indices.
struct ClassMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  ClassMask() = default;
  ClassMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const ClassMask&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

inline std::string rgb_hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

inline Rgb parse_rgb_hex(const std::string& s) {
  if (s.size() != 7 || s[0] != '#') throw DataError("bad palette color '" + s + "', expected #rrggbb");
  Rgb c{};
  for (int i = 0; i < 3; ++i) {
    const std::string byte = s.substr(1 + 2 * i, 2);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(byte, &used, 16);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != 2) throw DataError("bad palette color '" + s + "'");
    c[i] = static_cast<std::uint8_t>(v);
  }
  return c;
}

/// Bijective class index <-> RGB map. Class 0 is always black.
class Palette {
 public:
  explicit Palette(std::vector<Rgb> colors) : colors_(std::move(colors)) {
    if (colors_.empty() || colors_[0] != Rgb{0, 0, 0}) throw DataError("palette: class 0 must map to (0,0,0)");
    for (std::size_t i = 0; i < colors_.size(); ++i) {
      if (!lookup_.emplace(pack(colors_[i]), static_cast<std::uint8_t>(i)).second) {
        throw DataError("palette: color " + rgb_hex(colors_[i]) + " assigned to more than one class");
      }
    }
  }

  /// Organ colors violet, yellow, pink and blue for liver, kidney, spleen
  /// and pancreas, after black background.
  static const Palette& standard() {
    static const Palette p({Rgb{0, 0, 0}, Rgb{238, 130, 238}, Rgb{255, 255, 0}, Rgb{255, 192, 203}, Rgb{0, 0, 255}});
    return p;
  }

  static const std::vector<std::string>& standard_class_names() {
    static const std::vector<std::string> names{"background", "liver", "kidney", "spleen", "pancreas"};
    return names;
  }

  int size() const { return static_cast<int>(colors_.size()); }
  const Rgb& color(int cls) const { return colors_.at(cls); }
  const std::vector<Rgb>& colors() const { return colors_; }

  /// Class for an exact color, or -1.
  int find(const Rgb& c) const {
    auto it = lookup_.find(pack(c));
    return it == lookup_.end() ? -1 : it->second;
  }

  bool operator==(const Palette& o) const { return colors_ == o.colors_; }

 private:
  static std::uint32_t pack(const Rgb& c) { return (std::uint32_t(c[0]) << 16) | (std::uint32_t(c[1]) << 8) | c[2]; }

  std::vector<Rgb> colors_;
  std::unordered_map<std::uint32_t, std::uint8_t> lookup_;
};

inline ByteImage encode_mask(const ClassMask& mask, const Palette& palette = Palette::standard()) {
  ByteImage img(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const int cls = mask.labels[i];
    if (cls >= palette.size()) throw DataError("encode_mask: class " + std::to_string(cls) + " outside palette");
    const Rgb& c = palette.color(cls);
    std::copy(c.begin(), c.end(), img.rgb.begin() + i * 3);
  }
  return img;
}

inline ClassMask decode_mask(const ByteImage& img, const Palette& palette = Palette::standard()) {
  ClassMask mask(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* p = img.pixel(y, x);
      const Rgb c{p[0], p[1], p[2]};
      const int cls = palette.find(c);
      if (cls < 0) {
        throw DataError("decode_mask: unknown color " + rgb_hex(c) + " at (row " + std::to_string(y) + ", col " +
                        std::to_string(x) + ")");
      }
      mask.at(y, x) = static_cast<std::uint8_t>(cls);
    }
  }
  return mask;
}

/// C planes with plane c equal to 1 where mask == c.
template <typename T>
Tensor<T> one_hot(const ClassMask& mask, int num_classes = kNumClasses) {
  Tensor<T> out(Shape{num_classes, mask.height, mask.width});
  const std::size_t plane = out.shape.plane();
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const int cls = mask.labels[i];
    if (cls >= num_classes) {
      throw DataError("one_hot: class " + std::to_string(cls) + " >= " + std::to_string(num_classes));
    }
    out.data[cls * plane + i] = T(1);
  }
  return out;
}

/// Per-pixel argmax over planes (lowest index wins ties).
template <typename T>
ClassMask argmax_mask(const Tensor<T>& planes) {
  ClassMask mask(planes.shape.height, planes.shape.width);
  const std::size_t plane = planes.shape.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < planes.shape.channels; ++c) {
      if (planes.data[c * plane + i] > planes.data[best * plane + i]) best = c;
    }
    mask.labels[i] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

/// Byte [0,255] -> real [-1,1], planar.
template <typename T>
Tensor<T> normalize(const ByteImage& img) {
  Tensor<T> out(Shape{3, img.height, img.width});
  const std::size_t plane = out.shape.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) out.data[c * plane + i] = static_cast<T>(img.rgb[i * 3 + c] / 127.5 - 1.0);
  }
  return out;
}

/// Real [-1,1] -> byte, clamping out-of-range values.
template <typename T>
ByteImage denormalize(const Tensor<T>& img) {
  if (img.shape.channels != 3) throw ShapeError("denormalize: expected 3 channels, got " + img.shape.str());
  ByteImage out(img.shape.height, img.shape.width);
  const std::size_t plane = img.shape.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::round((static_cast<double>(img.data[c * plane + i]) + 1.0) * 127.5);
      out.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

}  // namespace scg

#pragma once

// Procedural CT-style / US-style phantoms with known masks. Scenes are
// elliptical organ blobs inside a convex-probe fan; renderings are pure
// functions of (scene, params).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "scyclegan/dataset.hpp"
#include "scyclegan/fan.hpp"
#include "scyclegan/rng.hpp"

namespace scg {

struct OrganBlob {
  int class_id = 1;
  double center_row = 0.0;
  double center_col = 0.0;
  double semi_a = 2.0;  // along the rotated row axis
  double semi_b = 2.0;
  double rotation = 0.0;
  double base_intensity_ct = 0.5;
  double base_intensity_us = 0.5;

  bool covers(double row, double col) const {
    const double dy = row - center_row;
    const double dx = col - center_col;
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double u = (dy * c + dx * s) / semi_a;
    const double v = (-dy * s + dx * c) / semi_b;
    return u * u + v * v <= 1.0;
  }

  bool operator==(const OrganBlob&) const = default;
};

struct PhantomScene {
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  std::vector<OrganBlob> blobs;
  FanGeometry fan;
};

struct SpeckleParams {
  double grain_scale = 2.0;
  double attenuation_per_px = 0.006;
  double edge_gain = 0.3;
  std::uint64_t noise_seed = 0;
};

namespace phantom_constants {
// Index 0 is background.
inline constexpr double kCtLevels[kNumClasses] = {0.50, 0.78, 0.95, 0.25, 0.08};
inline constexpr double kUsLevels[kNumClasses] = {0.18, 0.40, 0.52, 0.07, 0.30};
inline constexpr double kLevelJitter = 0.03;
inline constexpr double kCtNoiseAmplitude = 0.08;
inline constexpr int kCtNoiseCell = 16;
inline constexpr double kSpeckleLooks = 4.0;
}  // namespace phantom_constants

inline PhantomScene generate_scene(std::uint64_t seed, int height, int width, int min_blobs, int max_blobs) {
  if (height < 32 || width < 32 || height % 8 != 0 || width % 8 != 0) {
    throw ArgumentError("generate_scene: canvas " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be at least 32x32 and divisible by 8");
  }
  if (min_blobs < 1 || min_blobs > max_blobs || max_blobs > 8) {
    throw ArgumentError("generate_scene: blob range must satisfy 1 <= min <= max <= 8");
  }
  using namespace phantom_constants;
  auto rng = make_engine({seed, 0x5ce7e});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  PhantomScene scene;
  scene.seed = seed;
  scene.height = height;
  scene.width = width;
  scene.fan = default_fan(height, width);
  const double extent = std::min(height, width);
  const int n = min_blobs + static_cast<int>(unit(rng) * (max_blobs - min_blobs + 1));
  const double tan_half = std::tan(scene.fan.half_aperture);
  for (int i = 0; i < std::min(n, max_blobs); ++i) {
    OrganBlob b;
    b.class_id = 1 + static_cast<int>(unit(rng) * 4) % 4;
    b.center_row = uniform(0.30, 0.85) * height;
    const double half_span = 0.6 * tan_half * (b.center_row - scene.fan.apex_row);
    b.center_col = std::clamp(scene.fan.apex_col + uniform(-1.0, 1.0) * half_span, 0.0, width - 1.0);
    b.semi_a = std::max(2.0, uniform(0.07, 0.18) * extent);
    b.semi_b = std::max(2.0, uniform(0.07, 0.18) * extent);
    b.rotation = uniform(0.0, std::numbers::pi);
    b.base_intensity_ct = std::clamp(kCtLevels[b.class_id] + uniform(-kLevelJitter, kLevelJitter), 0.0, 1.0);
    b.base_intensity_us = std::clamp(kUsLevels[b.class_id] + uniform(-kLevelJitter, kLevelJitter), 0.0, 1.0);
    scene.blobs.push_back(b);
  }
  std::stable_sort(scene.blobs.begin(), scene.blobs.end(), [](const OrganBlob& x, const OrganBlob& y) {
    return std::tie(x.class_id, x.center_row, x.center_col) < std::tie(y.class_id, y.center_row, y.center_col);
  });
  return scene;
}

/// Index of the front-most blob covering each pixel, or -1. Later blobs
/// occlude earlier ones.
inline std::vector<int> blob_index_map(const PhantomScene& scene) {
  std::vector<int> owner(static_cast<std::size_t>(scene.height) * scene.width, -1);
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      for (std::size_t b = 0; b < scene.blobs.size(); ++b) {
        if (scene.blobs[b].covers(y + 0.5, x + 0.5)) owner[static_cast<std::size_t>(y) * scene.width + x] = static_cast<int>(b);
      }
    }
  }
  return owner;
}

inline ClassMask rasterize_mask(const PhantomScene& scene) {
  ClassMask mask(scene.height, scene.width);
  const auto owner = blob_index_map(scene);
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] >= 0) mask.labels[i] = static_cast<std::uint8_t>(scene.blobs[owner[i]].class_id);
  }
  return mask;
}

namespace detail {

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline ByteImage gray_to_rgb(const std::vector<double>& gray, int h, int w) {
  ByteImage img(h, w);
  for (std::size_t i = 0; i < gray.size(); ++i) std::fill_n(img.rgb.begin() + i * 3, 3, to_byte(gray[i]));
  return img;
}

// Box blur with a square window of `size` pixels (clamped borders).
inline std::vector<double> box_blur(const std::vector<double>& src, int h, int w, int size) {
  if (size <= 1) return src;
  const int lo = -(size - 1) / 2;
  const int hi = lo + size - 1;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = lo; k <= hi; ++k) acc += src[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc / size;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = lo; k <= hi; ++k) acc += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc / size;
    }
  }
  return out;
}

// Unit-mean speckle field: multi-look (gamma) intensities averaged over the
// grain. Single-look exponential tails would saturate the byte range.
inline std::vector<double> speckle_field(std::uint64_t seed, int h, int w, int grain) {
  using phantom_constants::kSpeckleLooks;
  auto rng = make_engine({seed});
  std::gamma_distribution<double> looks(kSpeckleLooks, 1.0 / kSpeckleLooks);
  std::vector<double> raw(static_cast<std::size_t>(h) * w);
  for (auto& v : raw) v = looks(rng);
  return box_blur(raw, h, w, grain);
}

}  // namespace detail

/// Grayscale (replicated to RGB) with per-blob constant levels plus a smooth
/// bilinear noise field bounded by 0.08. Not fan-cropped.
inline ByteImage render_ct_style(const PhantomScene& scene) {
  using namespace phantom_constants;
  const int h = scene.height, w = scene.width;
  const auto owner = blob_index_map(scene);
  const int gh = h / kCtNoiseCell + 2, gw = w / kCtNoiseCell + 2;
  auto rng = make_engine({scene.seed, 0xc7});
  std::uniform_real_distribution<double> noise(-kCtNoiseAmplitude, kCtNoiseAmplitude);
  std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& g : grid) g = noise(rng);

  std::vector<double> gray(owner.size());
  for (int y = 0; y < h; ++y) {
    const double gy = (y + 0.5) / kCtNoiseCell;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const double gx = (x + 0.5) / kCtNoiseCell;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const double n = (1 - fy) * ((1 - fx) * grid[y0 * gw + x0] + fx * grid[y0 * gw + x0 + 1]) +
                       fy * ((1 - fx) * grid[(y0 + 1) * gw + x0] + fx * grid[(y0 + 1) * gw + x0 + 1]);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double base = owner[i] >= 0 ? scene.blobs[owner[i]].base_intensity_ct : kCtLevels[0];
      gray[i] = base + n;
    }
  }
  return detail::gray_to_rgb(gray, h, w);
}

/// US-style rendering: multiplicative speckle, depth attenuation from the fan
/// apex and a bright band on organ boundaries. Exactly 0 outside the fan.
inline ByteImage render_us_style(const PhantomScene& scene, const SpeckleParams& params) {
  if (!(params.grain_scale >= 1.0) || params.attenuation_per_px < 0.0 || params.edge_gain < 0.0) {
    throw ArgumentError("render_us_style: need grain_scale >= 1, attenuation >= 0, edge_gain >= 0");
  }
  using namespace phantom_constants;
  const int h = scene.height, w = scene.width;
  const auto owner = blob_index_map(scene);
  const auto mask = rasterize_mask(scene);
  const int grain = static_cast<int>(std::lround(params.grain_scale));
  const auto field_a = detail::speckle_field(hash_counters({params.noise_seed, 1}), h, w, grain);
  const auto field_b = detail::speckle_field(hash_counters({params.noise_seed, 2}), h, w, grain);

  std::vector<double> gray(owner.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!scene.fan.contains(y, x)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double base = owner[i] >= 0 ? scene.blobs[owner[i]].base_intensity_us : kUsLevels[0];
      const double depth_gain = std::exp(-params.attenuation_per_px * scene.fan.radius(y, x));
      bool edge = false;
      for (auto [dy, dx] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < h && nx >= 0 && nx < w && mask.at(ny, nx) != mask.at(y, x)) edge = true;
      }
      gray[i] = (base * field_a[i] * field_b[i] + (edge ? params.edge_gain : 0.0)) * depth_gain;
    }
  }
  return detail::gray_to_rgb(gray, h, w);
}

inline SpeckleParams default_speckle(std::uint64_t noise_seed) {
  SpeckleParams p;
  p.noise_seed = noise_seed;
  return p;
}

struct PhantomOptions {
  int min_blobs = 1;
  int max_blobs = 4;
  bool paired = false;  // US scenes reuse the CT scene stream
};

/// Writes a complete dataset (images, masks, manifest) under out_dir.
inline DatasetManifest build_phantom_dataset(std::uint64_t seed, int n_ct, int n_us, int height, int width,
                                             const fs::path& out_dir, const PhantomOptions& options = {}) {
  if (n_ct < 1 || n_us < 1) throw ArgumentError("build_phantom_dataset: counts must be >= 1");
  // Validate canvas before touching the file system.
  (void)generate_scene(seed, height, width, options.min_blobs, options.max_blobs);
  try {
    for (const char* d : {"ct", "us"}) {
      fs::create_directories(out_dir / d / "images");
      fs::create_directories(out_dir / d / "masks");
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directories under " + out_dir.string() + ": " + e.what());
  }

  auto scene_for = [&](Domain d, int i) {
    const Domain stream = options.paired ? Domain::ct : d;
    return generate_scene(hash_counters({seed, static_cast<std::uint64_t>(stream), static_cast<std::uint64_t>(i)}),
                          height, width, options.min_blobs, options.max_blobs);
  };

  parallel_for(static_cast<std::size_t>(n_ct), decode_threads(), [&](std::size_t i) {
    const auto scene = scene_for(Domain::ct, static_cast<int>(i));
    const std::string id = sample_id(static_cast<int>(i), n_ct);
    write_png(image_path(out_dir, Domain::ct, id), apply_fan_mask(render_ct_style(scene), scene.fan));
    write_png(mask_path(out_dir, Domain::ct, id), encode_mask(apply_fan_mask(rasterize_mask(scene), scene.fan)));
  });
  parallel_for(static_cast<std::size_t>(n_us), decode_threads(), [&](std::size_t i) {
    const auto scene = scene_for(Domain::us, static_cast<int>(i));
    const std::string id = sample_id(static_cast<int>(i), n_us);
    const auto params = default_speckle(hash_counters({seed, 0x05, static_cast<std::uint64_t>(i)}));
    write_png(image_path(out_dir, Domain::us, id), render_us_style(scene, params));
    write_png(mask_path(out_dir, Domain::us, id), encode_mask(apply_fan_mask(rasterize_mask(scene), scene.fan)));
  });

  DatasetManifest manifest;
  manifest.n_ct = n_ct;
  manifest.n_us = n_us;
  manifest.height = height;
  manifest.width = width;
  manifest.seed = seed;
  manifest.paired = options.paired;
  write_text_file(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

}  // namespace scg

#pragma once

// On-disk dataset layout:
//
//   <root>/manifest.json
//   <root>/ct/images/<id>.png   8-bit RGB
//   <root>/ct/masks/<id>.png    palette-colored, same id set
//   <root>/us/images/<id>.png
//   <root>/us/masks/<id>.png
//
// Ids are zero-padded decimal strings.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scyclegan/image.hpp"
#include "scyclegan/png_io.hpp"
#include "scyclegan/rng.hpp"

namespace scg {

namespace fs = std::filesystem;

enum class Domain { ct, us };

inline const char* domain_name(Domain d) { return d == Domain::ct ? "ct" : "us"; }

struct Sample {
  Domain domain = Domain::ct;
  std::string id;
  ByteImage image;
  std::optional<ClassMask> mask;
};

struct DatasetManifest {
  int version = 1;
  int num_classes = kNumClasses;
  Palette palette = Palette::standard();
  int n_ct = 0;
  int n_us = 0;
  int height = 0;
  int width = 0;
  std::optional<std::uint64_t> seed;
  bool paired = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["classes"] = num_classes;
    j["class_names"] = Palette::standard_class_names();
    auto& pal = j["palette"] = nlohmann::ordered_json::array();
    for (const auto& c : palette.colors()) pal.push_back(rgb_hex(c));
    j["counts"] = {{"ct", n_ct}, {"us", n_us}};
    j["canvas"] = {{"height", height}, {"width", width}};
    j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
    j["paired"] = paired;
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    try {
      DatasetManifest m;
      m.version = j.at("version").get<int>();
      if (m.version != 1) throw DataError("manifest: unsupported version " + std::to_string(m.version));
      m.num_classes = j.at("classes").get<int>();
      std::vector<Rgb> colors;
      for (const auto& hex : j.at("palette")) colors.push_back(parse_rgb_hex(hex.get<std::string>()));
      m.palette = Palette(std::move(colors));
      if (m.palette.size() != m.num_classes) throw DataError("manifest: palette size differs from class count");
      m.n_ct = j.at("counts").at("ct").get<int>();
      m.n_us = j.at("counts").at("us").get<int>();
      m.height = j.at("canvas").at("height").get<int>();
      m.width = j.at("canvas").at("width").get<int>();
      if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
      m.paired = j.value("paired", false);
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
  }
};

inline std::string sample_id(int index, int count) {
  int digits = 4;
  for (int n = std::max(count - 1, 1); n >= 10000; n /= 10) ++digits;
  std::string s = std::to_string(index);
  return std::string(digits > static_cast<int>(s.size()) ? digits - s.size() : 0, '0') + s;
}

inline fs::path image_path(const fs::path& root, Domain d, const std::string& id) {
  return root / domain_name(d) / "images" / (id + ".png");
}
inline fs::path mask_path(const fs::path& root, Domain d, const std::string& id) {
  return root / domain_name(d) / "masks" / (id + ".png");
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Worker count for decoding: SCG_THREADS, 0 or unset meaning hardware concurrency.
inline unsigned decode_threads() {
  unsigned n = 0;
  if (const char* env = std::getenv("SCG_THREADS")) n = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// Runs fn(i) for i in [0, n). Each index writes only its own slot, so the
// result order is independent of scheduling. The first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct LoadOptions {
  bool require_masks = true;
};

/// Read-only dataset; samples sorted by id within each domain.
class Dataset {
 public:
  Dataset(DatasetManifest manifest, std::vector<Sample> ct, std::vector<Sample> us)
      : manifest_(std::move(manifest)), ct_(std::move(ct)), us_(std::move(us)) {}

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<Sample>& samples(Domain d) const { return d == Domain::ct ? ct_ : us_; }
  std::size_t size(Domain d) const { return samples(d).size(); }

 private:
  DatasetManifest manifest_;
  std::vector<Sample> ct_;
  std::vector<Sample> us_;
};

namespace detail {

inline std::vector<std::string> list_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) throw DataError("dataset: missing directory " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace detail

inline Dataset load_dataset(const fs::path& root, const LoadOptions& options = {}) {
  const fs::path manifest_file = root / "manifest.json";
  if (!fs::exists(manifest_file)) throw DataError("dataset: missing " + manifest_file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_file));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset: malformed manifest " + manifest_file.string() + ": " + e.what());
  }
  DatasetManifest manifest = DatasetManifest::from_json(j);
  if (manifest.height % 8 != 0 || manifest.width % 8 != 0 || manifest.height <= 0 || manifest.width <= 0) {
    throw DataError("dataset: canvas " + std::to_string(manifest.height) + "x" + std::to_string(manifest.width) +
                    " must be positive and divisible by 8");
  }

  auto load_domain = [&](Domain d, int expected) {
    const auto ids = detail::list_ids(root / domain_name(d) / "images");
    if (static_cast<int>(ids.size()) != expected) {
      throw DataError(std::string("dataset: manifest lists ") + std::to_string(expected) + " " + domain_name(d) +
                      " images, found " + std::to_string(ids.size()));
    }
    std::vector<Sample> samples(ids.size());
    parallel_for(ids.size(), decode_threads(), [&](std::size_t i) {
      Sample& s = samples[i];
      s.domain = d;
      s.id = ids[i];
      s.image = read_png(image_path(root, d, s.id));
      if (s.image.height % 8 != 0 || s.image.width % 8 != 0) {
        throw DataError("dataset: " + std::string(domain_name(d)) + " image " + s.id + " is " +
                        std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                        ", dimensions must be divisible by 8");
      }
      if (s.image.height != manifest.height || s.image.width != manifest.width) {
        throw DataError("dataset: " + std::string(domain_name(d)) + " image " + s.id + " does not match canvas");
      }
      const fs::path mp = mask_path(root, d, s.id);
      if (!fs::exists(mp)) {
        if (options.require_masks) {
          throw DataError("dataset: missing mask for " + std::string(domain_name(d)) + " id " + s.id + " (" +
                          mp.string() + ")");
        }
        return;
      }
      ByteImage encoded = read_png(mp);
      if (encoded.height != s.image.height || encoded.width != s.image.width) {
        throw DataError("dataset: mask/image dimension mismatch for " + std::string(domain_name(d)) + " id " + s.id);
      }
      try {
        s.mask = decode_mask(encoded, manifest.palette);
      } catch (const DataError& e) {
        throw DataError("dataset: " + std::string(domain_name(d)) + " mask " + s.id + ": " + e.what());
      }
    });
    return samples;
  };

  auto ct = load_domain(Domain::ct, manifest.n_ct);
  auto us = load_domain(Domain::us, manifest.n_us);
  return Dataset(std::move(manifest), std::move(ct), std::move(us));
}

/// Counter-based permutation of [0, n): indices ordered by a hash of
/// (seed, domain, epoch, cycle, index).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, Domain d, std::uint64_t epoch,
                                                  std::uint64_t cycle) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) {
    keyed[i] = {hash_counters({seed, static_cast<std::uint64_t>(d), epoch, cycle, i}), i};
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = keyed[i].second;
  return perm;
}

/// Steps per epoch: the larger domain is visited once, the smaller one is
/// re-permuted as often as needed.
inline std::size_t steps_per_epoch(const Dataset& ds) { return std::max(ds.size(Domain::ct), ds.size(Domain::us)); }

inline const Sample& sample_at(const Dataset& ds, Domain d, std::uint64_t epoch, std::uint64_t step, std::uint64_t seed) {
  const auto& samples = ds.samples(d);
  if (samples.empty()) throw DataError(std::string("sampler: empty ") + domain_name(d) + " domain");
  const std::size_t n = samples.size();
  const auto perm = epoch_permutation(n, seed, d, epoch, step / n);
  return samples[perm[step % n]];
}

/// One CT and one US sample (batch size 1), as a pure function of
/// (epoch, step, seed).
inline std::pair<const Sample&, const Sample&> sample_unpaired_batch(const Dataset& ds, std::uint64_t epoch,
                                                                     std::uint64_t step, std::uint64_t seed) {
  const Sample& ct = sample_at(ds, Domain::ct, epoch, step, seed);
  const Sample& us = sample_at(ds, Domain::us, epoch, step, seed);
  return {ct, us};
}

}  // namespace scg

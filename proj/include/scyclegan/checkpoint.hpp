#pragma once

// Checkpoint directory:
//   gen_ct2us.bin gen_us2ct.bin disc_ct.bin disc_us.bin seg_ct.bin seg_us.bin
//   optim_<name>.bin for each network
//   manifest.json   format, epoch, dtype, config, per-file SHA-256, content hash
//
// Every .bin file is a named-array container (little endian):
//   "SCGARR01" | u32 dtype (4 = float32, 8 = float64) | u32 count |
//   count x { u32 name_len | name | u32 ndims | i32 dims[ndims] | u64 n | data[n] }

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scyclegan/dataset.hpp"
#include "scyclegan/models.hpp"

namespace scg {

static_assert(std::endian::native == std::endian::little, "checkpoint container assumes a little-endian host");

struct NamedArray {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;  // widened on read; narrowed back on load
};

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw CheckpointError("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

namespace detail {

inline constexpr char kArrayMagic[8] = {'S', 'C', 'G', 'A', 'R', 'R', '0', '1'};

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("truncated array container " + file_);
  }
  const std::string& bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::string encode_arrays(const std::vector<NamedArray>& arrays) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::string out(detail::kArrayMagic, sizeof detail::kArrayMagic);
  detail::put<std::uint32_t>(out, sizeof(T));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
    for (int d : a.dims) detail::put<std::int32_t>(out, d);
    detail::put<std::uint64_t>(out, a.values.size());
    for (double v : a.values) detail::put<T>(out, static_cast<T>(v));
  }
  return out;
}

/// Returns the arrays and the stored element width in bytes.
inline std::pair<std::vector<NamedArray>, int> decode_arrays(const std::string& bytes, const std::string& file) {
  detail::Reader r(bytes, file);
  if (r.take(sizeof detail::kArrayMagic) != std::string(detail::kArrayMagic, sizeof detail::kArrayMagic)) {
    throw CheckpointError("bad magic in " + file);
  }
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) throw CheckpointError("unsupported element width in " + file);
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedArray> arrays(count);
  for (auto& a : arrays) {
    a.name = r.take(r.get<std::uint32_t>());
    a.dims.resize(r.get<std::uint32_t>());
    for (auto& d : a.dims) d = r.get<std::int32_t>();
    a.values.resize(r.get<std::uint64_t>());
    for (auto& v : a.values) v = width == 4 ? static_cast<double>(r.get<float>()) : r.get<double>();
  }
  if (!r.done()) throw CheckpointError("trailing bytes in " + file);
  return {std::move(arrays), static_cast<int>(width)};
}

template <typename T>
std::vector<NamedArray> network_arrays(const Network<T>& net) {
  std::vector<NamedArray> out;
  for (const auto& p : net.parameters()) {
    out.push_back({p.name, p.dims, std::vector<double>(p.var.value().data.begin(), p.var.value().data.end())});
  }
  return out;
}

template <typename T>
std::vector<NamedArray> optimizer_arrays(const Adam<T>& opt) {
  return {{"steps", {1}, {static_cast<double>(opt.steps())}},
          {"m", {static_cast<int>(opt.first_moment().size())}, {opt.first_moment().begin(), opt.first_moment().end()}},
          {"v", {static_cast<int>(opt.second_moment().size())}, {opt.second_moment().begin(), opt.second_moment().end()}}};
}

template <typename T>
struct CheckpointBundle {
  TrainConfig config;
  int epoch = 0;
  Models<T> models;
  Optimizers<T> optimizers;
  std::string content_hash;  // filled by save/load
};

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

/// Writes the bundle and returns its content hash (SHA-256 over the
/// per-file hashes in container order).
template <typename T>
std::string save_checkpoint(CheckpointBundle<T>& bundle, const fs::path& dir) {
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create checkpoint directory " + dir.string() + ": " + e.what());
  }
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  std::string combined;
  auto emit = [&](const std::string& file, const std::string& bytes) {
    write_text_file(dir / file, bytes);
    const std::string h = sha256_hex(bytes);
    files[file] = h;
    combined += file + ":" + h + "\n";
  };
  for (auto id : kAllNets) emit(std::string(net_name(id)) + ".bin", encode_arrays<T>(network_arrays(bundle.models.net(id))));
  for (auto id : kAllNets) emit(std::string("optim_") + net_name(id) + ".bin", encode_arrays<T>(optimizer_arrays(bundle.optimizers[id])));
  bundle.content_hash = sha256_hex(combined);

  nlohmann::ordered_json manifest;
  manifest["format"] = 1;
  manifest["epoch"] = bundle.epoch;
  manifest["dtype"] = dtype_name<T>();
  manifest["config"] = bundle.config.to_json();
  manifest["files"] = files;
  manifest["content_hash"] = bundle.content_hash;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return bundle.content_hash;
}

/// Loads and verifies a checkpoint. When `expected` is given, its class
/// count and network shapes must agree with the stored configuration.
template <typename T>
CheckpointBundle<T> load_checkpoint(const fs::path& dir, const TrainConfig* expected = nullptr) {
  const fs::path manifest_file = dir / "manifest.json";
  if (!fs::exists(manifest_file)) throw CheckpointError("missing checkpoint manifest " + manifest_file.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(manifest_file));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest " + manifest_file.string() + ": " + e.what());
  }
  CheckpointBundle<T> bundle;
  try {
    bundle.config = TrainConfig::from_json(manifest.at("config"));
    bundle.epoch = manifest.at("epoch").get<int>();
    if (manifest.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw CheckpointError("checkpoint " + dir.string() + " stores " + manifest.at("dtype").get<std::string>() +
                            ", expected " + dtype_name<T>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint manifest " + manifest_file.string() + ": " + e.what());
  }
  if (expected != nullptr) {
    if (expected->num_classes != bundle.config.num_classes) {
      throw ConfigError("checkpoint " + dir.string() + " has " + std::to_string(bundle.config.num_classes) +
                        " classes, configuration expects " + std::to_string(expected->num_classes));
    }
    if (!(expected->unet == bundle.config.unet) || !(expected->discriminator == bundle.config.discriminator)) {
      throw ConfigError("checkpoint " + dir.string() + " network widths differ from the configuration");
    }
  }
  bundle.models = Models<T>::build(bundle.config);
  bundle.optimizers = Optimizers<T>::build(bundle.models);

  std::string combined;
  auto read_verified = [&](const std::string& file) {
    const fs::path path = dir / file;
    if (!fs::exists(path)) throw CheckpointError("missing checkpoint file " + path.string());
    std::string bytes = read_text_file(path);
    const std::string h = sha256_hex(bytes);
    std::string recorded;
    try {
      recorded = manifest.at("files").at(file).get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw CheckpointError("checkpoint manifest does not list " + file);
    }
    if (h != recorded) throw CheckpointError("hash mismatch for checkpoint file " + path.string());
    combined += file + ":" + h + "\n";
    auto [arrays, width] = decode_arrays(bytes, path.string());
    if (width != static_cast<int>(sizeof(T))) throw CheckpointError("element width mismatch in " + path.string());
    return arrays;
  };

  for (auto id : kAllNets) {
    const std::string file = std::string(net_name(id)) + ".bin";
    auto arrays = read_verified(file);
    auto& net = bundle.models.net(id);
    if (arrays.size() != net.parameters().size()) throw CheckpointError("parameter list mismatch in " + file);
    std::vector<T> flat;
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const auto& p = net.parameters()[i];
      if (arrays[i].name != p.name || arrays[i].dims != p.dims) {
        throw CheckpointError("parameter '" + arrays[i].name + "' in " + file + " does not match network layout");
      }
      flat.insert(flat.end(), arrays[i].values.begin(), arrays[i].values.end());
    }
    net.load_parameters(flat);
  }
  for (auto id : kAllNets) {
    const std::string file = std::string("optim_") + net_name(id) + ".bin";
    auto arrays = read_verified(file);
    if (arrays.size() != 3 || arrays[0].name != "steps" || arrays[1].name != "m" || arrays[2].name != "v") {
      throw CheckpointError("unexpected optimizer layout in " + file);
    }
    bundle.optimizers[id].restore(static_cast<long long>(arrays[0].values.at(0)),
                                  std::vector<T>(arrays[1].values.begin(), arrays[1].values.end()),
                                  std::vector<T>(arrays[2].values.begin(), arrays[2].values.end()));
  }
  bundle.content_hash = sha256_hex(combined);
  if (manifest.value("content_hash", std::string()) != bundle.content_hash) {
    throw CheckpointError("content hash mismatch for checkpoint " + dir.string());
  }
  return bundle;
}

}  // namespace scg

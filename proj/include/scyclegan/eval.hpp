#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scyclegan/png_io.hpp"
#include "scyclegan/trainer.hpp"

namespace scg {

enum class Direction { ct2us, us2ct };

inline std::string to_string(Direction d) { return d == Direction::ct2us ? "ct2us" : "us2ct"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "ct2us") return Direction::ct2us;
  if (s == "us2ct") return Direction::us2ct;
  throw ArgumentError("unknown direction '" + s + "' (expected ct2us or us2ct)");
}

/// Domain whose images a direction consumes.
inline Domain source_domain(Direction d) { return d == Direction::ct2us ? Domain::ct : Domain::us; }

struct InferenceOptions {
  bool allow_unlabeled = false;  // substitute an all-background mask
};

/// Mask used to condition the generator for `s`.
inline ClassMask conditioning_mask(const Sample& s, const InferenceOptions& options) {
  if (s.mask) return *s.mask;
  if (!options.allow_unlabeled) {
    throw DataError("sample " + std::string(domain_name(s.domain)) + "/" + s.id +
                    " has no mask; generators are mask-conditioned (use --allow-unlabeled to substitute background)");
  }
  return ClassMask(s.image.height, s.image.width, 0);
}

template <typename T>
ByteImage translate_one(const Translator<T>& gen, const Sample& s, int num_classes, const InferenceOptions& options = {}) {
  if (s.image.height % 8 != 0 || s.image.width % 8 != 0) {
    throw ShapeError("image " + s.id + " is " + std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                     "; dimensions must be divisible by 8");
  }
  const ClassMask mask = conditioning_mask(s, options);
  const Var<T> out = gen.translate(constant(normalize<T>(s.image)), constant(one_hot<T>(mask, num_classes)));
  return denormalize(out.value());
}

/// Order-preserving batch translation.
template <typename T>
std::vector<ByteImage> translate(const Translator<T>& gen, const std::vector<Sample>& samples, int num_classes,
                                 const InferenceOptions& options = {}) {
  std::vector<ByteImage> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(translate_one(gen, s, num_classes, options));
  return out;
}

template <typename T>
const Translator<T>& translator_for(const Models<T>& m, Direction d) {
  return d == Direction::ct2us ? static_cast<const Translator<T>&>(*m.gen_ct2us) : *m.gen_us2ct;
}

/// Segmentor that judges the translated images (target domain).
template <typename T>
const Segmenter<T>& judge_for(const Models<T>& m, Direction d) {
  return d == Direction::ct2us ? static_cast<const Segmenter<T>&>(*m.seg_us) : *m.seg_ct;
}

struct MetricsReport {
  std::vector<double> per_class_dice;
  double mean_foreground_dice = 0.0;
  std::size_t n_samples = 0;
  std::string checkpoint_hash;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["per_class_dice"] = per_class_dice;
    j["mean_foreground_dice"] = mean_foreground_dice;
    j["n_samples"] = n_samples;
    j["checkpoint_hash"] = checkpoint_hash;
    j["config"] = config;
    return j;
  }

  static MetricsReport from_json(const nlohmann::ordered_json& j) {
    MetricsReport r;
    try {
      r.per_class_dice = j.at("per_class_dice").get<std::vector<double>>();
      r.mean_foreground_dice = j.at("mean_foreground_dice").get<double>();
      r.n_samples = j.at("n_samples").get<std::size_t>();
      r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
      r.config = j.at("config");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("metrics report: ") + e.what());
    }
    return r;
  }

  bool operator==(const MetricsReport&) const = default;
};

/// Dice between the source mask and the judge's prediction on the
/// translated image, pooled over all samples.
template <typename T>
MetricsReport semantic_consistency(const Translator<T>& gen, const Segmenter<T>& judge, const std::vector<Sample>& samples,
                                   int num_classes) {
  if (samples.empty()) throw DataError("semantic consistency: no samples");
  DiceAccumulator acc(num_classes);
  for (const auto& s : samples) {
    const auto p = prepare<T>(s, num_classes);
    const Var<T> fake = gen.translate(p.image, p.one_hot);
    acc.add(argmax_mask(judge.segment(fake).value()), p.mask);
  }
  MetricsReport r;
  r.per_class_dice = acc.coefficients();
  r.mean_foreground_dice = acc.mean_foreground();
  r.n_samples = samples.size();
  return r;
}

template <typename T>
MetricsReport semantic_consistency(const CheckpointBundle<T>& ckpt, const Dataset& ds, Direction d) {
  MetricsReport r = semantic_consistency(translator_for(ckpt.models, d), judge_for(ckpt.models, d),
                                         ds.samples(source_domain(d)), ckpt.config.num_classes);
  r.checkpoint_hash = ckpt.content_hash;
  r.config = ckpt.config.to_json();
  r.config["direction"] = to_string(d);
  return r;
}

inline void export_report(const MetricsReport& r, const fs::path& path) {
  // max_digits10 via nlohmann's round-trip double formatting
  write_text_file(path, r.to_json().dump(2) + "\n");
}

inline MetricsReport read_report(const fs::path& path) {
  try {
    return MetricsReport::from_json(nlohmann::ordered_json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed report " + path.string() + ": " + e.what());
  }
}

/// Writes <out>/fake_<direction>/<id>.png for each image.
inline void write_translations(const fs::path& out, Direction d, const std::vector<Sample>& samples,
                               const std::vector<ByteImage>& images) {
  const fs::path dir = out / ("fake_" + to_string(d));
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + dir.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < samples.size(); ++i) write_png(dir / (samples[i].id + ".png"), images.at(i));
}

}  // namespace scg

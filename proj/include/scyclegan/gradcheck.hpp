#pragma once

// Central finite-difference check of every parameter gradient on a
// miniature model set (8x8 canvas, two classes, narrow networks). The
// reference derivatives are always computed in double precision; the
// analytic side runs in the requested precision from the same weights.

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <optional>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scyclegan/trainer.hpp"

namespace scg {

inline TrainConfig miniature_config() {
  TrainConfig c;
  c.height = 8;
  c.width = 8;
  c.num_classes = 2;
  c.unet.encoder = {4, 8, 16};
  c.unet.bottleneck = 32;
  c.discriminator.widths = {4, 8};  // 8x8 -> 2x2 score map
  c.seed = 7;
  return c;
}

enum class Precision { single, dbl };

inline std::string to_string(Precision p) { return p == Precision::single ? "single" : "double"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "single" || s == "float") return Precision::single;
  if (s == "double") return Precision::dbl;
  throw ArgumentError("unknown precision '" + s + "' (expected single or double)");
}

enum class GradObjective { generator_total, seg_loss, adversarial_d, adversarial_g };

inline constexpr GradObjective kAllObjectives[] = {GradObjective::generator_total, GradObjective::seg_loss,
                                                   GradObjective::adversarial_d, GradObjective::adversarial_g};

inline const char* objective_name(GradObjective o) {
  switch (o) {
    case GradObjective::generator_total: return "generator_total";
    case GradObjective::seg_loss: return "seg_loss";
    case GradObjective::adversarial_d: return "adversarial_d_loss";
    case GradObjective::adversarial_g: return "adversarial_g_loss";
  }
  return "?";
}

/// Networks whose parameters an objective depends on.
inline std::vector<NetId> objective_nets(GradObjective o) {
  switch (o) {
    case GradObjective::generator_total: return {kAllNets.begin(), kAllNets.end()};
    case GradObjective::seg_loss: return {NetId::seg_ct, NetId::seg_us};
    case GradObjective::adversarial_d: return {NetId::disc_ct, NetId::disc_us};
    case GradObjective::adversarial_g: return {NetId::gen_ct2us, NetId::gen_us2ct, NetId::disc_ct, NetId::disc_us};
  }
  return {};
}

/// Fixed random inputs shared by every objective.
struct GradCheckInputs {
  Tensor<double> ct, us, fake_ct, fake_us;
  ClassMask ct_mask, us_mask;

  static GradCheckInputs make(const TrainConfig& cfg, std::uint64_t seed) {
    auto rng = make_engine({seed, 0x67726164});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> label(0, cfg.num_classes - 1);
    const Shape img{3, cfg.height, cfg.width};
    GradCheckInputs in;
    for (Tensor<double>* t : {&in.ct, &in.us, &in.fake_ct, &in.fake_us}) {
      *t = Tensor<double>(img);
      // Float-representable, so every precision sees the same inputs.
      for (auto& v : t->data) v = static_cast<float>(u(rng));
    }
    for (ClassMask* m : {&in.ct_mask, &in.us_mask}) {
      *m = ClassMask(cfg.height, cfg.width);
      for (auto& l : m->labels) l = static_cast<std::uint8_t>(label(rng));
    }
    return in;
  }
};

namespace detail {

// Forward-interface wrappers that replay a network's earlier output when it
// sees bitwise-identical inputs again. The network whose weight is being
// perturbed is bypassed, so only the part of the graph downstream of it is
// recomputed.
template <typename T>
struct Memo {
  std::vector<std::pair<std::vector<Tensor<T>>, Tensor<T>>> entries;
  bool bypass = false;

  template <typename F>
  Var<T> lookup(std::vector<Tensor<T>> key, F compute) {
    if (bypass) return compute();
    for (const auto& [k, v] : entries) {
      if (k.size() == key.size() && std::equal(k.begin(), k.end(), key.begin(), [](const Tensor<T>& a, const Tensor<T>& b) {
            return a.shape == b.shape && a.data == b.data;
          })) {
        return constant(v);
      }
    }
    Var<T> out = compute();
    entries.emplace_back(std::move(key), out.value());
    return out;
  }
};

template <typename T>
class MemoTranslator : public Translator<T> {
 public:
  MemoTranslator(const Translator<T>& inner, Memo<T>& memo) : inner_(inner), memo_(memo) {}
  Var<T> translate(const Var<T>& image, const Var<T>& mask) const override {
    return memo_.lookup({image.value(), mask.value()}, [&] { return inner_.translate(image, mask); });
  }

 private:
  const Translator<T>& inner_;
  Memo<T>& memo_;
};

template <typename T>
class MemoSegmenter : public Segmenter<T> {
 public:
  MemoSegmenter(const Segmenter<T>& inner, Memo<T>& memo) : inner_(inner), memo_(memo) {}
  Var<T> segment(const Var<T>& image) const override {
    return memo_.lookup({image.value()}, [&] { return inner_.segment(image); });
  }

 private:
  const Segmenter<T>& inner_;
  Memo<T>& memo_;
};

template <typename T>
class MemoCritic : public Critic<T> {
 public:
  MemoCritic(const Critic<T>& inner, Memo<T>& memo) : inner_(inner), memo_(memo) {}
  Var<T> score(const Var<T>& image) const override {
    return memo_.lookup({image.value()}, [&] { return inner_.score(image); });
  }

 private:
  const Critic<T>& inner_;
  Memo<T>& memo_;
};

// Memoizing views over a full model set; memo slots follow NetId order.
template <typename T>
struct MemoizedNets {
  explicit MemoizedNets(const Models<T>& m)
      : g12(*m.gen_ct2us, memo[0]),
        g21(*m.gen_us2ct, memo[1]),
        dct(*m.disc_ct, memo[2]),
        dus(*m.disc_us, memo[3]),
        sct(*m.seg_ct, memo[4]),
        sus(*m.seg_us, memo[5]),
        views{g12, g21, dct, dus, sct, sus} {}
  MemoizedNets(const MemoizedNets&) = delete;
  MemoizedNets& operator=(const MemoizedNets&) = delete;

  Memo<T>& of(NetId id) { return memo[static_cast<int>(id)]; }

  std::array<Memo<T>, 6> memo;
  MemoTranslator<T> g12, g21;
  MemoCritic<T> dct, dus;
  MemoSegmenter<T> sct, sus;
  NetViews<T> views;
};

}  // namespace detail

template <typename T>
Var<T> objective_value(GradObjective o, const NetViews<T>& nets, const GradCheckInputs& in, const TrainConfig& cfg) {
  const PreparedSample<T> ct{constant(in.ct.cast<T>()), constant(one_hot<T>(in.ct_mask, cfg.num_classes)), in.ct_mask};
  const PreparedSample<T> us{constant(in.us.cast<T>()), constant(one_hot<T>(in.us_mask, cfg.num_classes)), in.us_mask};
  switch (o) {
    case GradObjective::generator_total: {
      const auto f = forward_pass(nets, ct, us);
      return generator_total(adversarial_g_loss(f.score_fake_us, cfg.gan_mode),
                             adversarial_g_loss(f.score_fake_ct, cfg.gan_mode),
                             cycle_loss(ct.image, f.rec_ct, us.image, f.rec_us),
                             seg_loss(f.seg_fake_ct, us.mask, cfg.dice), seg_loss(f.seg_fake_us, ct.mask, cfg.dice),
                             cfg.weights);
    }
    case GradObjective::seg_loss:
      return add(seg_loss(nets.seg_ct.segment(ct.image), ct.mask, cfg.dice),
                 seg_loss(nets.seg_us.segment(us.image), us.mask, cfg.dice));
    case GradObjective::adversarial_d:
      return add(adversarial_d_loss(nets.disc_us.score(us.image), nets.disc_us.score(constant(in.fake_us.cast<T>())), cfg.gan_mode),
                 adversarial_d_loss(nets.disc_ct.score(ct.image), nets.disc_ct.score(constant(in.fake_ct.cast<T>())), cfg.gan_mode));
    case GradObjective::adversarial_g:
      return add(adversarial_g_loss(nets.disc_us.score(nets.gen_ct2us.translate(ct.image, ct.one_hot)), cfg.gan_mode),
                 adversarial_g_loss(nets.disc_ct.score(nets.gen_us2ct.translate(us.image, us.one_hot)), cfg.gan_mode));
  }
  throw ArgumentError("bad objective");
}

/// Analytic gradient of the objective, concatenated over objective_nets().
template <typename T>
std::vector<double> analytic_gradient(GradObjective o, const Models<T>& m, const GradCheckInputs& in,
                                      const TrainConfig& cfg) {
  m.set_modes(Mode::trainable, Mode::trainable, Mode::trainable);
  m.zero_grad();
  objective_value(o, NetViews<T>::of(m), in, cfg).backward();
  std::vector<double> out;
  for (NetId id : objective_nets(o)) {
    const auto g = m.net(id).flat_gradients();
    out.insert(out.end(), g.begin(), g.end());
  }
  m.zero_grad();
  return out;
}

struct GradCheckOptions {
  std::vector<Precision> precisions{Precision::dbl};
  double tolerance_double = 1e-5;
  double tolerance_single = 1e-3;
  // Central-difference steps, tried in order until one agrees; later steps
  // only matter near rectifier kinks and pooling ties.
  std::vector<double> steps{1e-5, 1e-6, 1e-4};
  // Extended-precision steps for parameters the double ladder cannot
  // resolve (kinks packed closer than the smallest usable double step).
  std::vector<double> extended_steps{1e-7, 1e-8};
  // Denominator floor: |a - n| / max(|a|, |n|, floor). Sits at the level
  // where double-precision differences of an O(10) objective stop resolving.
  double floor = 1e-5;
  std::uint64_t input_seed = 11;
  std::function<void(const std::string&)> progress;

  double tolerance(Precision p) const { return p == Precision::single ? tolerance_single : tolerance_double; }
};

struct GradCheckEntry {
  std::string objective;
  Precision precision = Precision::dbl;
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
  double max_relative_error(Precision p) const {
    double m = 0.0;
    for (const auto& e : entries) {
      if (e.precision == p) m = std::max(m, e.max_relative_error);
    }
    return m;
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {

// Central difference at step h for one scalar parameter.
template <typename T>
T central_difference(GradObjective o, const NetViews<T>& nets, const GradCheckInputs& in, const TrainConfig& cfg,
                     T& param, T h) {
  const T saved = param;
  param = saved + h;
  const T plus = objective_value(o, nets, in, cfg).item();
  param = saved - h;
  const T minus = objective_value(o, nets, in, cfg).item();
  param = saved;
  return (plus - minus) / (T(2) * h);
}

}  // namespace detail

/// Checks every objective in each requested precision against one set of
/// central differences (double, with an extended-precision fallback).
inline GradCheckReport run_grad_check(const GradCheckOptions& options = {}) {
  using Ext = long double;
  if (options.precisions.empty() || options.steps.empty()) throw ArgumentError("grad check: nothing to compare");
  const TrainConfig cfg = miniature_config();
  const GradCheckInputs in = GradCheckInputs::make(cfg, options.input_seed);
  Models<double> ref = Models<double>::build(cfg);
  const bool want_single =
      std::find(options.precisions.begin(), options.precisions.end(), Precision::single) != options.precisions.end();
  Models<float> single;
  if (want_single) {
    // Both sides evaluate at the same (float-representable) point.
    single = Models<float>::build(cfg);
    for (NetId id : kAllNets) {
      const auto p = ref.net(id).flat_parameters();
      const std::vector<float> narrowed(p.begin(), p.end());
      single.net(id).load_parameters(narrowed);
      ref.net(id).load_parameters(std::vector<double>(narrowed.begin(), narrowed.end()));
    }
  }
  Models<Ext> ext;
  if (!options.extended_steps.empty()) {
    ext = Models<Ext>::build(cfg);
    ext.set_modes(Mode::frozen, Mode::frozen, Mode::frozen);
    for (NetId id : kAllNets) {
      const auto p = ref.net(id).flat_parameters();
      ext.net(id).load_parameters(std::vector<Ext>(p.begin(), p.end()));
    }
  }

  GradCheckReport report;
  for (GradObjective o : kAllObjectives) {
    std::vector<std::vector<double>> analytic;
    for (Precision p : options.precisions) {
      analytic.push_back(p == Precision::single ? analytic_gradient(o, single, in, cfg) : analytic_gradient(o, ref, in, cfg));
    }
    ref.set_modes(Mode::frozen, Mode::frozen, Mode::frozen);

    detail::MemoizedNets<double> nets(ref);
    objective_value(o, nets.views, in, cfg);  // fills the memo at the unperturbed point
    std::optional<detail::MemoizedNets<Ext>> ext_nets;
    if (!options.extended_steps.empty()) {
      ext_nets.emplace(ext);
      objective_value(o, ext_nets->views, in, cfg);
    }

    std::vector<GradCheckEntry> entries(options.precisions.size());
    for (std::size_t j = 0; j < entries.size(); ++j) {
      entries[j].objective = objective_name(o);
      entries[j].precision = options.precisions[j];
      entries[j].tolerance = options.tolerance(options.precisions[j]);
    }
    std::size_t k = 0;
    for (NetId id : objective_nets(o)) {
      nets.of(id).bypass = true;
      if (ext_nets) ext_nets->of(id).bypass = true;
      auto& params = ref.net(id).mutable_parameters();
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].var.mutable_value().data;
        for (std::size_t i = 0; i < data.size(); ++i, ++k) {
          std::vector<double> best(entries.size(), std::numeric_limits<double>::infinity());
          std::vector<double> best_numeric(entries.size(), 0.0);
          // True once every precision agrees with some step.
          auto consider = [&](double numeric) {
            bool all_pass = true;
            for (std::size_t j = 0; j < entries.size(); ++j) {
              const double err = relative_error(analytic[j][k], numeric, options.floor);
              if (err < best[j]) {
                best[j] = err;
                best_numeric[j] = numeric;
              }
              all_pass = all_pass && best[j] < entries[j].tolerance;
            }
            return all_pass;
          };
          bool done = false;
          for (double h : options.steps) {
            if ((done = consider(detail::central_difference(o, nets.views, in, cfg, data[i], h)))) break;
          }
          if (!done && ext_nets) {
            Ext& x = ext.net(id).mutable_parameters()[pi].var.mutable_value().data[i];
            for (double h : options.extended_steps) {
              const Ext numeric = detail::central_difference(o, ext_nets->views, in, cfg, x, static_cast<Ext>(h));
              if (consider(static_cast<double>(numeric))) break;
            }
          }
          for (std::size_t j = 0; j < entries.size(); ++j) {
            auto& e = entries[j];
            if (best[j] > e.max_relative_error || e.worst_parameter.empty()) {
              e.max_relative_error = best[j];
              e.worst_parameter = std::string(net_name(id)) + "." + params[pi].name + "[" + std::to_string(i) + "]";
              e.worst_analytic = analytic[j][k];
              e.worst_numeric = best_numeric[j];
            }
          }
        }
      }
      nets.of(id).bypass = false;
      if (ext_nets) ext_nets->of(id).bypass = false;
    }
    for (auto& e : entries) {
      e.parameters = k;
      e.passed = e.max_relative_error < e.tolerance;
      if (options.progress) {
        char line[256];
        std::snprintf(line, sizeof line, "%s (%s): %zu parameters, max relative error %.3e at %s", e.objective.c_str(),
                      to_string(e.precision).c_str(), k, e.max_relative_error, e.worst_parameter.c_str());
        options.progress(line);
      }
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

}  // namespace scg

#pragma once

// Three-phase training step and the epoch loop around it:
//   1. discriminators and segmentors frozen; both generators step on the
//      composite objective,
//   2. discriminators step on their adversarial losses over detached fakes,
//   3. generators and discriminators frozen; segmentors step on their
//      segmentation losses.

#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "scyclegan/checkpoint.hpp"
#include "scyclegan/metrics.hpp"

namespace scg {

/// Network-ready form of a Sample.
template <typename T>
struct PreparedSample {
  Var<T> image;     // 3 x H x W in [-1, 1]
  Var<T> one_hot;   // C x H x W
  ClassMask mask;
};

template <typename T>
PreparedSample<T> prepare(const Sample& s, int num_classes) {
  if (!s.mask) throw DataError(std::string("sample ") + domain_name(s.domain) + "/" + s.id + " has no mask");
  return {constant(normalize<T>(s.image)), constant(one_hot<T>(*s.mask, num_classes)), *s.mask};
}

/// Non-owning view of the six networks through their forward interfaces.
template <typename T>
struct NetViews {
  const Translator<T>& gen_ct2us;
  const Translator<T>& gen_us2ct;
  const Critic<T>& disc_ct;
  const Critic<T>& disc_us;
  const Segmenter<T>& seg_ct;
  const Segmenter<T>& seg_us;

  static NetViews of(const Models<T>& m) {
    return {*m.gen_ct2us, *m.gen_us2ct, *m.disc_ct, *m.disc_us, *m.seg_ct, *m.seg_us};
  }
};

template <typename T>
struct ForwardBundle {
  Var<T> fake_us, rec_ct, fake_ct, rec_us;
  Var<T> score_fake_us;  // D_US(fake_us)
  Var<T> score_fake_ct;  // D_CT(fake_ct)
  Var<T> seg_fake_us;    // S_US(fake_us), scored against the CT mask
  Var<T> seg_fake_ct;    // S_CT(fake_ct), scored against the US mask
};

template <typename T>
ForwardBundle<T> forward_pass(const NetViews<T>& nets, const PreparedSample<T>& ct, const PreparedSample<T>& us) {
  ForwardBundle<T> f;
  f.fake_us = nets.gen_ct2us.translate(ct.image, ct.one_hot);
  f.rec_ct = nets.gen_us2ct.translate(f.fake_us, ct.one_hot);
  f.fake_ct = nets.gen_us2ct.translate(us.image, us.one_hot);
  f.rec_us = nets.gen_ct2us.translate(f.fake_ct, us.one_hot);
  f.score_fake_us = nets.disc_us.score(f.fake_us);
  f.score_fake_ct = nets.disc_ct.score(f.fake_ct);
  f.seg_fake_us = nets.seg_us.segment(f.fake_us);
  f.seg_fake_ct = nets.seg_ct.segment(f.fake_ct);
  return f;
}

struct TrainLogRecord {
  int epoch = 0;
  long long step = 0;
  double loss_G_total = 0, loss_adv_ct2us = 0, loss_adv_us2ct = 0, loss_cycle = 0;
  double loss_seg_ct = 0, loss_seg_us = 0;
  double loss_D_us = 0, loss_D_ct = 0, loss_S_us = 0, loss_S_ct = 0;
  double lr = 0;

  nlohmann::ordered_json to_json() const {
    return nlohmann::ordered_json{{"epoch", epoch},
                                  {"step", step},
                                  {"loss_G_total", loss_G_total},
                                  {"loss_adv_ct2us", loss_adv_ct2us},
                                  {"loss_adv_us2ct", loss_adv_us2ct},
                                  {"loss_cycle", loss_cycle},
                                  {"loss_seg_ct", loss_seg_ct},
                                  {"loss_seg_us", loss_seg_us},
                                  {"loss_D_us", loss_D_us},
                                  {"loss_D_ct", loss_D_ct},
                                  {"loss_S_us", loss_S_us},
                                  {"loss_S_ct", loss_S_ct},
                                  {"lr", lr}};
  }

  static TrainLogRecord from_json(const nlohmann::json& j) {
    TrainLogRecord r;
    r.epoch = j.at("epoch");
    r.step = j.at("step");
    r.loss_G_total = j.at("loss_G_total");
    r.loss_adv_ct2us = j.at("loss_adv_ct2us");
    r.loss_adv_us2ct = j.at("loss_adv_us2ct");
    r.loss_cycle = j.at("loss_cycle");
    r.loss_seg_ct = j.at("loss_seg_ct");
    r.loss_seg_us = j.at("loss_seg_us");
    r.loss_D_us = j.at("loss_D_us");
    r.loss_D_ct = j.at("loss_D_ct");
    r.loss_S_us = j.at("loss_S_us");
    r.loss_S_ct = j.at("loss_S_ct");
    r.lr = j.at("lr");
    return r;
  }

  bool all_finite() const {
    for (double v : {loss_G_total, loss_adv_ct2us, loss_adv_us2ct, loss_cycle, loss_seg_ct, loss_seg_us, loss_D_us,
                     loss_D_ct, loss_S_us, loss_S_ct, lr}) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

enum class Phase { generators = 1, discriminators = 2, segmentors = 3 };
enum class PhaseEvent { begin, after_backward, end };

template <typename T>
using PhaseObserver = std::function<void(Phase, PhaseEvent, const Models<T>&)>;

struct StepOptions {
  // Drops the segmentation terms from the phase-1 graph entirely (plain
  // CycleGAN objective); used as the reference for the lambda_seg = 0 path.
  bool omit_segmentation_terms = false;
};

template <typename T>
TrainLogRecord training_step(const Models<T>& models, Optimizers<T>& opt, const PreparedSample<T>& ct,
                             const PreparedSample<T>& us, const TrainConfig& cfg, double lr,
                             const PhaseObserver<T>& observer = {}, const StepOptions& options = {}) {
  auto notify = [&](Phase p, PhaseEvent e) {
    if (observer) observer(p, e, models);
  };
  TrainLogRecord rec;
  rec.lr = lr;
  const auto nets = NetViews<T>::of(models);

  // Phase 1: generators.
  models.set_modes(Mode::trainable, Mode::frozen, Mode::frozen);
  models.zero_grad();
  notify(Phase::generators, PhaseEvent::begin);
  Var<T> fake_us, fake_ct;
  {
    const auto f = forward_pass(nets, ct, us);
    const Var<T> adv_ct2us = adversarial_g_loss(f.score_fake_us, cfg.gan_mode);
    const Var<T> adv_us2ct = adversarial_g_loss(f.score_fake_ct, cfg.gan_mode);
    const Var<T> cycle = cycle_loss(ct.image, f.rec_ct, us.image, f.rec_us);
    Var<T> total;
    if (options.omit_segmentation_terms) {
      total = generator_total_without_segmentation(adv_ct2us, adv_us2ct, cycle, cfg.weights);
    } else {
      const Var<T> seg_us = seg_loss(f.seg_fake_us, ct.mask, cfg.dice);
      const Var<T> seg_ct = seg_loss(f.seg_fake_ct, us.mask, cfg.dice);
      total = generator_total(adv_ct2us, adv_us2ct, cycle, seg_ct, seg_us, cfg.weights);
      rec.loss_seg_ct = seg_ct.item();
      rec.loss_seg_us = seg_us.item();
    }
    rec.loss_adv_ct2us = adv_ct2us.item();
    rec.loss_adv_us2ct = adv_us2ct.item();
    rec.loss_cycle = cycle.item();
    rec.loss_G_total = total.item();
    if (!std::isfinite(rec.loss_G_total)) {
      throw NumericError("non-finite generator objective: " + rec.to_json().dump());
    }
    total.backward();
    notify(Phase::generators, PhaseEvent::after_backward);
    opt[NetId::gen_ct2us].step(*models.gen_ct2us, lr);
    opt[NetId::gen_us2ct].step(*models.gen_us2ct, lr);
    fake_us = detach(f.fake_us);
    fake_ct = detach(f.fake_ct);
  }
  notify(Phase::generators, PhaseEvent::end);

  // Phase 2: discriminators, on detached fakes. Generators stay unfrozen;
  // detachment alone keeps gradient out of them.
  models.set_modes(Mode::trainable, Mode::trainable, Mode::frozen);
  models.zero_grad();
  notify(Phase::discriminators, PhaseEvent::begin);
  {
    const Var<T> d_us = adversarial_d_loss(models.disc_us->score(us.image), models.disc_us->score(fake_us), cfg.gan_mode);
    const Var<T> d_ct = adversarial_d_loss(models.disc_ct->score(ct.image), models.disc_ct->score(fake_ct), cfg.gan_mode);
    rec.loss_D_us = d_us.item();
    rec.loss_D_ct = d_ct.item();
    if (!std::isfinite(rec.loss_D_us) || !std::isfinite(rec.loss_D_ct)) {
      throw NumericError("non-finite discriminator objective: " + rec.to_json().dump());
    }
    add(d_us, d_ct).backward();
    notify(Phase::discriminators, PhaseEvent::after_backward);
    opt[NetId::disc_us].step(*models.disc_us, lr);
    opt[NetId::disc_ct].step(*models.disc_ct, lr);
  }
  notify(Phase::discriminators, PhaseEvent::end);

  // Phase 3: segmentors.
  models.set_modes(Mode::frozen, Mode::frozen, Mode::trainable);
  models.zero_grad();
  notify(Phase::segmentors, PhaseEvent::begin);
  {
    Var<T> s_ct = seg_loss(models.seg_ct->segment(ct.image), ct.mask, cfg.dice);
    Var<T> s_us = seg_loss(models.seg_us->segment(us.image), us.mask, cfg.dice);
    if (cfg.segmentor_update_source == SegmentorUpdateSource::real_and_fake) {
      s_ct = add(s_ct, seg_loss(models.seg_ct->segment(fake_ct), us.mask, cfg.dice));
      s_us = add(s_us, seg_loss(models.seg_us->segment(fake_us), ct.mask, cfg.dice));
    }
    rec.loss_S_ct = s_ct.item();
    rec.loss_S_us = s_us.item();
    if (!std::isfinite(rec.loss_S_ct) || !std::isfinite(rec.loss_S_us)) {
      throw NumericError("non-finite segmentor objective: " + rec.to_json().dump());
    }
    add(s_ct, s_us).backward();
    notify(Phase::segmentors, PhaseEvent::after_backward);
    opt[NetId::seg_ct].step(*models.seg_ct, lr);
    opt[NetId::seg_us].step(*models.seg_us, lr);
  }
  notify(Phase::segmentors, PhaseEvent::end);
  models.zero_grad();
  return rec;
}

/// Constant until decay_start_epoch, then linear to zero at epochs + 1.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw ArgumentError("lr_at: epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
  }
  if (epoch <= cfg.decay_start_epoch) return cfg.lr;
  const double span = static_cast<double>(cfg.epochs - cfg.decay_start_epoch + 1);
  return cfg.lr * (1.0 - static_cast<double>(epoch - cfg.decay_start_epoch) / span);
}

struct SegmentationReport {
  std::vector<double> per_class_dice_ct, per_class_dice_us;
  double mean_foreground_ct = 0.0, mean_foreground_us = 0.0;
  std::size_t held_out_ct = 0, held_out_us = 0;

  nlohmann::ordered_json to_json() const {
    return {{"per_class_dice_ct", per_class_dice_ct}, {"mean_foreground_dice_ct", mean_foreground_ct},
            {"held_out_ct", held_out_ct},             {"per_class_dice_us", per_class_dice_us},
            {"mean_foreground_dice_us", mean_foreground_us}, {"held_out_us", held_out_us}};
  }
};

/// Last ceil(fraction * n) samples (by id) are held out, keeping at least
/// one training sample.
inline std::size_t held_out_count(std::size_t n, double fraction) {
  if (fraction <= 0.0 || n < 2) return 0;
  return std::min(n - 1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
}

template <typename T>
DiceAccumulator evaluate_segmentor(const Segmenter<T>& seg, const std::vector<const Sample*>& samples, int num_classes) {
  DiceAccumulator acc(num_classes);
  for (const Sample* s : samples) {
    const auto p = prepare<T>(*s, num_classes);
    acc.add(argmax_mask(seg.segment(p.image).value()), p.mask);
  }
  return acc;
}

/// Supervised segmentor training on each domain's own labels, with a
/// held-out Dice report.
template <typename T>
SegmentationReport pretrain_segmentors(const Dataset& ds, const TrainConfig& cfg, int epochs, const Models<T>& models,
                                       double holdout_fraction = 0.2, std::ostream* progress = nullptr) {
  if (epochs < 0) throw ArgumentError("pretrain_segmentors: epochs must be >= 0");
  SegmentationReport report;
  for (Domain d : {Domain::ct, Domain::us}) {
    Segmentor<T>& seg = d == Domain::ct ? *models.seg_ct : *models.seg_us;
    const auto& all = ds.samples(d);
    const std::size_t hold = held_out_count(all.size(), holdout_fraction);
    std::vector<const Sample*> train_set, eval_set;
    for (std::size_t i = 0; i < all.size(); ++i) (i + hold < all.size() ? train_set : eval_set).push_back(&all[i]);
    if (train_set.empty()) throw DataError("pretrain_segmentors: no training samples");

    Adam<T> opt(seg.parameter_count());
    seg.set_mode(Mode::trainable);
    for (int e = 0; e < epochs; ++e) {
      const auto order = epoch_permutation(train_set.size(), cfg.seed, d, static_cast<std::uint64_t>(e), 0x9e7a);
      double epoch_loss = 0.0;
      for (std::size_t k : order) {
        const auto p = prepare<T>(*train_set[k], cfg.num_classes);
        seg.zero_grad();
        const Var<T> loss = seg_loss(seg.segment(p.image), p.mask, cfg.dice);
        if (!std::isfinite(static_cast<double>(loss.item()))) {
          throw NumericError("non-finite segmentor loss during pre-training");
        }
        loss.backward();
        opt.step(seg, cfg.lr);
        epoch_loss += loss.item();
      }
      if (progress) {
        *progress << "pretrain " << domain_name(d) << " epoch " << (e + 1) << "/" << epochs
                  << " mean seg loss " << epoch_loss / static_cast<double>(train_set.size()) << "\n";
      }
    }
    seg.zero_grad();
    const auto acc = evaluate_segmentor<T>(seg, eval_set.empty() ? train_set : eval_set, cfg.num_classes);
    if (d == Domain::ct) {
      report.per_class_dice_ct = acc.coefficients();
      report.mean_foreground_ct = acc.mean_foreground();
      report.held_out_ct = eval_set.size();
    } else {
      report.per_class_dice_us = acc.coefficients();
      report.mean_foreground_us = acc.mean_foreground();
      report.held_out_us = eval_set.size();
    }
  }
  return report;
}

struct TrainOptions {
  std::optional<fs::path> resume_from;
  std::ostream* progress = nullptr;
  double pretrain_holdout = 0.2;
};

struct TrainResult {
  fs::path final_checkpoint;
  std::string content_hash;
  fs::path log_file;
  std::optional<SegmentationReport> pretrain;
};

inline fs::path checkpoint_dir(const fs::path& out_dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d", epoch);
  return out_dir / "checkpoints" / name;
}

namespace detail {

// Keeps the log lines whose epoch is <= last_epoch (resume truncation).
inline void truncate_log(const fs::path& log, int last_epoch) {
  if (!fs::exists(log)) return;
  std::istringstream in(read_text_file(log));
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("epoch").get<int>() <= last_epoch) kept += line + "\n";
  }
  write_text_file(log, kept);
}

}  // namespace detail

/// Full training run. Writes <out>/train_log.jsonl (one record per step),
/// checkpoints under <out>/checkpoints/epoch_NNNN and a copy of the final
/// state under <out>/final.
template <typename T>
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const fs::path& out_dir, const TrainOptions& options = {}) {
  cfg.validate();
  if (ds.manifest().num_classes != cfg.num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.manifest().num_classes) + " classes, configuration " +
                      std::to_string(cfg.num_classes));
  }
  if (ds.size(Domain::ct) == 0 || ds.size(Domain::us) == 0) throw DataError("train: both domains need samples");
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create output directory " + out_dir.string() + ": " + e.what());
  }
  TrainResult result;
  result.log_file = out_dir / "train_log.jsonl";

  CheckpointBundle<T> state;
  int start_epoch = 1;
  if (options.resume_from) {
    state = load_checkpoint<T>(*options.resume_from, &cfg);
    start_epoch = state.epoch + 1;
    state.config = cfg;
    detail::truncate_log(result.log_file, state.epoch);
  } else {
    state.config = cfg;
    state.models = Models<T>::build(cfg);
    state.optimizers = Optimizers<T>::build(state.models);
    write_text_file(result.log_file, "");
    if (cfg.pretrain_seg_epochs > 0) {
      result.pretrain = pretrain_segmentors<T>(ds, cfg, cfg.pretrain_seg_epochs, state.models, options.pretrain_holdout,
                                               options.progress);
      write_text_file(out_dir / "pretrain_metrics.json", result.pretrain->to_json().dump(2) + "\n");
    }
  }

  std::ofstream log(result.log_file, std::ios::app | std::ios::binary);
  if (!log) throw IoError("cannot open log " + result.log_file.string());
  const std::size_t steps = steps_per_epoch(ds);
  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    double cycle_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const auto [ct, us] = sample_unpaired_batch(ds, static_cast<std::uint64_t>(epoch - 1), step, cfg.seed);
      const auto pct = prepare<T>(ct, cfg.num_classes);
      const auto pus = prepare<T>(us, cfg.num_classes);
      TrainLogRecord rec = training_step(state.models, state.optimizers, pct, pus, cfg, lr);
      rec.epoch = epoch;
      rec.step = static_cast<long long>(step);
      log << rec.to_json().dump() << "\n";
      log.flush();
      if (!log) throw IoError("write failed for " + result.log_file.string());
      cycle_sum += rec.loss_cycle;
    }
    state.epoch = epoch;
    if (options.progress) {
      *options.progress << "epoch " << epoch << "/" << cfg.epochs << " lr " << lr << " mean cycle loss "
                        << cycle_sum / static_cast<double>(steps) << "\n";
    }
    const bool last = epoch == cfg.epochs;
    if (last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)) {
      result.final_checkpoint = checkpoint_dir(out_dir, epoch);
      result.content_hash = save_checkpoint(state, result.final_checkpoint);
    }
  }
  if (start_epoch > cfg.epochs) {
    result.final_checkpoint = checkpoint_dir(out_dir, state.epoch);
    result.content_hash = save_checkpoint(state, result.final_checkpoint);
  }
  save_checkpoint(state, out_dir / "final");
  return result;
}

}  // namespace scg

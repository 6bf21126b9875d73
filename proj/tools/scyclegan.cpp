// scyclegan: phantom synthesis, training, translation, evaluation and
// gradient checking from the command line.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numeric, 4 I/O.

#include <cstdio>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "scyclegan/scyclegan.hpp"

using namespace scg;

namespace {

std::pair<int, int> parse_size(const std::string& s) {
  static const std::regex pattern(R"((\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, pattern)) throw ArgumentError("size must look like HxW, got '" + s + "'");
  const int h = std::stoi(m[1]), w = std::stoi(m[2]);
  if (h <= 0 || w <= 0 || h % 8 != 0 || w % 8 != 0) {
    throw ArgumentError("size " + s + ": both dimensions must be positive and divisible by 8");
  }
  return {h, w};
}

std::string checkpoint_dtype(const fs::path& dir) {
  const fs::path f = dir / "manifest.json";
  if (!fs::exists(f)) throw CheckpointError("missing checkpoint manifest " + f.string());
  try {
    return nlohmann::json::parse(read_text_file(f)).at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest " + f.string() + ": " + e.what());
  }
}

// Calls fn(bundle) with the checkpoint loaded at its stored precision.
template <typename Fn>
void with_checkpoint(const fs::path& dir, Fn fn) {
  const std::string dtype = checkpoint_dtype(dir);
  if (dtype == "float32") {
    fn(load_checkpoint<float>(dir));
  } else if (dtype == "float64") {
    fn(load_checkpoint<double>(dir));
  } else {
    throw CheckpointError("checkpoint " + dir.string() + " has unknown dtype " + dtype);
  }
}

struct PhantomArgs {
  std::string out;
  std::uint64_t seed = 0;
  int n_ct = 40, n_us = 40;
  std::string size = "64x64";
  bool paired = false;
};

void run_phantom_gen(const PhantomArgs& a) {
  const auto [h, w] = parse_size(a.size);
  PhantomOptions options;
  options.paired = a.paired;
  const auto m = build_phantom_dataset(a.seed, a.n_ct, a.n_us, h, w, a.out, options);
  std::cout << "wrote " << m.n_ct << " ct + " << m.n_us << " us samples (" << m.height << "x" << m.width
            << ", seed " << a.seed << ") to " << a.out << "\n";
}

struct TrainArgs {
  std::string data, out, resume, precision = "single";
  std::string unet_widths = "64,128,256", disc_widths = "64,128,256,512";
  std::string gan_mode = "non_saturating", segmentor_update = "real_only";
  int bottleneck = 512;
  bool print_config = false;
  TrainConfig cfg;
};

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    try {
      std::size_t used = 0;
      const std::string item = s.substr(pos, comma - pos);
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError("widths must be a comma-separated list of integers, got '" + s + "'");
    }
    pos = comma + 1;
  }
  return out;
}

void run_train(TrainArgs& a) {
  TrainConfig& cfg = a.cfg;
  cfg.gan_mode = parse_gan_mode(a.gan_mode);
  cfg.segmentor_update_source = parse_segmentor_source(a.segmentor_update);
  cfg.unet.encoder = parse_widths(a.unet_widths);
  cfg.unet.bottleneck = a.bottleneck;
  cfg.discriminator.widths = parse_widths(a.disc_widths);
  if (cfg.decay_start_epoch > cfg.epochs) cfg.decay_start_epoch = cfg.epochs;
  std::cout << "config " << cfg.to_json().dump() << "\n";
  if (a.print_config) {
    cfg.validate();
    return;
  }
  if (a.data.empty() || a.out.empty()) throw ArgumentError("train needs --data and --out");
  const Dataset ds = load_dataset(a.data);
  cfg.height = ds.manifest().height;
  cfg.width = ds.manifest().width;
  TrainOptions options;
  options.progress = &std::cerr;
  if (!a.resume.empty()) options.resume_from = fs::path(a.resume);
  TrainResult r;
  if (a.precision == "single") {
    r = train<float>(ds, cfg, a.out, options);
  } else if (a.precision == "double") {
    r = train<double>(ds, cfg, a.out, options);
  } else {
    throw ArgumentError("precision must be single or double");
  }
  std::cout << "final checkpoint " << r.final_checkpoint.string() << " content hash " << r.content_hash << "\n";
  if (r.pretrain) {
    std::cout << "pretrained segmentors: held-out mean foreground Dice ct " << r.pretrain->mean_foreground_ct << ", us "
              << r.pretrain->mean_foreground_us << "\n";
  }
}

struct InferenceArgs {
  std::string checkpoint, data, direction, out, report;
  bool allow_unlabeled = false;
};

void run_translate(const InferenceArgs& a) {
  const Direction d = parse_direction(a.direction);
  const Dataset ds = load_dataset(a.data, {.require_masks = !a.allow_unlabeled});
  with_checkpoint(a.checkpoint, [&](const auto& ckpt) {
    const auto& samples = ds.samples(source_domain(d));
    const auto images = translate(translator_for(ckpt.models, d), samples, ckpt.config.num_classes,
                                  InferenceOptions{a.allow_unlabeled});
    write_translations(a.out, d, samples, images);
    std::cout << "translated " << images.size() << " images (" << to_string(d) << ") into " << a.out << "/fake_"
              << to_string(d) << "\n";
  });
}

void run_eval(const InferenceArgs& a) {
  const Direction d = parse_direction(a.direction);
  const Dataset ds = load_dataset(a.data);
  with_checkpoint(a.checkpoint, [&](const auto& ckpt) {
    const MetricsReport r = semantic_consistency(ckpt, ds, d);
    if (!a.out.empty()) {
      const auto& samples = ds.samples(source_domain(d));
      write_translations(a.out, d, samples, translate(translator_for(ckpt.models, d), samples, ckpt.config.num_classes));
    }
    export_report(r, a.report);
    std::cout << "semantic consistency (" << to_string(d) << ", " << r.n_samples
              << " samples): mean foreground Dice " << r.mean_foreground_dice << "\n";
  });
}

struct GradCheckArgs {
  std::string precision = "double";
  double tolerance = -1.0;  // negative: per-precision default
};

int run_grad_check_cmd(const GradCheckArgs& a) {
  GradCheckOptions options;
  if (a.precision == "both") {
    options.precisions = {Precision::dbl, Precision::single};
  } else {
    options.precisions = {parse_precision(a.precision)};
  }
  if (a.tolerance > 0.0) {
    if (options.precisions.size() != 1) throw ArgumentError("--tolerance needs a single --precision");
    (options.precisions[0] == Precision::dbl ? options.tolerance_double : options.tolerance_single) = a.tolerance;
  }
  options.progress = [](const std::string& line) { std::cerr << line << "\n"; };
  const GradCheckReport report = run_grad_check(options);
  for (const auto& e : report.entries) {
    std::printf("%-20s %-6s params %6zu  max relative error %.3e  tolerance %.0e  %s\n", e.objective.c_str(),
                to_string(e.precision).c_str(), e.parameters, e.max_relative_error, e.tolerance,
                e.passed ? "ok" : "FAILED");
  }
  if (report.passed()) return 0;
  std::cerr << "error: gradient check failed (see FAILED rows)\n";
  return 3;
}

struct FanArgs {
  std::string in, out;
  double aperture_deg = 35.0, rmin_frac = 0.05, rmax_frac = 0.95;
};

void run_fan_mask(const FanArgs& a) {
  const ByteImage img = read_png(a.in);
  FanGeometry fan = default_fan(img.height, img.width);
  fan.half_aperture = a.aperture_deg * std::numbers::pi / 180.0;
  fan.r_min = a.rmin_frac * img.height;
  fan.r_max = a.rmax_frac * img.height;
  write_png(a.out, apply_fan_mask(img, fan));
  std::cout << "wrote " << a.out << "\n";
}

int exit_code(const Error& e) { return static_cast<int>(e.category()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S-CycleGAN: semantic-consistent CT <-> ultrasound translation on procedural phantoms"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom-gen", "Synthesize a paired-label CT/US phantom dataset");
  c_ph->add_option("--out", ph.out, "Output directory")->required();
  c_ph->add_option("--seed", ph.seed, "Dataset seed")->capture_default_str();
  c_ph->add_option("--n-ct", ph.n_ct, "Number of CT-style samples")->capture_default_str();
  c_ph->add_option("--n-us", ph.n_us, "Number of US-style samples")->capture_default_str();
  c_ph->add_option("--size", ph.size, "Canvas HxW, both divisible by 8")->capture_default_str();
  c_ph->add_flag("--paired", ph.paired, "US samples reuse the CT scenes");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Segmentor pre-training (optional) and three-phase S-CycleGAN training");
  c_tr->add_option("--data", tr.data, "Dataset directory");
  c_tr->add_option("--out", tr.out, "Run directory (log, checkpoints)");
  c_tr->add_option("--epochs", tr.cfg.epochs, "Training epochs")->capture_default_str();
  c_tr->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
  c_tr->add_option("--decay-start", tr.cfg.decay_start_epoch, "Last epoch at full learning rate")->capture_default_str();
  c_tr->add_option("--lambda-cycle", tr.cfg.weights.lambda_cycle, "Cycle-consistency weight")->capture_default_str();
  c_tr->add_option("--lambda-seg", tr.cfg.weights.lambda_seg, "Semantic-consistency weight (0 = plain CycleGAN)")
      ->capture_default_str();
  c_tr->add_option("--gan-mode", tr.gan_mode, "non_saturating|saturating|least_squares")->capture_default_str();
  c_tr->add_option("--seed", tr.cfg.seed, "Initialization and sampling seed")->capture_default_str();
  c_tr->add_option("--pretrain-seg-epochs", tr.cfg.pretrain_seg_epochs, "Supervised segmentor epochs before training")
      ->capture_default_str();
  c_tr->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Checkpoint period in epochs (0 = final only)")
      ->capture_default_str();
  c_tr->add_option("--segmentor-update", tr.segmentor_update, "real_only|real_and_fake")->capture_default_str();
  c_tr->add_option("--unet-widths", tr.unet_widths, "U-Net encoder widths")->capture_default_str();
  c_tr->add_option("--bottleneck", tr.bottleneck, "U-Net bottleneck width")->capture_default_str();
  c_tr->add_option("--disc-widths", tr.disc_widths, "Discriminator stage widths")->capture_default_str();
  c_tr->add_option("--precision", tr.precision, "single|double")->capture_default_str();
  c_tr->add_option("--resume", tr.resume, "Checkpoint directory to resume from");
  c_tr->add_flag("--print-config", tr.print_config, "Echo the resolved configuration and exit");

  InferenceArgs tl;
  auto* c_tl = app.add_subcommand("translate", "Translate every source-domain image of a dataset");
  c_tl->add_option("--checkpoint", tl.checkpoint, "Checkpoint directory")->required();
  c_tl->add_option("--data", tl.data, "Dataset directory")->required();
  c_tl->add_option("--direction", tl.direction, "ct2us|us2ct")->required();
  c_tl->add_option("--out", tl.out, "Output directory")->required();
  c_tl->add_flag("--allow-unlabeled", tl.allow_unlabeled, "Condition unlabeled images on an all-background mask");

  InferenceArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Semantic-consistency Dice of a checkpoint");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  c_ev->add_option("--data", ev.data, "Dataset directory")->required();
  c_ev->add_option("--direction", ev.direction, "ct2us|us2ct")->required();
  c_ev->add_option("--report", ev.report, "Metrics JSON file")->required();
  c_ev->add_option("--out", ev.out, "Also write the translated images here");

  GradCheckArgs gc;
  auto* c_gc = app.add_subcommand("grad-check", "Finite-difference check of every parameter gradient (miniature nets)");
  c_gc->add_option("--precision", gc.precision, "double|single|both")->capture_default_str();
  c_gc->add_option("--tolerance", gc.tolerance, "Max relative error (default 1e-5 double, 1e-3 single)");

  FanArgs fa;
  auto* c_fa = app.add_subcommand("fan-mask", "Crop an image to a convex-probe fan (apex top-center)");
  c_fa->add_option("--in", fa.in, "Input PNG")->required();
  c_fa->add_option("--out", fa.out, "Output PNG")->required();
  c_fa->add_option("--aperture-deg", fa.aperture_deg, "Half-aperture in degrees")->capture_default_str();
  c_fa->add_option("--rmin-frac", fa.rmin_frac, "Inner radius as a fraction of the height")->capture_default_str();
  c_fa->add_option("--rmax-frac", fa.rmax_frac, "Outer radius as a fraction of the height")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_ph) run_phantom_gen(ph);
    if (*c_tr) run_train(tr);
    if (*c_tl) run_translate(tl);
    if (*c_ev) run_eval(ev);
    if (*c_gc) return run_grad_check_cmd(gc);
    if (*c_fa) run_fan_mask(fa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

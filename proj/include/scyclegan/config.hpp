#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "scyclegan/losses.hpp"
#include "scyclegan/networks.hpp"

namespace scg {

enum class SegmentorUpdateSource { real_only, real_and_fake };

inline std::string to_string(SegmentorUpdateSource s) { return s == SegmentorUpdateSource::real_only ? "real_only" : "real_and_fake"; }

inline SegmentorUpdateSource parse_segmentor_source(const std::string& s) {
  if (s == "real_only") return SegmentorUpdateSource::real_only;
  if (s == "real_and_fake") return SegmentorUpdateSource::real_and_fake;
  throw ArgumentError("unknown segmentor update source '" + s + "'");
}

/// Every training hyperparameter. Defaults: 300 epochs, lr 2e-4 held until
/// epoch 100 then decayed, batch size 1, lambda_cycle 10, lambda_seg 0.5.
struct TrainConfig {
  int epochs = 300;
  double lr = 2e-4;
  int decay_start_epoch = 100;
  int batch_size = 1;
  LossWeights weights;
  GanMode gan_mode = GanMode::non_saturating;
  DiceParams dice;
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int num_classes = kNumClasses;
  SegmentorUpdateSource segmentor_update_source = SegmentorUpdateSource::real_only;
  int checkpoint_every = 0;  // epochs; 0 = only the final epoch
  int pretrain_seg_epochs = 0;
  UNetWidths unet;
  DiscriminatorConfig discriminator;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (decay_start_epoch < 1 || decay_start_epoch > epochs) throw ConfigError("decay_start_epoch must lie in [1, epochs]");
    if (batch_size != 1) throw ConfigError("batch size is fixed at 1");
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (weights.lambda_cycle < 0 || weights.lambda_seg < 0) throw ConfigError("loss weights must be non-negative");
    if (!(dice.epsilon > 0.0)) throw ConfigError("dice epsilon must be positive");
    if (num_classes < 2 || num_classes > 255) throw ConfigError("class count must lie in [2, 255]");
    if (checkpoint_every < 0 || pretrain_seg_epochs < 0) throw ConfigError("epoch counts must be non-negative");
    unet.validate();
    discriminator.validate();
  }

  GeneratorConfig generator_config() const { return {num_classes, unet}; }
  SegmentorConfig segmentor_config() const { return {num_classes, unet}; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["decay_start_epoch"] = decay_start_epoch;
    j["batch_size"] = batch_size;
    j["lambda_cycle"] = weights.lambda_cycle;
    j["lambda_seg"] = weights.lambda_seg;
    j["gan_mode"] = to_string(gan_mode);
    j["dice_epsilon"] = dice.epsilon;
    j["seed"] = seed;
    j["canvas"] = {{"height", height}, {"width", width}};
    j["classes"] = num_classes;
    j["segmentor_update_source"] = to_string(segmentor_update_source);
    j["checkpoint_every"] = checkpoint_every;
    j["pretrain_seg_epochs"] = pretrain_seg_epochs;
    j["unet_widths"] = unet.encoder;
    j["unet_bottleneck"] = unet.bottleneck;
    j["discriminator_widths"] = discriminator.widths;
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    try {
      TrainConfig c;
      c.epochs = j.at("epochs").get<int>();
      c.lr = j.at("lr").get<double>();
      c.decay_start_epoch = j.at("decay_start_epoch").get<int>();
      c.batch_size = j.at("batch_size").get<int>();
      c.weights.lambda_cycle = j.at("lambda_cycle").get<double>();
      c.weights.lambda_seg = j.at("lambda_seg").get<double>();
      c.gan_mode = parse_gan_mode(j.at("gan_mode").get<std::string>());
      c.dice.epsilon = j.at("dice_epsilon").get<double>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.height = j.at("canvas").at("height").get<int>();
      c.width = j.at("canvas").at("width").get<int>();
      c.num_classes = j.at("classes").get<int>();
      c.segmentor_update_source = parse_segmentor_source(j.at("segmentor_update_source").get<std::string>());
      c.checkpoint_every = j.at("checkpoint_every").get<int>();
      c.pretrain_seg_epochs = j.at("pretrain_seg_epochs").get<int>();
      c.unet.encoder = j.at("unet_widths").get<std::vector<int>>();
      c.unet.bottleneck = j.at("unet_bottleneck").get<int>();
      c.discriminator.widths = j.at("discriminator_widths").get<std::vector<int>>();
      return c;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

}  // namespace scg

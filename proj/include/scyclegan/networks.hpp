#pragma once

// The six networks of the semantic-consistency CycleGAN: two mask-conditioned
// U-Net generators, two patch discriminators and two U-Net segmentors.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "scyclegan/conv.hpp"
#include "scyclegan/rng.hpp"

namespace scg {

enum class Mode { trainable, frozen };

template <typename T>
struct NamedParameter {
  std::string name;
  std::vector<int> dims;
  Var<T> var;
};

/// Owns an ordered parameter list and its trainable/frozen flag. Frozen
/// parameters still pass gradients through to upstream inputs but never
/// accumulate their own.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  virtual ~Network() = default;

  const std::vector<NamedParameter<T>>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  std::vector<T> flat_parameters() const {
    std::vector<T> out;
    out.reserve(parameter_count());
    for (const auto& p : params_) out.insert(out.end(), p.var.value().data.begin(), p.var.value().data.end());
    return out;
  }

  void load_parameters(std::span<const T> values) {
    if (values.size() != parameter_count()) {
      throw ShapeError("load_parameters: got " + std::to_string(values.size()) + " values, network has " +
                       std::to_string(parameter_count()));
    }
    std::size_t offset = 0;
    for (auto& p : params_) {
      auto& data = p.var.mutable_value().data;
      std::copy(values.begin() + offset, values.begin() + offset + data.size(), data.begin());
      offset += data.size();
    }
  }

  /// Accumulated gradients in parameter order; zeros where none flowed.
  std::vector<T> flat_gradients() const {
    std::vector<T> out;
    out.reserve(parameter_count());
    for (const auto& p : params_) {
      if (p.var.grad().empty()) {
        out.insert(out.end(), p.var.value().size(), T(0));
      } else {
        out.insert(out.end(), p.var.grad().begin(), p.var.grad().end());
      }
    }
    return out;
  }

  bool has_gradients() const {
    for (const auto& p : params_) {
      for (T g : p.var.grad()) {
        if (g != T(0)) return true;
      }
    }
    return false;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  void set_mode(Mode mode) {
    mode_ = mode;
    for (auto& p : params_) p.var.set_requires_grad(mode == Mode::trainable);
  }
  Mode mode() const { return mode_; }

  std::vector<NamedParameter<T>>& mutable_parameters() { return params_; }

 protected:
  Var<T> add_parameter(const std::string& name, std::vector<int> dims, std::mt19937_64* gaussian_init) {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    Tensor<T> value(Shape{1, 1, static_cast<int>(n)});
    if (gaussian_init != nullptr) {
      std::normal_distribution<double> dist(0.0, 0.02);
      for (auto& v : value.data) v = static_cast<T>(dist(*gaussian_init));
    }
    Var<T> var(std::move(value), mode_ == Mode::trainable);
    params_.push_back({name, std::move(dims), var});
    return var;
  }

 private:
  std::vector<NamedParameter<T>> params_;
  Mode mode_ = Mode::trainable;
};

/// Image (+ one-hot mask) -> image in [-1, 1].
template <typename T>
class Translator {
 public:
  virtual ~Translator() = default;
  virtual Var<T> translate(const Var<T>& image, const Var<T>& mask_one_hot) const = 0;
};

/// Image -> per-pixel class probabilities (C planes).
template <typename T>
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual Var<T> segment(const Var<T>& image) const = 0;
};

/// Image -> patch score map (logits).
template <typename T>
class Critic {
 public:
  virtual ~Critic() = default;
  virtual Var<T> score(const Var<T>& image) const = 0;
};

struct UNetWidths {
  std::vector<int> encoder{64, 128, 256};
  int bottleneck = 512;

  void validate() const {
    if (encoder.empty() || bottleneck <= 0) throw ConfigError("U-Net needs at least one encoder stage and a bottleneck");
    for (int w : encoder) {
      if (w <= 0) throw ConfigError("U-Net widths must be positive");
    }
  }
  int divisor() const { return 1 << encoder.size(); }
  bool operator==(const UNetWidths&) const = default;
};

struct GeneratorConfig {
  int num_classes = kNumClasses;
  UNetWidths widths;
  int in_channels() const { return 3 + num_classes; }
  int out_channels() const { return 3; }
};

struct SegmentorConfig {
  int num_classes = kNumClasses;
  UNetWidths widths;
  int in_channels() const { return 3; }
  int out_channels() const { return num_classes; }
};

struct DiscriminatorConfig {
  // Every stage but the last halves the resolution; the last has stride 1.
  std::vector<int> widths{64, 128, 256, 512};

  void validate() const {
    if (widths.empty()) throw ConfigError("discriminator needs at least one stage");
    for (int w : widths) {
      if (w <= 0) throw ConfigError("discriminator widths must be positive");
    }
  }

  /// Score-map side length for an input side, following the 4x4 / pad 1
  /// convolution arithmetic; < 1 means the input is too small.
  int output_size(int in) const {
    int s = in;
    for (std::size_t i = 0; i <= widths.size(); ++i) {
      if (s < 2) return 0;
      s = (s + 2 - 4) / (i + 1 < widths.size() ? 2 : 1) + 1;
    }
    return s;
  }
  bool operator==(const DiscriminatorConfig&) const = default;
};

namespace detail {

template <typename T>
struct ConvBlockParams {
  Var<T> conv0, conv1;
  int out = 0;
};

// Shared U-Net body: [conv3x3-IN-ReLU]x2 per stage, 2x2 max-pool down,
// 2x2 transposed-conv up, skip concatenation, 1x1 head.
template <typename T>
class UNetBody {
 public:
  template <typename AddParam>
  UNetBody(int in_channels, int out_channels, const UNetWidths& widths, AddParam add) : widths_(widths), out_(out_channels) {
    widths.validate();
    int ch = in_channels;
    for (std::size_t i = 0; i < widths.encoder.size(); ++i) {
      enc_.push_back(block(add, "enc" + std::to_string(i), ch, widths.encoder[i]));
      ch = widths.encoder[i];
    }
    mid_ = block(add, "bottleneck", ch, widths.bottleneck);
    ch = widths.bottleneck;
    for (std::size_t k = widths.encoder.size(); k-- > 0;) {
      const int w = widths.encoder[k];
      const std::string p = "dec" + std::to_string(k);
      up_w_.insert(up_w_.begin(), add(p + ".up.weight", {ch, w, 2, 2}, true));
      up_b_.insert(up_b_.begin(), add(p + ".up.bias", {w}, false));
      dec_.insert(dec_.begin(), block(add, p, 2 * w, w));
      ch = w;
    }
    head_w_ = add("head.weight", {out_channels, ch, 1, 1}, true);
    head_b_ = add("head.bias", {out_channels}, false);
  }

  Var<T> forward(const Var<T>& x) const {
    const Shape s = x.shape();
    if (s.height % widths_.divisor() != 0 || s.width % widths_.divisor() != 0 || s.height == 0 || s.width == 0) {
      throw ShapeError("U-Net input " + s.str() + ": spatial dims must be divisible by " +
                       std::to_string(widths_.divisor()));
    }
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (const auto& b : enc_) {
      h = run_block(h, b);
      skips.push_back(h);
      h = max_pool2(h);
    }
    h = run_block(h, mid_);
    for (std::size_t k = enc_.size(); k-- > 0;) {
      h = conv_transpose2(h, up_w_[k], up_b_[k], widths_.encoder[k]);
      h = concat_channels(skips[k], h);
      h = run_block(h, dec_[k]);
    }
    return conv2d(h, head_w_, head_b_, out_, ConvGeometry{1, 1, 0, PadMode::zero});
  }

 private:
  template <typename AddParam>
  static ConvBlockParams<T> block(AddParam& add, const std::string& prefix, int in, int out) {
    ConvBlockParams<T> b;
    b.out = out;
    b.conv0 = add(prefix + ".conv0.weight", {out, in, 3, 3}, true);
    b.conv1 = add(prefix + ".conv1.weight", {out, out, 3, 3}, true);
    return b;
  }

  static Var<T> run_block(const Var<T>& x, const ConvBlockParams<T>& b) {
    const ConvGeometry g{3, 1, 1, PadMode::reflect};
    Var<T> h = relu(instance_norm(conv2d(x, b.conv0, Var<T>(), b.out, g)));
    return relu(instance_norm(conv2d(h, b.conv1, Var<T>(), b.out, g)));
  }

  UNetWidths widths_;
  int out_;
  std::vector<ConvBlockParams<T>> enc_, dec_;
  ConvBlockParams<T> mid_;
  std::vector<Var<T>> up_w_, up_b_;
  Var<T> head_w_, head_b_;
};

}  // namespace detail

/// Mask-conditioned U-Net generator with a tanh head.
template <typename T>
class Generator : public Network<T>, public Translator<T> {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(make_engine({seed})), body_(cfg.in_channels(), cfg.out_channels(), cfg.widths, adder()) {}

  const GeneratorConfig& config() const { return cfg_; }

  Var<T> translate(const Var<T>& image, const Var<T>& mask_one_hot) const override {
    if (image.shape().channels != 3) throw ShapeError("generator: image must have 3 channels, got " + image.shape().str());
    if (mask_one_hot.shape() != Shape{cfg_.num_classes, image.shape().height, image.shape().width}) {
      throw ShapeError("generator: mask " + mask_one_hot.shape().str() + " does not match image " + image.shape().str() +
                       " with " + std::to_string(cfg_.num_classes) + " classes");
    }
    return tanh(body_.forward(concat_channels(image, mask_one_hot)));
  }

 private:
  auto adder() {
    return [this](const std::string& name, std::vector<int> dims, bool gaussian) {
      return this->add_parameter(name, std::move(dims), gaussian ? &rng_ : nullptr);
    };
  }

  GeneratorConfig cfg_;
  std::mt19937_64 rng_;
  detail::UNetBody<T> body_;
};

/// U-Net segmentor with a per-pixel softmax head.
template <typename T>
class Segmentor : public Network<T>, public Segmenter<T> {
 public:
  Segmentor(const SegmentorConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(make_engine({seed})), body_(cfg.in_channels(), cfg.out_channels(), cfg.widths, adder()) {}

  const SegmentorConfig& config() const { return cfg_; }

  Var<T> segment(const Var<T>& image) const override {
    if (image.shape().channels != 3) throw ShapeError("segmentor: image must have 3 channels, got " + image.shape().str());
    return softmax_channels(body_.forward(image));
  }

 private:
  auto adder() {
    return [this](const std::string& name, std::vector<int> dims, bool gaussian) {
      return this->add_parameter(name, std::move(dims), gaussian ? &rng_ : nullptr);
    };
  }

  SegmentorConfig cfg_;
  std::mt19937_64 rng_;
  detail::UNetBody<T> body_;
};

/// Patch classifier: 4x4 convolutions, leaky rectifier (0.2), instance
/// normalization after the first stage, zero padding, 1-channel map.
template <typename T>
class Discriminator : public Network<T>, public Critic<T> {
 public:
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    auto rng = make_engine({seed});
    int ch = 3;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      const std::string p = "stage" + std::to_string(i);
      weights_.push_back(this->add_parameter(p + ".weight", {cfg.widths[i], ch, 4, 4}, &rng));
      if (i == 0) first_bias_ = this->add_parameter(p + ".bias", {cfg.widths[i]}, nullptr);
      ch = cfg.widths[i];
    }
    head_w_ = this->add_parameter("head.weight", {1, ch, 4, 4}, &rng);
    head_b_ = this->add_parameter("head.bias", {1}, nullptr);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  Var<T> score(const Var<T>& image) const override {
    const Shape s = image.shape();
    if (s.channels != 3) throw ShapeError("discriminator: image must have 3 channels, got " + s.str());
    if (cfg_.output_size(s.height) < 1 || cfg_.output_size(s.width) < 1) {
      throw ShapeError("discriminator: input " + s.str() + " too small for a " + std::to_string(cfg_.widths.size()) +
                       "-stage patch classifier");
    }
    Var<T> h = image;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const int stride = i + 1 < weights_.size() ? 2 : 1;
      const ConvGeometry g{4, stride, 1, PadMode::zero};
      if (i == 0) {
        h = leaky_relu(conv2d(h, weights_[i], first_bias_, cfg_.widths[i], g), T(0.2));
      } else {
        h = leaky_relu(instance_norm(conv2d(h, weights_[i], Var<T>(), cfg_.widths[i], g)), T(0.2));
      }
    }
    return conv2d(h, head_w_, head_b_, 1, ConvGeometry{4, 1, 1, PadMode::zero});
  }

 private:
  DiscriminatorConfig cfg_;
  std::vector<Var<T>> weights_;
  Var<T> first_bias_, head_w_, head_b_;
};

}  // namespace scg

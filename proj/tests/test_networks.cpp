#include <gtest/gtest.h>

#include <random>

#include "oracle_values.hpp"
#include "scyclegan/scyclegan.hpp"

using namespace scg;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor<double> t(s);
  for (auto& v : t.data) v = u(rng);
  return t;
}

Var<double> leaf(Tensor<double> t) { return Var<double>(std::move(t), true); }

// Readout used to drive backprop: mean (y - 0.3)^2, so dL/dy = 2 (y - 0.3) / n.
Var<double> readout(const Var<double>& y) { return detail::mean_squared_to(y, 0.3); }

std::vector<double> readout_grad(const Tensor<double>& y) {
  std::vector<double> g(y.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (y.data[i] - 0.3) / static_cast<double>(g.size());
  return g;
}

int reflect(int p, int n) {
  if (n == 1) return 0;
  while (p < 0 || p >= n) p = p < 0 ? -p : 2 * (n - 1) - p;
  return p;
}

// Direct loop convolution with its backward pass, written independently of
// the im2col path.
struct NaiveConv {
  Shape in;
  int out_c;
  ConvGeometry g;

  int oh() const { return (in.height + 2 * g.pad - g.kernel) / g.stride + 1; }
  int ow() const { return (in.width + 2 * g.pad - g.kernel) / g.stride + 1; }

  // Source pixel for an output position and tap, or false for zero padding.
  bool source(int oy, int ox, int ky, int kx, int& iy, int& ix) const {
    iy = oy * g.stride + ky - g.pad;
    ix = ox * g.stride + kx - g.pad;
    if (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) return true;
    if (g.pad_mode == PadMode::zero) return false;
    iy = reflect(iy, in.height);
    ix = reflect(ix, in.width);
    return true;
  }
  double w(const std::vector<double>& wt, int o, int c, int ky, int kx) const {
    return wt[((static_cast<std::size_t>(o) * in.channels + c) * g.kernel + ky) * g.kernel + kx];
  }

  Tensor<double> forward(const Tensor<double>& x, const std::vector<double>& wt, const std::vector<double>& b) const {
    Tensor<double> y(Shape{out_c, oh(), ow()});
    for (int o = 0; o < out_c; ++o)
      for (int oy = 0; oy < oh(); ++oy)
        for (int ox = 0; ox < ow(); ++ox) {
          double acc = b.empty() ? 0.0 : b[o];
          for (int c = 0; c < in.channels; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                int iy, ix;
                if (source(oy, ox, ky, kx, iy, ix)) acc += w(wt, o, c, ky, kx) * x.at(c, iy, ix);
              }
          y.at(o, oy, ox) = acc;
        }
    return y;
  }

  void backward(const Tensor<double>& x, const std::vector<double>& wt, const std::vector<double>& gy,
                std::vector<double>& gx, std::vector<double>& gw, std::vector<double>& gb) const {
    gx.assign(x.size(), 0.0);
    gw.assign(wt.size(), 0.0);
    gb.assign(out_c, 0.0);
    const int H = oh(), W = ow();
    for (int o = 0; o < out_c; ++o)
      for (int oy = 0; oy < H; ++oy)
        for (int ox = 0; ox < W; ++ox) {
          const double up = gy[(static_cast<std::size_t>(o) * H + oy) * W + ox];
          gb[o] += up;
          for (int c = 0; c < in.channels; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                int iy, ix;
                if (!source(oy, ox, ky, kx, iy, ix)) continue;
                const std::size_t wi = ((static_cast<std::size_t>(o) * in.channels + c) * g.kernel + ky) * g.kernel + kx;
                gw[wi] += up * x.at(c, iy, ix);
                gx[(static_cast<std::size_t>(c) * in.height + iy) * in.width + ix] += up * wt[wi];
              }
        }
  }
};

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol, const std::string& what) {
  ASSERT_EQ(a.size(), b.size()) << what;
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << what << " at " << i;
}

struct ConvCase {
  int c, h, w, out, k, stride, pad;
  PadMode mode;
  bool bias;
};

void check_conv(const ConvCase& cc, std::uint64_t seed) {
  const ConvGeometry g{cc.k, cc.stride, cc.pad, cc.mode};
  const Shape s{cc.c, cc.h, cc.w};
  const NaiveConv ref{s, cc.out, g};
  const auto xt = random_tensor(s, seed);
  const auto wt = random_tensor(Shape{1, 1, cc.out * cc.c * cc.k * cc.k}, seed + 1);
  const auto bt = random_tensor(Shape{1, 1, cc.out}, seed + 2);

  auto x = leaf(xt), w = leaf(wt);
  Var<double> b = cc.bias ? leaf(bt) : Var<double>();
  const auto y = conv2d(x, w, b, cc.out, g);
  const auto expect = ref.forward(xt, wt.data, cc.bias ? bt.data : std::vector<double>{});
  ASSERT_EQ(y.shape(), expect.shape);
  expect_close(y.value().data, expect.data, 1e-12, "forward");

  readout(y).backward();
  std::vector<double> gx, gw, gb;
  ref.backward(xt, wt.data, readout_grad(expect), gx, gw, gb);
  expect_close(x.grad(), gx, 1e-12, "input grad");
  expect_close(w.grad(), gw, 1e-12, "weight grad");
  if (cc.bias) expect_close(b.grad(), gb, 1e-12, "bias grad");
}

// Central-difference check of d readout(f(x)) / dx for a pointwise op chain.
template <typename F>
void finite_difference_check(Tensor<double> xt, F f, double tol = 1e-7) {
  auto x = leaf(xt);
  readout(f(x)).backward();
  const auto analytic = x.grad();
  const double h = 1e-6;
  for (std::size_t i = 0; i < xt.size(); ++i) {
    auto plus = xt, minus = xt;
    plus.data[i] += h;
    minus.data[i] -= h;
    const double fp = readout(f(constant(plus))).value().data[0];
    const double fm = readout(f(constant(minus))).value().data[0];
    ASSERT_NEAR(analytic[i], (fp - fm) / (2 * h), tol) << "element " << i;
  }
}

GeneratorConfig small_gen() { return {5, UNetWidths{{4, 8}, 16}}; }
SegmentorConfig small_seg() { return {5, UNetWidths{{4, 8}, 16}}; }

Var<float> image_var(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  Tensor<float> t(Shape{3, h, w});
  for (auto& v : t.data) v = u(rng);
  return constant(std::move(t));
}

Var<float> mask_var(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ClassMask m(h, w);
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng() % kNumClasses);
  return constant(one_hot<float>(m));
}

}  // namespace

TEST(Conv, MatchesDirectLoopsZeroPad) {
  check_conv({3, 8, 8, 4, 3, 1, 1, PadMode::zero, false}, 1);
  check_conv({2, 7, 5, 3, 3, 1, 1, PadMode::zero, true}, 2);
  check_conv({3, 9, 10, 2, 4, 2, 1, PadMode::zero, true}, 3);
  check_conv({4, 6, 6, 1, 4, 1, 1, PadMode::zero, true}, 4);
  check_conv({3, 5, 5, 2, 1, 1, 0, PadMode::zero, true}, 5);
  check_conv({1, 1, 1, 2, 3, 1, 1, PadMode::zero, false}, 6);
}

TEST(Conv, MatchesDirectLoopsReflectPad) {
  check_conv({3, 8, 8, 4, 3, 1, 1, PadMode::reflect, false}, 11);
  check_conv({2, 2, 2, 3, 3, 1, 1, PadMode::reflect, false}, 12);
  check_conv({2, 1, 1, 3, 3, 1, 1, PadMode::reflect, false}, 13);
  check_conv({2, 3, 6, 2, 3, 2, 1, PadMode::reflect, true}, 14);
}

TEST(Conv, RandomGeometriesMatchDirectLoops) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    ConvCase cc;
    cc.c = 1 + static_cast<int>(rng() % 4);
    cc.out = 1 + static_cast<int>(rng() % 4);
    cc.k = 1 + static_cast<int>(rng() % 4);
    cc.stride = 1 + static_cast<int>(rng() % 2);
    cc.pad = static_cast<int>(rng() % 2);
    cc.mode = rng() % 2 ? PadMode::zero : PadMode::reflect;
    cc.h = cc.k + static_cast<int>(rng() % 7);
    cc.w = cc.k + static_cast<int>(rng() % 7);
    cc.bias = rng() % 2;
    SCOPED_TRACE("trial " + std::to_string(trial));
    check_conv(cc, 100 + trial);
  }
}

TEST(Conv, RejectsTooSmallInputAndBadWeights) {
  auto x = leaf(random_tensor(Shape{1, 2, 2}, 1));
  auto w = leaf(random_tensor(Shape{1, 1, 16}, 2));
  EXPECT_THROW(conv2d(x, w, Var<double>(), 1, ConvGeometry{4, 1, 0}), ShapeError);
  auto w_bad = leaf(random_tensor(Shape{1, 1, 10}, 2));
  EXPECT_THROW(conv2d(x, w_bad, Var<double>(), 1, ConvGeometry{3, 1, 1}), ShapeError);
}

TEST(ConvTranspose, MatchesDirectLoops) {
  const int in_c = 3, out_c = 2, h = 3, w = 4;
  const auto xt = random_tensor(Shape{in_c, h, w}, 21);
  const auto wt = random_tensor(Shape{1, 1, in_c * out_c * 4}, 22);
  const auto bt = random_tensor(Shape{1, 1, out_c}, 23);
  auto x = leaf(xt), wv = leaf(wt), b = leaf(bt);
  const auto y = conv_transpose2(x, wv, b, out_c);
  ASSERT_EQ(y.shape(), (Shape{out_c, 2 * h, 2 * w}));
  auto widx = [&](int c, int o, int dy, int dx) { return ((static_cast<std::size_t>(c) * out_c + o) * 2 + dy) * 2 + dx; };
  Tensor<double> expect(Shape{out_c, 2 * h, 2 * w});
  for (int o = 0; o < out_c; ++o)
    for (int yy = 0; yy < 2 * h; ++yy)
      for (int xx = 0; xx < 2 * w; ++xx) {
        double acc = bt.data[o];
        for (int c = 0; c < in_c; ++c) acc += wt.data[widx(c, o, yy % 2, xx % 2)] * xt.at(c, yy / 2, xx / 2);
        expect.at(o, yy, xx) = acc;
      }
  expect_close(y.value().data, expect.data, 1e-12, "forward");

  readout(y).backward();
  const auto gy = readout_grad(expect);
  std::vector<double> gx(xt.size(), 0.0), gw(wt.size(), 0.0), gb(out_c, 0.0);
  for (int o = 0; o < out_c; ++o)
    for (int yy = 0; yy < 2 * h; ++yy)
      for (int xx = 0; xx < 2 * w; ++xx) {
        const double up = gy[(static_cast<std::size_t>(o) * 2 * h + yy) * 2 * w + xx];
        gb[o] += up;
        for (int c = 0; c < in_c; ++c) {
          gw[widx(c, o, yy % 2, xx % 2)] += up * xt.at(c, yy / 2, xx / 2);
          gx[(static_cast<std::size_t>(c) * h + yy / 2) * w + xx / 2] += up * wt.data[widx(c, o, yy % 2, xx % 2)];
        }
      }
  expect_close(x.grad(), gx, 1e-12, "input grad");
  expect_close(wv.grad(), gw, 1e-12, "weight grad");
  expect_close(b.grad(), gb, 1e-12, "bias grad");
}

TEST(Autograd, InstanceNormGradient) {
  finite_difference_check(random_tensor(Shape{2, 3, 4}, 31), [](const Var<double>& x) { return instance_norm(x); });
}

TEST(Autograd, SoftmaxGradientAndNormalization) {
  const auto xt = random_tensor(Shape{4, 3, 3}, 32, 3.0);
  finite_difference_check(xt, [](const Var<double>& x) { return softmax_channels(x); });
  const auto p = softmax_channels(constant(xt)).value();
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += p.at(c, y, x);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Autograd, PointwiseAndPoolGradients) {
  // Values away from the kinks at zero and from pooling ties.
  auto xt = random_tensor(Shape{2, 4, 4}, 33);
  for (std::size_t i = 0; i < xt.size(); ++i) xt.data[i] = (xt.data[i] < 0 ? -0.1 : 0.1) + xt.data[i] + 1e-3 * i;
  finite_difference_check(xt, [](const Var<double>& x) { return relu(x); });
  finite_difference_check(xt, [](const Var<double>& x) { return leaky_relu(x, 0.2); });
  finite_difference_check(xt, [](const Var<double>& x) { return tanh(x); });
  finite_difference_check(xt, [](const Var<double>& x) { return max_pool2(x); });
  finite_difference_check(xt, [](const Var<double>& x) { return concat_channels(x, tanh(x)); });
}

TEST(Autograd, DetachStopsGradient) {
  auto x = leaf(random_tensor(Shape{1, 2, 2}, 34));
  readout(add(detach(x), tanh(x))).backward();
  auto y = leaf(x.value());
  readout(add(constant(x.value()), tanh(y))).backward();
  expect_close(x.grad(), y.grad(), 0.0, "detached branch");
}

TEST(Networks, ParameterCountsDefaultWidths) {
  EXPECT_EQ(Generator<float>(GeneratorConfig{}, 1).parameter_count(), oracle::kGeneratorParamsDefaultC5);
  EXPECT_EQ(Segmentor<float>(SegmentorConfig{}, 1).parameter_count(), oracle::kSegmentorParamsDefaultC5);
  EXPECT_EQ(Discriminator<float>(DiscriminatorConfig{}, 1).parameter_count(), oracle::kDiscriminatorParamsDefault);
}

TEST(Networks, ParameterCountsMiniature) {
  const UNetWidths mini{{4, 8, 16}, 32};
  EXPECT_EQ(Generator<double>(GeneratorConfig{2, mini}, 1).parameter_count(), oracle::kGeneratorParamsMiniC2);
  EXPECT_EQ(Segmentor<double>(SegmentorConfig{2, mini}, 1).parameter_count(), oracle::kSegmentorParamsMiniC2);
  EXPECT_EQ(Discriminator<double>(DiscriminatorConfig{{4, 8}}, 1).parameter_count(), oracle::kDiscriminatorParamsMini);
}

TEST(Networks, GeneratorShapeAndRange) {
  Generator<float> g(small_gen(), 3);
  const auto out = g.translate(image_var(32, 48, 1), mask_var(32, 48, 2));
  ASSERT_EQ(out.shape(), (Shape{3, 32, 48}));
  for (float v : out.value().data) {
    ASSERT_GE(v, -1.f);
    ASSERT_LE(v, 1.f);
  }
}

TEST(Networks, GeneratorInputChecks) {
  Generator<float> g(GeneratorConfig{}, 3);
  EXPECT_THROW(g.translate(image_var(63, 64, 1), mask_var(63, 64, 2)), ShapeError);
  EXPECT_THROW(g.translate(image_var(64, 64, 1), mask_var(32, 32, 2)), ShapeError);
  Generator<float> small(small_gen(), 3);
  EXPECT_THROW(small.translate(image_var(30, 32, 1), mask_var(30, 32, 2)), ShapeError);
}

TEST(Networks, SegmentorDistribution) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto scene = generate_scene(seed, 64, 64, 1, 4);
    for (const ByteImage& img : {render_ct_style(scene), render_us_style(scene, default_speckle(seed))}) {
      Segmentor<float> s(SegmentorConfig{}, seed);
      const auto p = s.segment(constant(normalize<float>(img))).value();
      ASSERT_EQ(p.shape, (Shape{kNumClasses, 64, 64}));
      std::vector<double> mean(kNumClasses, 0.0);
      int in_band = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          double sum = 0;
          for (int c = 0; c < kNumClasses; ++c) {
            const float v = p.at(c, y, x);
            ASSERT_GT(v, 0.0f);
            sum += v;
            mean[c] += v / (64.0 * 64.0);
            in_band += std::abs(v - 0.2) <= 0.05;
          }
          ASSERT_NEAR(sum, 1.0, 1e-5);
        }
      // Image-level class distribution; single pixels on sharp edges stray further.
      for (double m : mean) EXPECT_NEAR(m, 0.2, 0.05);
      EXPECT_GT(in_band, 0.9 * kNumClasses * 64 * 64);
    }
  }
}

TEST(Networks, DiscriminatorOutputSizes) {
  const DiscriminatorConfig cfg;
  EXPECT_EQ(cfg.output_size(256), oracle::kDiscOut256);
  EXPECT_EQ(cfg.output_size(64), oracle::kDiscOut64);
  EXPECT_EQ(cfg.output_size(24), oracle::kDiscOut24);
  EXPECT_LT(cfg.output_size(16), 1);
  Discriminator<float> d(cfg, 9);
  EXPECT_EQ(d.score(image_var(256, 256, 1)).shape(), (Shape{1, 30, 30}));
  EXPECT_EQ(d.score(image_var(64, 96, 1)).shape(), (Shape{1, 6, 10}));
  EXPECT_EQ(d.score(image_var(24, 24, 1)).shape(), (Shape{1, 1, 1}));
  EXPECT_THROW(d.score(image_var(16, 16, 1)), ShapeError);
  EXPECT_THROW(d.score(image_var(23, 64, 1)), ShapeError);
}

TEST(Networks, DiscriminatorSizeArithmeticMatchesForward) {
  Discriminator<float> d(DiscriminatorConfig{{4, 8, 8, 8}}, 9);
  for (int side = 24; side <= 80; side += 7) {
    const int expect = d.config().output_size(side);
    EXPECT_EQ(d.score(image_var(side, 40, 2)).shape(), (Shape{1, expect, d.config().output_size(40)})) << side;
  }
}

TEST(Networks, SameSeedSameOutputs) {
  Generator<float> a(small_gen(), 42), b(small_gen(), 42), c(small_gen(), 43);
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_NE(a.flat_parameters(), c.flat_parameters());
  const auto img = image_var(16, 16, 1);
  const auto m = mask_var(16, 16, 2);
  EXPECT_EQ(a.translate(img, m).value().data, b.translate(img, m).value().data);
}

TEST(Networks, LoadParametersRoundTrip) {
  Segmentor<double> a(small_seg(), 1), b(small_seg(), 2);
  b.load_parameters(a.flat_parameters());
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  std::vector<double> shorter(a.parameter_count() - 1);
  EXPECT_THROW(b.load_parameters(shorter), ShapeError);
}

TEST(Networks, FrozenNetworkIgnoresOptimizer) {
  Discriminator<float> d(DiscriminatorConfig{{4, 8}}, 5);
  Adam<float> opt(d.parameter_count());
  auto loss = detail::mean_squared_to(d.score(image_var(24, 24, 1)), 1.0);
  loss.backward();
  ASSERT_TRUE(d.has_gradients());
  const auto before = d.flat_parameters();
  d.set_mode(Mode::frozen);
  d.set_mode(Mode::frozen);
  EXPECT_EQ(d.mode(), Mode::frozen);
  opt.step(d, 1e-2);
  EXPECT_EQ(d.flat_parameters(), before);
  EXPECT_EQ(opt.steps(), 0);
  d.set_mode(Mode::trainable);
  opt.step(d, 1e-2);
  EXPECT_NE(d.flat_parameters(), before);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Networks, FrozenParametersPassGradientThrough) {
  Discriminator<double> d(DiscriminatorConfig{{4, 8}}, 5);
  d.set_mode(Mode::frozen);
  auto x = leaf(random_tensor(Shape{3, 24, 24}, 8));
  readout(d.score(x)).backward();
  EXPECT_FALSE(d.has_gradients());
  double norm = 0;
  for (double g : x.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Networks, InvalidConfigsRejected) {
  EXPECT_THROW(Generator<float>(GeneratorConfig{5, UNetWidths{{}, 8}}, 1), ConfigError);
  EXPECT_THROW(Segmentor<float>(SegmentorConfig{5, UNetWidths{{4, -1}, 8}}, 1), ConfigError);
  EXPECT_THROW(Discriminator<float>(DiscriminatorConfig{{}}, 1), ConfigError);
}

#include <gtest/gtest.h>

#include <random>

#include "scyclegan/scyclegan.hpp"

using namespace scg;

namespace {

struct IdentityTranslator : Translator<float> {
  Var<float> translate(const Var<float>& image, const Var<float>&) const override { return image; }
};

// Judge that "predicts" whatever mask it was handed, ignoring the image.
struct FixedSegmenter : Segmenter<float> {
  std::vector<ClassMask> answers;
  mutable std::size_t next = 0;
  Var<float> segment(const Var<float>&) const override { return constant(one_hot<float>(answers.at(next++))); }
};

std::vector<Sample> phantom_samples(int n, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const auto scene = generate_scene(seed + i, 32, 32, 1, 4);
    Sample s;
    s.domain = Domain::ct;
    s.id = "s" + std::to_string(i);
    s.image = render_ct_style(scene);
    s.mask = rasterize_mask(scene);
    out.push_back(std::move(s));
  }
  return out;
}

ClassMask random_mask(int h, int w, std::mt19937_64& rng) {
  ClassMask m(h, w);
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng() % kNumClasses);
  return m;
}

double hard_dice_mean(const ClassMask& a, const ClassMask& b) {
  DiceAccumulator acc;
  acc.add(a, b);
  double s = 0;
  for (double c : acc.coefficients()) s += c;
  return s / kNumClasses;
}

}  // namespace

TEST(SemanticConsistency, PerfectOracleScoresOne) {
  const auto samples = phantom_samples(4, 1);
  IdentityTranslator gen;
  FixedSegmenter judge;
  for (const auto& s : samples) judge.answers.push_back(*s.mask);
  const auto r = semantic_consistency<float>(gen, judge, samples, kNumClasses);
  EXPECT_EQ(r.n_samples, 4u);
  for (double c : r.per_class_dice) EXPECT_EQ(c, 1.0);
  EXPECT_EQ(r.mean_foreground_dice, 1.0);
}

TEST(SemanticConsistency, BackgroundOracleScoresZeroForeground) {
  const auto samples = phantom_samples(3, 10);
  IdentityTranslator gen;
  FixedSegmenter judge;
  judge.answers.assign(samples.size(), ClassMask(32, 32, 0));
  const auto r = semantic_consistency<float>(gen, judge, samples, kNumClasses);
  std::vector<bool> present(kNumClasses, false);
  for (const auto& s : samples)
    for (auto l : s.mask->labels) present[l] = true;
  for (int c = 1; c < kNumClasses; ++c) {
    if (present[c]) EXPECT_EQ(r.per_class_dice[c], 0.0) << c;
    else EXPECT_EQ(r.per_class_dice[c], 1.0) << c;
  }
  EXPECT_GT(r.per_class_dice[0], 0.0);
}

TEST(SemanticConsistency, EmptyInputIsDataError) {
  IdentityTranslator gen;
  FixedSegmenter judge;
  EXPECT_THROW(semantic_consistency<float>(gen, judge, {}, kNumClasses), DataError);
}

TEST(Dice, MicroAveragePoolsPixels) {
  ClassMask a(1, 4, 0), b(1, 4, 0), t1(1, 4, 0), t2(1, 4, 0);
  a.labels = {1, 1, 0, 0};
  t1.labels = {1, 0, 0, 0};
  b.labels = {0, 0, 0, 0};
  t2.labels = {1, 1, 1, 0};
  DiceAccumulator acc;
  acc.add(a, t1);
  acc.add(b, t2);
  // class 1: |A n B| = 1, |A| = 2, |B| = 4 -> 2/6
  EXPECT_DOUBLE_EQ(acc.coefficients()[1], 2.0 / 6.0);
  EXPECT_EQ(acc.coefficients()[3], 1.0);
}

TEST(Dice, Symmetric) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_mask(8, 8, rng), b = random_mask(8, 8, rng);
    DiceAccumulator ab, ba;
    ab.add(a, b);
    ba.add(b, a);
    EXPECT_EQ(ab.coefficients(), ba.coefficients());
  }
}

TEST(Dice, MonotoneUnderForegroundErasure) {
  const auto samples = phantom_samples(5, 40);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double last = 2.0;
    for (int k = 0; k <= 100; k += 10) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0, 1);
      DiceAccumulator acc;
      for (const auto& s : samples) {
        ClassMask pred = *s.mask;
        // Same random draw per pixel at every k, so erased sets are nested.
        for (auto& l : pred.labels) {
          if (u(rng) < k / 100.0 && l != 0) l = 0;
        }
        acc.add(pred, *s.mask);
      }
      const double fg = acc.mean_foreground();
      EXPECT_LE(fg, last + 1e-12) << "k=" << k;
      last = fg;
    }
  }
}

TEST(Dice, MetricMatchesSoftLossOnHardPrediction) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto pred = random_mask(8, 8, rng);
    auto target = random_mask(8, 8, rng);
    if (i % 2) std::replace(target.labels.begin(), target.labels.end(), std::uint8_t{4}, std::uint8_t{0});
    const double loss = dice_loss(constant(one_hot<double>(pred)), target).item();
    EXPECT_NEAR(1.0 - hard_dice_mean(pred, target), loss, 1e-5);
  }
}

TEST(Dice, RejectsMismatch) {
  DiceAccumulator acc;
  EXPECT_THROW(acc.add(ClassMask(2, 2), ClassMask(2, 3)), ShapeError);
  ClassMask bad(2, 2);
  bad.labels[0] = 7;
  EXPECT_THROW(acc.add(bad, ClassMask(2, 2)), DataError);
}

TEST(Translate, StubIdentityPreservesOrderAndShape) {
  const auto samples = phantom_samples(3, 20);
  IdentityTranslator gen;
  const auto out = translate<float>(gen, samples, kNumClasses);
  ASSERT_EQ(out.size(), samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    ASSERT_EQ(out[i].height, samples[i].image.height);
    ASSERT_EQ(out[i].width, samples[i].image.width);
    for (std::size_t k = 0; k < out[i].rgb.size(); ++k) {
      ASSERT_LE(std::abs(int(out[i].rgb[k]) - int(samples[i].image.rgb[k])), 1) << i;
    }
  }
}

TEST(Translate, RealGeneratorIsBitwiseRepeatable) {
  const auto samples = phantom_samples(2, 30);
  Generator<float> g(GeneratorConfig{kNumClasses, UNetWidths{{4, 8}, 16}}, 7);
  EXPECT_EQ(translate<float>(g, samples, kNumClasses), translate<float>(g, samples, kNumClasses));
}

TEST(Translate, UnlabeledHandling) {
  auto samples = phantom_samples(1, 50);
  samples[0].mask.reset();
  IdentityTranslator gen;
  EXPECT_THROW(translate<float>(gen, samples, kNumClasses), DataError);
  EXPECT_EQ(translate<float>(gen, samples, kNumClasses, InferenceOptions{.allow_unlabeled = true}).size(), 1u);
  EXPECT_EQ(conditioning_mask(samples[0], {.allow_unlabeled = true}), ClassMask(32, 32, 0));
}

TEST(Translate, RejectsIndivisibleDims) {
  auto samples = phantom_samples(1, 60);
  samples[0].image = ByteImage(30, 32);
  samples[0].mask = ClassMask(30, 32);
  IdentityTranslator gen;
  EXPECT_THROW(translate<float>(gen, samples, kNumClasses), ShapeError);
}

TEST(Direction, ParseAndRouting) {
  EXPECT_EQ(parse_direction("ct2us"), Direction::ct2us);
  EXPECT_EQ(parse_direction("us2ct"), Direction::us2ct);
  EXPECT_THROW(parse_direction("ct2ct"), ArgumentError);
  TrainConfig cfg;
  cfg.unet = UNetWidths{{4}, 8};
  cfg.discriminator = DiscriminatorConfig{{4}};
  const auto m = Models<float>::build(cfg);
  EXPECT_EQ(&translator_for(m, Direction::ct2us), static_cast<const Translator<float>*>(m.gen_ct2us.get()));
  EXPECT_EQ(&judge_for(m, Direction::ct2us), static_cast<const Segmenter<float>*>(m.seg_us.get()));
  EXPECT_EQ(&judge_for(m, Direction::us2ct), static_cast<const Segmenter<float>*>(m.seg_ct.get()));
  EXPECT_EQ(source_domain(Direction::us2ct), Domain::us);
}

TEST(Report, RoundTripAndSchema) {
  MetricsReport r;
  r.per_class_dice = {0.123456789012, 1.0, 0.0, 0.5, 1.0 / 3.0};
  r.mean_foreground_dice = 0.7083333333333334;
  r.n_samples = 12;
  r.checkpoint_hash = "abc123";
  r.config = {{"seed", 4}, {"direction", "ct2us"}};
  const fs::path file = fs::temp_directory_path() / "scg_test_report.json";
  export_report(r, file);
  EXPECT_EQ(read_report(file), r);

  const auto j = nlohmann::ordered_json::parse(read_text_file(file));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"per_class_dice", "mean_foreground_dice", "n_samples", "checkpoint_hash",
                                            "config"}));
  EXPECT_NE(read_text_file(file).find("0.123456789"), std::string::npos);

  write_text_file(file, "{\"per_class_dice\": [1]}");
  EXPECT_THROW(read_report(file), DataError);
  write_text_file(file, "not json");
  EXPECT_THROW(read_report(file), DataError);
}

TEST(Report, FromCheckpointCarriesHashAndConfig) {
  const fs::path root = fs::temp_directory_path() / "scg_test_eval_data";
  fs::remove_all(root);
  build_phantom_dataset(8, 2, 2, 32, 32, root);
  const Dataset ds = load_dataset(root);
  TrainConfig cfg;
  cfg.unet = UNetWidths{{4, 8}, 16};
  cfg.discriminator = DiscriminatorConfig{{4, 8}};
  CheckpointBundle<float> b;
  b.config = cfg;
  b.models = Models<float>::build(cfg);
  b.optimizers = Optimizers<float>::build(b.models);
  const fs::path dir = fs::temp_directory_path() / "scg_test_eval_ckpt";
  fs::remove_all(dir);
  const std::string hash = save_checkpoint(b, dir);
  const auto loaded = load_checkpoint<float>(dir);
  const auto r = semantic_consistency(loaded, ds, Direction::us2ct);
  EXPECT_EQ(r.checkpoint_hash, hash);
  EXPECT_EQ(r.config["direction"], "us2ct");
  EXPECT_EQ(r.n_samples, 2u);
  for (double c : r.per_class_dice) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "scyclegan/scyclegan.hpp"

using namespace scg;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scg_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ClassMask random_mask(int h, int w, std::mt19937_64& rng, int classes = kNumClasses) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  ClassMask m(h, w);
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(d(rng));
  return m;
}

// Polar membership: radius band and angle from the downward vertical.
bool polar_oracle(const FanGeometry& f, int row, int col) {
  const double dy = row + 0.5 - f.apex_row, dx = col + 0.5 - f.apex_col;
  const double r = std::hypot(dx, dy);
  if (r < f.r_min || r > f.r_max) return false;
  return std::abs(std::atan2(dx, dy)) <= f.half_aperture;
}

std::size_t retained(const FanGeometry& f, int h, int w, bool use_oracle) {
  std::size_t n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) n += use_oracle ? polar_oracle(f, y, x) : f.contains(y, x);
  }
  return n;
}

}  // namespace

TEST(Palette, StandardColors) {
  const auto& p = Palette::standard();
  EXPECT_EQ(p.size(), 5);
  EXPECT_EQ(p.color(0), (Rgb{0, 0, 0}));
  EXPECT_EQ(p.color(1), (Rgb{238, 130, 238}));
  EXPECT_EQ(p.color(2), (Rgb{255, 255, 0}));
  EXPECT_EQ(p.color(3), (Rgb{255, 192, 203}));
  EXPECT_EQ(p.color(4), (Rgb{0, 0, 255}));
}

TEST(Palette, RejectsNonBijectiveOrNonBlackBackground) {
  EXPECT_THROW(Palette({Rgb{1, 1, 1}, Rgb{2, 2, 2}}), DataError);
  EXPECT_THROW(Palette({Rgb{0, 0, 0}, Rgb{2, 2, 2}, Rgb{2, 2, 2}}), DataError);
}

TEST(Palette, EncodePixelColors) {
  ClassMask m(1, 2);
  m.at(0, 0) = 1;
  const ByteImage img = encode_mask(m);
  EXPECT_EQ(img.pixel(0, 0)[0], 238);
  EXPECT_EQ(img.pixel(0, 0)[1], 130);
  EXPECT_EQ(img.pixel(0, 0)[2], 238);
  EXPECT_EQ(img.pixel(0, 1)[0], 0);
  ClassMask bad(1, 1, 7);
  EXPECT_THROW(encode_mask(bad), DataError);
}

TEST(Palette, DecodeStrict) {
  EXPECT_EQ(decode_mask(ByteImage(3, 3, 0)), ClassMask(3, 3, 0));
  ByteImage img(2, 2, 0);
  img.pixel(1, 0)[0] = img.pixel(1, 0)[1] = img.pixel(1, 0)[2] = 1;
  try {
    decode_mask(img);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("#010101"), std::string::npos);
    EXPECT_NE(what.find("row 1, col 0"), std::string::npos);
  }
}

TEST(Palette, RoundTripThousandMasks) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> side(1, 24);
  for (int i = 0; i < 1000; ++i) {
    const ClassMask m = random_mask(side(rng), side(rng), rng);
    const ByteImage enc = encode_mask(m);
    ASSERT_EQ(decode_mask(enc), m);
    ASSERT_EQ(encode_mask(decode_mask(enc)), enc);
  }
}

TEST(OneHot, PlanesAndInverse) {
  ClassMask single(1, 1, 2);
  const auto t = one_hot<double>(single, 5);
  EXPECT_EQ(t.data, (std::vector<double>{0, 0, 1, 0, 0}));
  std::mt19937_64 rng(5);
  const ClassMask m = random_mask(8, 8, rng);
  const auto oh = one_hot<float>(m, 5);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    float s = 0;
    for (int c = 0; c < 5; ++c) s += oh.plane(c)[i];
    EXPECT_EQ(s, 1.0f);
  }
  EXPECT_EQ(argmax_mask(oh), m);
  EXPECT_THROW(one_hot<float>(m, 3), DataError);
}

TEST(Normalize, Endpoints) {
  ByteImage img(1, 3);
  img.rgb = {0, 0, 0, 255, 255, 255, 128, 128, 128};
  const auto t = normalize<double>(img);
  EXPECT_EQ(t.at(0, 0, 0), -1.0);
  EXPECT_EQ(t.at(0, 0, 1), 1.0);
  EXPECT_NEAR(t.at(0, 0, 2), 0.00392156862745098, 1e-15);
}

TEST(Normalize, ExhaustiveRoundTrip) {
  ByteImage img(1, 256);
  for (int v = 0; v < 256; ++v) std::fill_n(img.pixel(0, v), 3, static_cast<std::uint8_t>(v));
  EXPECT_EQ(denormalize(normalize<float>(img)), img);
  EXPECT_EQ(denormalize(normalize<double>(img)), img);
}

TEST(Normalize, DenormalizeClamps) {
  Tensor<double> t({3, 1, 2});
  for (int c = 0; c < 3; ++c) {
    t.at(c, 0, 0) = -3.0;
    t.at(c, 0, 1) = 7.0;
  }
  const ByteImage b = denormalize(t);
  EXPECT_EQ(b.pixel(0, 0)[0], 0);
  EXPECT_EQ(b.pixel(0, 1)[0], 255);
}

TEST(FanMask, DefaultGeometryMatchesPolarOracle) {
  const FanGeometry f = default_fan(64, 64);
  EXPECT_EQ(retained(f, 64, 64, false), retained(f, 64, 64, true));
  EXPECT_GT(retained(f, 64, 64, true), 0u);
}

TEST(FanMask, RandomGeometriesMatchPolarOracle) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 8 * (4 + static_cast<int>(u(rng) * 8)), w = 8 * (4 + static_cast<int>(u(rng) * 8));
    FanGeometry f;
    f.apex_row = -10.0 + u(rng) * (h / 2.0 + 10.0);
    f.apex_col = u(rng) * w;
    f.half_aperture = (5.0 + u(rng) * 80.0) * std::numbers::pi / 180.0;
    f.r_min = u(rng) * 0.3 * h;
    f.r_max = f.r_min + 1.0 + u(rng) * 1.2 * h;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) ASSERT_EQ(f.contains(y, x), polar_oracle(f, y, x)) << "trial " << trial;
    }
  }
}

TEST(FanMask, IdempotentAndZeroesApex) {
  ByteImage img(64, 64, 200);
  const FanGeometry f = default_fan(64, 64);
  const ByteImage once = apply_fan_mask(img, f);
  EXPECT_EQ(apply_fan_mask(once, f), once);
  EXPECT_EQ(once.pixel(0, 32)[0], 0);  // r < r_min at the apex
  EXPECT_EQ(once.pixel(40, 32)[0], 200);

  const auto t = apply_fan_mask(normalize<double>(img), f);
  EXPECT_EQ(t.at(0, 0, 32), -1.0);
}

TEST(FanMask, InvalidGeometry) {
  FanGeometry f = default_fan(64, 64);
  f.half_aperture = 2.0;
  EXPECT_THROW(apply_fan_mask(ByteImage(64, 64), f), ArgumentError);
  f = default_fan(64, 64);
  f.r_max = f.r_min;
  EXPECT_THROW(apply_fan_mask(ByteImage(64, 64), f), ArgumentError);
}

TEST(Png, RoundTrip) {
  const fs::path dir = scratch_dir("png");
  std::mt19937_64 rng(1);
  ByteImage img(16, 24);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng());
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
  EXPECT_THROW(read_png(dir / "missing.png"), Error);
}

class DatasetTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch_dir("dataset");
    build_phantom_dataset(11, 5, 3, 32, 32, root_);
  }
  static fs::path root_;
};
fs::path DatasetTest::root_;

TEST_F(DatasetTest, LoadsWithManifestCounts) {
  const Dataset ds = load_dataset(root_);
  EXPECT_EQ(ds.size(Domain::ct), 5u);
  EXPECT_EQ(ds.size(Domain::us), 3u);
  EXPECT_EQ(ds.manifest().palette, Palette::standard());
  EXPECT_EQ(ds.samples(Domain::ct)[0].id, "0000");
  for (const auto& s : ds.samples(Domain::us)) ASSERT_TRUE(s.mask.has_value());
}

TEST_F(DatasetTest, MissingMaskNamesId) {
  const fs::path copy = scratch_dir("dataset_missing");
  fs::copy(root_, copy, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::remove(mask_path(copy, Domain::ct, "0003"));
  try {
    load_dataset(copy);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("0003"), std::string::npos);
  }
  const Dataset ds = load_dataset(copy, {.require_masks = false});
  EXPECT_FALSE(ds.samples(Domain::ct)[3].mask.has_value());
}

TEST_F(DatasetTest, RejectsIndivisibleImage) {
  const fs::path copy = scratch_dir("dataset_odd");
  fs::copy(root_, copy, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  write_png(image_path(copy, Domain::us, "0001"), ByteImage(31, 32));
  EXPECT_THROW(load_dataset(copy), DataError);
}

TEST_F(DatasetTest, RejectsCountMismatchAndBadPalette) {
  const fs::path copy = scratch_dir("dataset_count");
  fs::copy(root_, copy, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::remove(image_path(copy, Domain::ct, "0004"));
  EXPECT_THROW(load_dataset(copy), DataError);

  const fs::path pal = scratch_dir("dataset_palette");
  fs::copy(root_, pal, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  ByteImage m = read_png(mask_path(pal, Domain::us, "0000"));
  m.pixel(5, 5)[0] = 17;
  write_png(mask_path(pal, Domain::us, "0000"), m);
  EXPECT_THROW(load_dataset(pal), DataError);
}

TEST_F(DatasetTest, SamplerDeterministicAndCovering) {
  const Dataset ds = load_dataset(root_);
  EXPECT_EQ(steps_per_epoch(ds), 5u);
  for (std::uint64_t epoch = 0; epoch < 4; ++epoch) {
    std::multiset<std::string> ct_ids;
    std::map<std::string, int> us_counts;
    for (std::size_t step = 0; step < steps_per_epoch(ds); ++step) {
      const auto [ct, us] = sample_unpaired_batch(ds, epoch, step, 9);
      const auto [ct2, us2] = sample_unpaired_batch(ds, epoch, step, 9);
      EXPECT_EQ(&ct, &ct2);
      EXPECT_EQ(&us, &us2);
      ct_ids.insert(ct.id);
      ++us_counts[us.id];
    }
    std::multiset<std::string> expected;
    for (const auto& s : ds.samples(Domain::ct)) expected.insert(s.id);
    EXPECT_EQ(ct_ids, expected);
    // Smaller domain: the first full cycle covers every id.
    std::set<std::string> first_cycle;
    for (std::size_t step = 0; step < ds.size(Domain::us); ++step) {
      first_cycle.insert(sample_unpaired_batch(ds, epoch, step, 9).second.id);
    }
    EXPECT_EQ(first_cycle.size(), ds.size(Domain::us));
  }
}

TEST(Sampler, SeedsGiveDifferentPermutations) {
  int differing = 0;
  for (std::uint64_t s = 0; s < 10; ++s) differing += epoch_permutation(8, s, Domain::ct, 0, 0) != epoch_permutation(8, s + 100, Domain::ct, 0, 0);
  EXPECT_GE(differing, 9);
  auto p = epoch_permutation(8, 3, Domain::us, 2, 0);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

#include <unistd.h>

#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "adadepth/scenegen/dataset.hpp"
#include "adadepth/scenegen/scene.hpp"
#include "adadepth/scenegen/shift.hpp"
#include "support.hpp"

using namespace adadepth;
using namespace adadepth::scenegen;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

ImageTensor constant_image(float v, int h = 128, int w = 160) { return ImageTensor(h, w, v); }

}  // namespace

TEST(Scene, FrontoParallelPlaneDepthIsExact) {
  Scene s;
  Primitive wall;
  wall.kind = PrimitiveKind::plane;
  wall.center = {0, 0, 3.0};
  wall.normal = {0, 0, -1};
  s.primitives.push_back(wall);
  SceneSpec spec;
  auto [img, depth] = render(s, spec);
  for (float d : depth.depth) ASSERT_NEAR(d, 3.0, 1e-6);
  for (auto v : depth.valid) ASSERT_EQ(v, 1);
}

TEST(Scene, SameSeedBitIdentical) {
  SceneSpec spec;
  auto a = generate_scene(42, spec);
  auto b = generate_scene(42, spec);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, generate_scene(43, spec).first);
}

TEST(Scene, DepthWithinRangeOverHundredSeeds) {
  SceneSpec spec;
  spec.height = 32;
  spec.width = 40;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto [img, depth] = generate_scene(seed, spec);
    for (float d : depth.depth) {
      ASSERT_GE(d, 0.5f);
      ASSERT_LE(d, 10.0f);
    }
    for (float v : img.data) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
  }
}

TEST(Scene, InvalidSpecRejected) {
  SceneSpec spec;
  spec.near = 5;
  spec.far = 2;
  EXPECT_THROW(generate_scene(0, spec), ConfigError);
  SceneSpec objs;
  objs.max_objects = 9;
  EXPECT_THROW(generate_scene(0, objs), ConfigError);
}

TEST(Shift, IdentityIsBitExact) {
  auto [img, depth] = generate_scene(7, SceneSpec{});
  EXPECT_EQ(apply_domain_shift(img, ShiftConfig::identity()), img);
}

TEST(Shift, NoiseMomentsMatchConfiguredLaw) {
  ShiftConfig c;
  c.noise_sigma = 0.05;
  c.seed = 3;
  ImageTensor in = constant_image(0.5f);
  ImageTensor out = apply_domain_shift(in, c);
  double s = 0, ss = 0;
  for (std::size_t i = 0; i < in.plane(); ++i) {
    const double d = double(out.data[i]) - double(in.data[i]);
    s += d;
    ss += d * d;
  }
  const double n = double(in.plane()), mean = s / n, sd = std::sqrt(ss / n - mean * mean);
  EXPECT_LT(std::abs(mean), 0.005);
  EXPECT_GT(sd, 0.04);
  EXPECT_LT(sd, 0.06);
}

TEST(Shift, GammaOnRedChannel) {
  ShiftConfig c;
  c.gamma = {2, 1, 1};
  ImageTensor out = apply_domain_shift(constant_image(0.5f, 4, 4), c);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(out.at(0, y, x), 0.25f);
      EXPECT_EQ(out.at(1, y, x), 0.5f);
      EXPECT_EQ(out.at(2, y, x), 0.5f);
    }
}

TEST(Shift, OutputClampedAndDeterministic) {
  ShiftConfig c;
  c.gamma = {0.7, 1.2, 1.0};
  c.contrast = 1.4;
  c.blur_radius = 1.0;
  c.overlay = 0.5;
  c.noise_sigma = 0.1;
  c.seed = 9;
  auto [img, depth] = generate_scene(1, SceneSpec{});
  ImageTensor a = apply_domain_shift(img, c), b = apply_domain_shift(img, c);
  EXPECT_EQ(a, b);
  for (float v : a.data) {
    ASSERT_GE(v, 0.f);
    ASSERT_LE(v, 1.f);
  }
}

TEST(Shift, RangeValidation) {
  ShiftConfig c;
  c.noise_sigma = 0.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.contrast = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  ImageTensor bad = constant_image(1.5f, 2, 2);
  EXPECT_THROW(apply_domain_shift(bad, ShiftConfig{}), NumericError);
}

TEST(DepthCodec, MillimetreRoundTrip) {
  EXPECT_NEAR(decode_depth(encode_depth(3.0f)), 3.0, 0.0005);
  // Depths are float32, so the bound carries one float ulp at the value's magnitude.
  for (double d = 0; d <= 32.767; d += 0.0137) {
    const float f = float(d);
    ASSERT_LE(std::abs(double(decode_depth(encode_depth(f))) - double(f)),
              0.0005 + std::numeric_limits<float>::epsilon() * d);
  }
  EXPECT_THROW(encode_depth(-1.f), DatasetError);
}

class DatasetTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testsupport::TempDir("dataset");
    spec_.height = 32;
    spec_.width = 48;
    shift_.noise_sigma = 0.02;
    shift_.seed = 4;
    built_ = new BuiltDataset(build_dataset(10, 5, spec_, shift_, dir_->path() / "a", 0, 3));
  }
  static void TearDownTestSuite() {
    delete built_;
    delete dir_;
  }
  static testsupport::TempDir* dir_;
  static BuiltDataset* built_;
  static SceneSpec spec_;
  static ShiftConfig shift_;
};
testsupport::TempDir* DatasetTest::dir_ = nullptr;
BuiltDataset* DatasetTest::built_ = nullptr;
SceneSpec DatasetTest::spec_;
ShiftConfig DatasetTest::shift_;

TEST_F(DatasetTest, SplitCountsAndDepthFields) {
  EXPECT_EQ(built_->source_train.size(), 10u);
  EXPECT_EQ(built_->target_train.size(), 10u);
  EXPECT_EQ(built_->target_eval.size(), 5u);
  for (const auto& e : built_->source_train.entries) EXPECT_TRUE(e.depth.has_value());
  for (const auto& e : built_->target_train.entries) EXPECT_FALSE(e.depth.has_value());
  for (const auto& e : built_->target_eval.entries) EXPECT_TRUE(e.depth.has_value());
  ASSERT_TRUE(built_->target_labeled.has_value());
  EXPECT_EQ(built_->target_labeled->size(), 3u);
}

TEST_F(DatasetTest, SeedRangesDisjoint) {
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  for (const auto* m : {&built_->source_train, &built_->target_train, &built_->target_eval, &*built_->target_labeled})
    for (const auto& e : m->entries) {
      seen.insert(e.seed);
      ++total;
    }
  EXPECT_EQ(seen.size(), total);
}

TEST_F(DatasetTest, RebuildIsByteIdentical) {
  build_dataset(10, 5, spec_, shift_, dir_->path() / "b", 0, 3);
  for (const char* split : {"source_train", "target_train", "target_eval", "target_labeled"})
    for (const auto& f : fs::directory_iterator(dir_->path() / "a" / split))
      EXPECT_EQ(slurp(f.path()), slurp(dir_->path() / "b" / split / f.path().filename())) << f.path();
}

TEST_F(DatasetTest, ManifestRoundTripAndLoading) {
  DatasetManifest m = load_manifest(dir_->path() / "a" / "source_train");
  EXPECT_EQ(m.size(), 10u);
  EXPECT_EQ(m.height, 32);
  Sample s = load_sample(m, 0);
  ASSERT_TRUE(s.depth.has_value());
  EXPECT_EQ(s.domain, Domain::source);
  auto [img, depth] = generate_scene(mix_seed(0, m.entries[0].seed), spec_);
  for (std::size_t i = 0; i < depth.size(); ++i) ASSERT_NEAR(s.depth->depth[i], depth.depth[i], 0.0005 + 1e-6);
  EXPECT_THROW(load_sample(m, m.size()), BoundsError);
}

TEST_F(DatasetTest, TargetTrainHasNoDepth) {
  const long before = depth_file_reads().load();
  Sample s = load_sample(built_->target_train, 0);
  EXPECT_FALSE(s.depth.has_value());
  EXPECT_EQ(s.domain, Domain::target);
  ImageSet imgs = load_images(built_->target_eval);
  EXPECT_EQ(imgs.size(), 5u);
  EXPECT_EQ(depth_file_reads().load(), before);
  EXPECT_THROW(load_labeled(built_->target_train), DatasetError);
}

TEST_F(DatasetTest, TargetImagesAreShiftedFreshScenes) {
  // Target-train image i is the shifted render of its own seed, not of a source seed.
  const auto& e = built_->target_train.entries[0];
  auto [img, depth] = generate_scene(mix_seed(0, e.seed), spec_);
  ShiftConfig per = shift_;
  per.seed = mix_seed(shift_.seed, e.seed);
  ImageTensor want = apply_domain_shift(img, per);
  ImageTensor got = load_image(built_->target_train, 0);
  for (std::size_t i = 0; i < got.data.size(); ++i) ASSERT_NEAR(got.data[i], want.data[i], 0.5 / 255 + 1e-6);
}

TEST_F(DatasetTest, CorruptFileIsDatasetError) {
  DatasetManifest m = load_manifest(dir_->path() / "a" / "source_train");
  std::ofstream(m.root / m.entries[1].rgb, std::ios::trunc) << "not a png";
  EXPECT_THROW(load_sample(m, 1), DatasetError);
}

TEST(Dataset, UnwritableDirectoryIsDatasetError) {
  EXPECT_THROW(build_dataset(1, 1, SceneSpec{}, ShiftConfig{}, "/proc/definitely/not/writable"), DatasetError);
}

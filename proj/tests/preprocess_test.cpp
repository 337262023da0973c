#include "tomembed/preprocess.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tomembed/error.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed {
namespace {

TEST(TrueColor, SpotValues) {
  Block b(1, 1, 6, std::vector<float>{0.0f, 0.2f, 0.5f, 1.0f, -0.3f, 0.1f});
  const auto out = true_color_scale(b);
  EXPECT_EQ(out.values()[0], 0.0f);
  EXPECT_EQ(out.values()[1], 0.5f);
  EXPECT_EQ(out.values()[2], 1.0f);
  EXPECT_EQ(out.values()[3], 1.0f);
  EXPECT_EQ(out.values()[4], 0.0f);
  EXPECT_EQ(out.values()[5], 0.25f);
}

TEST(TrueColor, OutputAlwaysInUnitRange) {
  SplitMix64 rng(3);
  Block b(3, 16, 16);
  for (float& v : b.values()) v = static_cast<float>(rng.next_unit() * 4.0 - 1.0);
  for (float v : true_color_scale(b).values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SelectBands, PicksByNameCaseInsensitively) {
  Block b(3, 2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (float& v : b.plane(c)) v = static_cast<float>(c);
  }
  const std::vector<std::string> names = {"B02", "B03", "B04"};
  const std::vector<std::string> sel = {"b04", "B03", "B02"};
  const auto out = select_bands(b, names, sel);
  ASSERT_EQ(out.channels(), 3u);
  EXPECT_EQ(out.at(0, 1, 1), 2.0f);
  EXPECT_EQ(out.at(2, 0, 0), 0.0f);
  const std::vector<std::string> missing = {"B08"};
  EXPECT_THROW(select_bands(b, names, missing), std::invalid_argument);
}

TEST(Zscore, InverseRecoversInput) {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    NormalizationSpec spec;
    spec.kind = NormalizationSpec::Kind::kZscore;
    spec.means = {(rng.next_unit() - 0.5) * 2000.0};
    spec.stds = {0.01 + rng.next_unit() * 500.0};
    std::vector<float> plane(64);
    for (float& v : plane) v = static_cast<float>((rng.next_unit() - 0.5) * 5000.0);
    const auto original = plane;
    apply_normalization(plane, spec, 0);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      const double x = original[i];
      const double back = static_cast<double>(plane[i]) * spec.stds[0] + spec.means[0];
      // The float cast of the standardized value loses at most half an ulp
      // of |x - mean|; scaling back reintroduces that error.
      const double scale = std::max(std::abs(x), std::abs(x - spec.means[0]));
      const double ulp = std::nextafter(static_cast<float>(scale), INFINITY) - static_cast<float>(scale);
      EXPECT_LE(std::abs(back - x), ulp) << "x=" << x;
    }
  }
}

TEST(Zscore, LogTransformUsesFloor) {
  NormalizationSpec spec;
  spec.kind = NormalizationSpec::Kind::kZscore;
  spec.log10 = true;
  spec.log_floor = 1e-4;
  spec.means = {-1.0};
  spec.stds = {2.0};
  std::vector<float> plane = {0.1f, 0.0f, -5.0f, 100.0f};
  apply_normalization(plane, spec, 0);
  EXPECT_NEAR(plane[0], 0.0f, 1e-6);
  EXPECT_FLOAT_EQ(plane[1], -1.5f);
  EXPECT_FLOAT_EQ(plane[2], -1.5f);
  EXPECT_FLOAT_EQ(plane[3], 1.5f);
}

TEST(Normalization, Validation) {
  NormalizationSpec z;
  z.kind = NormalizationSpec::Kind::kZscore;
  EXPECT_THROW(z.validate(2), std::invalid_argument);
  z.means = {0, 0};
  z.stds = {1, 0};
  EXPECT_THROW(z.validate(2), std::invalid_argument);
  z.stds = {1, 2};
  EXPECT_NO_THROW(z.validate(2));
  NormalizationSpec clip;
  clip.kind = NormalizationSpec::Kind::kScaleClip;
  clip.clip_min = 1.0;
  clip.clip_max = 1.0;
  EXPECT_THROW(clip.validate(1), std::invalid_argument);
}

TEST(Normalization, KindNames) {
  for (auto k : {NormalizationSpec::Kind::kScaleClip, NormalizationSpec::Kind::kZscore,
                 NormalizationSpec::Kind::kIdentity}) {
    EXPECT_EQ(parse_normalization_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_normalization_kind("minmax"), ConfigError);
}

TEST(Profiles, Builtins) {
  const auto rgb = builtin_profile("s2-rgb-224");
  ASSERT_TRUE(rgb);
  EXPECT_EQ(rgb->fragment_size, 224);
  EXPECT_EQ(rgb->band_selection, (std::vector<std::string>{"B04", "B03", "B02"}));
  EXPECT_NO_THROW(rgb->validate());
  EXPECT_EQ(builtin_profile("s2-rgb-384")->fragment_size, 384);
  EXPECT_EQ(builtin_profile("s2-l1c-224")->band_selection.size(), 13u);
  EXPECT_EQ(builtin_profile("s1-rtc-224")->band_selection, (std::vector<std::string>{"VV", "VH"}));
  // The statistics for zscore profiles come from configuration.
  EXPECT_THROW(builtin_profile("s1-rtc-224")->validate(), std::invalid_argument);
  EXPECT_FALSE(builtin_profile("nope"));
  EXPECT_EQ(builtin_profiles().size(), 4u);
}

TEST(Profiles, ApplyProfileChecksShape) {
  auto p = *builtin_profile("s2-rgb-224");
  p.fragment_size = 4;
  Block ok(3, 4, 4, 0.2f);
  const auto out = apply_profile(ok, p);
  for (float v : out.values()) EXPECT_EQ(v, 0.5f);
  EXPECT_THROW(apply_profile(Block(2, 4, 4), p), std::invalid_argument);
  EXPECT_THROW(apply_profile(Block(3, 5, 5), p), std::invalid_argument);
}

}  // namespace
}  // namespace tomembed

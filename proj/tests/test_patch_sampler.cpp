#include "cmsr/patch_sampler.hpp"

#include "cmsr/deform.hpp"
#include "cmsr/ops.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace cmsr;

namespace {

Tensor random_tensor(Shape s, std::mt19937 &rng) {
  return Tensor::from_data(
      s, oracles::to_f32(oracles::random_vec(rng, s.numel(), 0.0, 1.0)));
}

AugmentationRanges identity_ranges() {
  AugmentationRanges r;
  r.scale_min = r.scale_max = 1.0f;
  r.rotation_max_deg = 0.0f;
  r.shear_max = 0.0f;
  r.translation_frac = 0.0f;
  return r;
}

} // namespace

TEST_CASE("zero-width ranges give a deterministic center crop") {
  std::mt19937 rng(7);
  const AugmentationRanges ranges = identity_ranges();
  const AugmentationParams a = sample_augmentation(rng, ranges, 40, 40, 16);
  const AugmentationParams b = sample_augmentation(rng, ranges, 40, 40, 16);
  CHECK(a.scale == 1.0f);
  CHECK(a.rotation_rad == 0.0f);
  CHECK(a.shear == 0.0f);
  CHECK(a.center_x == doctest::Approx(0.0));
  CHECK(a.center_y == doctest::Approx(0.0));
  CHECK(b.center_x == a.center_x);
  CHECK(b.center_y == a.center_y);
}

TEST_CASE("fixed seed reproduces the augmentation sequence") {
  AugmentationRanges ranges; // defaults
  auto draw = [&](uint64_t seed) {
    std::mt19937 rng(seed);
    std::vector<float> vals;
    for (int i = 0; i < 20; ++i) {
      const AugmentationParams p = sample_augmentation(rng, ranges, 64, 48, 16);
      vals.insert(vals.end(),
                  {p.scale, p.rotation_rad, p.shear, p.center_x, p.center_y});
    }
    return vals;
  };
  const auto a = draw(123), b = draw(123), c = draw(124);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("rotation draws are uniform around zero") {
  AugmentationRanges ranges;
  ranges.rotation_max_deg = 15.0f;
  std::mt19937 rng(99);
  double sum_deg = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    sum_deg += sample_augmentation(rng, ranges, 128, 128, 16).rotation_rad *
               180.0 / 3.14159265358979;
  CHECK(std::fabs(sum_deg / n) < 1.0);
}

TEST_CASE("oversized patches exhaust the rejection loop") {
  // Even the most benign draw (scale 0.9, no rotation) cannot fit a
  // 36-pixel footprint in a 32-pixel image, so all 100 attempts reject.
  AugmentationRanges ranges;
  std::mt19937 rng(5);
  CHECK_THROWS_AS(sample_augmentation(rng, ranges, 32, 32, 36),
                  std::runtime_error);
}

TEST_CASE("identity augmentation extracts exact array slices") {
  std::mt19937 rng(11);
  const int H = 24, W = 24, r = 2, s = 12;
  Tensor modality = random_tensor({1, 1, H, W}, rng);
  Tensor guide = random_tensor({1, 3, r * H, r * W}, rng);

  std::mt19937 aug_rng(3);
  const AugmentationParams aug =
      sample_augmentation(aug_rng, identity_ranges(), H, W, s);
  const PatchPair pair = extract_pair(modality, guide, aug, s, r);
  REQUIRE(pair.modality_patch.shape() == Shape{1, 1, s, s});
  REQUIRE(pair.guide_patch.shape() == Shape{1, 3, r * s, r * s});

  const int y0 = (H - s) / 2, x0 = (W - s) / 2;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      CHECK(std::fabs(pair.modality_patch.at(0, 0, i, j) -
                      modality.at(0, 0, y0 + i, x0 + j)) < 1e-5f);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < r * s; ++i)
      for (int j = 0; j < r * s; ++j)
        CHECK(std::fabs(pair.guide_patch.at(0, c, i, j) -
                        guide.at(0, c, r * y0 + i, r * x0 + j)) < 1e-5f);
}

TEST_CASE("the two grids evaluate one footprint at two resolutions") {
  const int H = 40, W = 30, r = 4, s = 16;
  std::mt19937 rng(13);
  AugmentationRanges ranges; // full default augmentation
  const AugmentationParams aug = sample_augmentation(rng, ranges, H, W, s);

  Tensor mg = patch_grid_modality(aug, s, H, W);
  Tensor gg = patch_grid_guide(aug, s, r, H, W);
  const size_t mp = static_cast<size_t>(s) * s;
  const size_t gp = static_cast<size_t>(r * s) * (r * s);

  // Modality pixel (i,j) and guide pixel (ri,rj) name the same scene point:
  // map both back to modality pixel coordinates and compare.
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const double mx =
          0.5 * ((mg.data()[static_cast<size_t>(i) * s + j] + 1.0) * W - 1.0);
      const double my =
          0.5 * ((mg.data()[mp + static_cast<size_t>(i) * s + j] + 1.0) * H -
                 1.0);
      const double gx =
          0.5 *
          ((gg.data()[static_cast<size_t>(r * i) * r * s + r * j] + 1.0) *
               (r * W) -
           1.0) /
          r;
      const double gy =
          0.5 *
          ((gg.data()[gp + static_cast<size_t>(r * i) * r * s + r * j] + 1.0) *
               (r * H) -
           1.0) /
          r;
      CHECK(std::fabs(mx - gx) < 1e-6 * W);
      CHECK(std::fabs(my - gy) < 1e-6 * H);
    }
}

TEST_CASE("guide-patch gradients stay inside the dilated footprint") {
  std::mt19937 rng(17);
  const int H = 32, W = 32, r = 2, s = 8;
  Tensor modality = random_tensor({1, 1, H, W}, rng);
  Tensor guide = random_tensor({1, 3, r * H, r * W}, rng);
  guide.set_requires_grad(true);

  AugmentationRanges ranges = identity_ranges();
  std::mt19937 aug_rng(1);
  const AugmentationParams aug =
      sample_augmentation(aug_rng, ranges, H, W, s);
  const PatchPair pair = extract_pair(modality, guide, aug, s, r);
  backward(sum_all(pair.guide_patch));

  // Footprint in guide pixels plus one pixel of bilinear support slack.
  const int y0 = r * (H - s) / 2, x0 = r * (W - s) / 2;
  const auto &g = guide.grad();
  REQUIRE(g.size() == static_cast<size_t>(guide.numel()));
  double inside = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < r * H; ++y)
      for (int x = 0; x < r * W; ++x) {
        const float v =
            g[(static_cast<size_t>(c) * r * H + y) * (r * W) + x];
        const bool in_dilated = y >= y0 - 1 && y < y0 + r * s + 1 &&
                                x >= x0 - 1 && x < x0 + r * s + 1;
        if (!in_dilated)
          CHECK(v == 0.0f);
        else
          inside += std::fabs(v);
      }
  CHECK(inside > 0.0);
}

TEST_CASE("deformation perturbations reach the guide patch") {
  std::mt19937 rng(19);
  const int H = 16, W = 16, r = 2, s = 8;
  Tensor modality = random_tensor({1, 1, H, W}, rng);
  Tensor guide = random_tensor({1, 3, r * H, r * W}, rng);
  DeformationStack stack(2, 2, 8, 4, 0.0f);

  std::mt19937 aug_rng(2);
  const AugmentationParams aug =
      sample_augmentation(aug_rng, identity_ranges(), H, W, s);

  auto patch_sum = [&]() {
    Tensor warped = apply_deformation(stack, guide);
    return sum_all(extract_pair(modality, warped, aug, s, r).guide_patch)
        .item();
  };
  const float before = patch_sum();
  stack.affine.theta.data()[2] += 0.01f;
  const float after = patch_sum();
  CHECK(std::fabs(after - before) > 1e-4f); // chain intact
}

TEST_CASE("preconditions and clamping") {
  std::mt19937 rng(23);
  Tensor modality = random_tensor({1, 1, 16, 16}, rng);
  Tensor guide = random_tensor({1, 3, 32, 32}, rng);
  AugmentationParams aug;
  CHECK_THROWS_AS(extract_pair(modality, guide, aug, 4, 2),
                  std::invalid_argument); // patch too small
  aug.center_x = 0.9f; // footprint out of bounds at the border
  CHECK_THROWS_AS(extract_pair(modality, guide, aug, 12, 2),
                  std::invalid_argument);

  AugmentationRanges ranges;
  CHECK(clamp_patch_size(32, 128, 128, 2, ranges) == 32);
  const int clamped = clamp_patch_size(32, 32, 32, 2, ranges);
  CHECK(clamped < 32);
  CHECK(clamped % 2 == 0);
  CHECK(clamped >= 8);
  CHECK_THROWS_AS(clamp_patch_size(32, 9, 9, 2, ranges),
                  std::invalid_argument);
}

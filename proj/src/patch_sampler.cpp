#include "cmsr/patch_sampler.hpp"

#include "cmsr/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace cmsr {

namespace {

constexpr float kPi = 3.14159265358979323846f;

// Row-major 2x2 footprint matrix M = R(rot) * Shear * scale.
void footprint_matrix(const AugmentationParams &aug, float m[4]) {
  const float c = std::cos(aug.rotation_rad), s = std::sin(aug.rotation_rad);
  // x-shear: (u,v) -> (u + shear*v, v)
  m[0] = aug.scale * c;
  m[1] = aug.scale * (c * aug.shear - s);
  m[2] = aug.scale * s;
  m[3] = aug.scale * (s * aug.shear + c);
}

inline float norm_to_px(float coord, int n) {
  return 0.5f * ((coord + 1.0f) * static_cast<float>(n) - 1.0f);
}
inline float px_to_norm(float px, int n) {
  return (2.0f * px + 1.0f) / static_cast<float>(n) - 1.0f;
}

float draw_uniform(std::mt19937 &rng, float lo, float hi) {
  // Always consumes the same amount of stream, even for zero-width ranges.
  const float u = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  return lo + u * (hi - lo);
}

} // namespace

AugmentationParams sample_augmentation(std::mt19937 &rng,
                                       const AugmentationRanges &ranges,
                                       int img_h, int img_w, int patch_size) {
  if (patch_size < 8)
    throw std::invalid_argument("sample_augmentation: patch size must be >= 8");
  const float rot_max = ranges.rotation_max_deg * kPi / 180.0f;
  for (int attempt = 0; attempt < 100; ++attempt) {
    AugmentationParams aug;
    aug.scale = draw_uniform(rng, ranges.scale_min, ranges.scale_max);
    aug.rotation_rad = draw_uniform(rng, -rot_max, rot_max);
    aug.shear = draw_uniform(rng, -ranges.shear_max, ranges.shear_max);

    float m[4];
    footprint_matrix(aug, m);
    const float half = 0.5f * static_cast<float>(patch_size);
    const float wx = (std::fabs(m[0]) + std::fabs(m[1])) * half;
    const float wy = (std::fabs(m[2]) + std::fabs(m[3])) * half;
    const float max_cx = static_cast<float>(img_w - 1) - wx;
    const float max_cy = static_cast<float>(img_h - 1) - wy;
    if (wx > max_cx || wy > max_cy) {
      // Consume the translation draws anyway so the stream layout is fixed.
      draw_uniform(rng, 0.0f, 1.0f);
      draw_uniform(rng, 0.0f, 1.0f);
      continue;
    }
    const float frac = ranges.translation_frac;
    const float mid_x = 0.5f * static_cast<float>(img_w - 1);
    const float mid_y = 0.5f * static_cast<float>(img_h - 1);
    const float cx = draw_uniform(rng, mid_x + frac * (wx - mid_x),
                                  mid_x + frac * (max_cx - mid_x));
    const float cy = draw_uniform(rng, mid_y + frac * (wy - mid_y),
                                  mid_y + frac * (max_cy - mid_y));
    aug.center_x = px_to_norm(cx, img_w);
    aug.center_y = px_to_norm(cy, img_h);
    return aug;
  }
  throw std::runtime_error(
      "sample_augmentation: 100 consecutive rejections; patch size " +
      std::to_string(patch_size) + " is too large for a " +
      std::to_string(img_w) + "x" + std::to_string(img_h) + " image");
}

namespace {

// One footprint map evaluated at two resolutions: local patch coordinate
// tau (in modality patch pixels, fractional for the guide) maps to modality
// pixel t = center + M * ((2*tau+1)/s - 1) * s/2, and guide pixel r*t.
Tensor build_grid(const AugmentationParams &aug, int patch_size, int out_size,
                  int rate, int img_h, int img_w) {
  float m[4];
  footprint_matrix(aug, m);
  const float half = 0.5f * static_cast<float>(patch_size);
  const float ccx = norm_to_px(aug.center_x, img_w);
  const float ccy = norm_to_px(aug.center_y, img_h);
  const float s = static_cast<float>(patch_size);

  std::vector<float> data(static_cast<size_t>(2) * out_size * out_size);
  const size_t plane = static_cast<size_t>(out_size) * out_size;
  for (int i = 0; i < out_size; ++i) {
    const float tau_y = static_cast<float>(i) / static_cast<float>(rate);
    const float v = (2.0f * tau_y + 1.0f) / s - 1.0f;
    for (int j = 0; j < out_size; ++j) {
      const float tau_x = static_cast<float>(j) / static_cast<float>(rate);
      const float u = (2.0f * tau_x + 1.0f) / s - 1.0f;
      const float tx = ccx + (m[0] * u + m[1] * v) * half;
      const float ty = ccy + (m[2] * u + m[3] * v) * half;
      // Sample-aligned ratio convention: guide pixel r*t <-> modality t.
      const float px = static_cast<float>(rate) * tx;
      const float py = static_cast<float>(rate) * ty;
      data[static_cast<size_t>(i) * out_size + j] =
          px_to_norm(px, rate * img_w);
      data[plane + static_cast<size_t>(i) * out_size + j] =
          px_to_norm(py, rate * img_h);
    }
  }
  return Tensor::from_data(Shape{1, 2, out_size, out_size}, std::move(data));
}

void check_footprint(const AugmentationParams &aug, int patch_size, int img_h,
                     int img_w) {
  float m[4];
  footprint_matrix(aug, m);
  const float half = 0.5f * static_cast<float>(patch_size);
  const float wx = (std::fabs(m[0]) + std::fabs(m[1])) * half;
  const float wy = (std::fabs(m[2]) + std::fabs(m[3])) * half;
  const float ccx = norm_to_px(aug.center_x, img_w);
  const float ccy = norm_to_px(aug.center_y, img_h);
  if (ccx - wx < -1e-3f || ccx + wx > static_cast<float>(img_w - 1) + 1e-3f ||
      ccy - wy < -1e-3f || ccy + wy > static_cast<float>(img_h - 1) + 1e-3f)
    throw std::invalid_argument("extract_pair: footprint out of bounds");
}

} // namespace

Tensor patch_grid_modality(const AugmentationParams &aug, int patch_size,
                           int img_h, int img_w) {
  return build_grid(aug, patch_size, patch_size, 1, img_h, img_w);
}

Tensor patch_grid_guide(const AugmentationParams &aug, int patch_size, int r,
                        int img_h, int img_w) {
  return build_grid(aug, patch_size, r * patch_size, r, img_h, img_w);
}

PatchPair extract_pair(const Tensor &modality, const Tensor &warped_guide,
                       const AugmentationParams &aug, int patch_size, int r) {
  if (patch_size < 8)
    throw std::invalid_argument("extract_pair: patch size must be >= 8");
  const Shape ms = modality.shape();
  const Shape gs = warped_guide.shape();
  if (gs.h != r * ms.h || gs.w != r * ms.w)
    throw std::invalid_argument("extract_pair: guide is not r x modality");
  check_footprint(aug, patch_size, ms.h, ms.w);

  PatchPair pair;
  pair.modality_patch = grid_sample_bilinear(
      modality, patch_grid_modality(aug, patch_size, ms.h, ms.w));
  pair.guide_patch = grid_sample_bilinear(
      warped_guide, patch_grid_guide(aug, patch_size, r, ms.h, ms.w));
  return pair;
}

int clamp_patch_size(int requested, int img_h, int img_w, int r,
                     const AugmentationRanges &ranges) {
  const float rot_max = ranges.rotation_max_deg * kPi / 180.0f;
  const float inflate = ranges.scale_max *
                        (std::cos(rot_max) + std::sin(rot_max)) *
                        (1.0f + std::fabs(ranges.shear_max));
  const int limit = static_cast<int>(
      std::floor(static_cast<float>(std::min(img_h, img_w) - 1) / inflate));
  int s = std::min(requested, limit);
  s -= s % r;
  if (s < 8)
    throw std::invalid_argument(
        "clamp_patch_size: image too small for any valid patch");
  return s;
}

} // namespace cmsr

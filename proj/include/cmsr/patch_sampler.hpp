#ifndef CMSR_PATCH_SAMPLER_HPP
#define CMSR_PATCH_SAMPLER_HPP

#include "cmsr/tensor.hpp"

#include <random>

namespace cmsr {

struct AugmentationRanges {
  float scale_min = 0.9f;
  float scale_max = 1.1f;
  float rotation_max_deg = 15.0f;
  float shear_max = 0.1f;
  // Fraction of the valid center area translation may use: 1 spans the
  // whole area the transformed footprint fits, 0 pins a center crop.
  float translation_frac = 1.0f;
};

// One random patch footprint: local patch coordinates map to modality
// pixel coordinates t = center + R(rot) * Shear(shear) * (scale * u * s/2).
struct AugmentationParams {
  float scale = 1.0f;
  float rotation_rad = 0.0f;
  float shear = 0.0f;
  float center_x = 0.0f; // normalized modality coords
  float center_y = 0.0f;
};

// Patches covering the same scene footprint at two resolutions: modality
// pixel (i,j) and guide pixel (r*i, r*j) sample the same normalized point.
struct PatchPair {
  Tensor modality_patch; // (1,1,s,s)
  Tensor guide_patch;    // (1,3,r*s,r*s)
};

// Uniform draws per component; the footprint is rejection-sampled until it
// fits inside the image. Throws after 100 consecutive rejections (patch too
// large for the image under the requested ranges).
AugmentationParams sample_augmentation(std::mt19937 &rng,
                                       const AugmentationRanges &ranges,
                                       int img_h, int img_w, int patch_size);

// Crops both images over the shared footprint by differentiable grid
// sampling; gradients flow from guide_patch into warped_guide and through
// it to the deformation parameters.
PatchPair extract_pair(const Tensor &modality, const Tensor &warped_guide,
                       const AugmentationParams &aug, int patch_size, int r);

// The two sampling grids of extract_pair, exposed for verification.
Tensor patch_grid_modality(const AugmentationParams &aug, int patch_size,
                           int img_h, int img_w);
Tensor patch_grid_guide(const AugmentationParams &aug, int patch_size, int r,
                        int img_h, int img_w);

// Largest patch size (multiple of r, >= 8) whose augmented footprint can fit
// an img_h x img_w modality image under `ranges`.
int clamp_patch_size(int requested, int img_h, int img_w, int r,
                     const AugmentationRanges &ranges);

} // namespace cmsr

#endif

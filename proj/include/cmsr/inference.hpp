#ifndef CMSR_INFERENCE_HPP
#define CMSR_INFERENCE_HPP

#include "cmsr/image_io.hpp"
#include "cmsr/trainer.hpp"

#include <optional>
#include <vector>

namespace cmsr {

struct InferenceOptions {
  bool self_ensemble = true;
  bool ensemble_median = true; // false: pixelwise mean
  int ibp_iters = 8;
  float ibp_tol = 1e-5f; // early exit when mean |downsample(sr) - lr| drops below
  int per_stage_r = 2;   // gradual SR stage factor
};

// Full-image forward with the trained model: warp the guide, then one
// cmsr_forward. Output stays unclamped; clamping happens at export.
Tensor super_resolve(const NetworkWeights &weights,
                     const DeformationStack &deform, const PairTensors &pair);

// Averages the network over the 8 dihedral transforms of its inputs
// (4 rotations x optional flip), aggregated pixelwise by median (or mean).
Tensor geometric_self_ensemble(const NetworkWeights &weights,
                               const DeformationStack &deform,
                               const PairTensors &pair,
                               bool median = true);

// Error-correcting refinement: sr += upsample(lr - downsample(sr)) until
// the consistency error is small or n_iters is exhausted. Appends the mean
// absolute consistency error per iteration to `residual_trace` if given.
Tensor iterative_back_projection(Tensor sr, const Tensor &modality_lr, int r,
                                 const std::optional<BlurKernel> &kernel,
                                 int n_iters, float tol = 1e-5f,
                                 std::vector<float> *residual_trace = nullptr);

struct SrStage {
  int stage_r = 0;    // cumulative ratio after this stage
  Tensor sr;          // stage output, unclamped
  TrainReport report;
  std::vector<float> ibp_residuals;
};

struct SrResult {
  ImageBuffer sr; // final, clamped to [0,1]
  std::vector<SrStage> stages;
  int ensemble_members = 0;
  // Debug byproducts of the final stage.
  Tensor warped_guide;
  Tensor fe2_residual;
};

// Reaches target_r through successive per_stage_r factors, retraining a
// fresh network per stage (the deformation warm-starts from the previous
// stage's affine). target_r must be a power of per_stage_r.
SrResult gradual_sr(const PairTensors &pair, int target_r,
                    const TrainConfig &cfg, const InferenceOptions &opts);

} // namespace cmsr

#endif

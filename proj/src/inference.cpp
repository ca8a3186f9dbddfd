#include "cmsr/inference.hpp"

#include "cmsr/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace cmsr {

Tensor super_resolve(const NetworkWeights &weights,
                     const DeformationStack &deform, const PairTensors &pair) {
  const Tensor guide = apply_deformation(deform, pair.guide);
  return cmsr_forward(weights, pair.modality, guide, pair.r).detach();
}

Tensor geometric_self_ensemble(const NetworkWeights &weights,
                               const DeformationStack &deform,
                               const PairTensors &pair, bool median) {
  const Tensor guide = apply_deformation(deform, pair.guide).detach();
  const Tensor modality = pair.modality;

  std::vector<Tensor> members;
  members.reserve(8);
  for (int i = 0; i < 8; ++i) {
    const Tensor m = dihedral_apply(modality, i);
    const Tensor g = dihedral_apply(guide, i);
    const Tensor out = cmsr_forward(weights, m, g, pair.r).detach();
    members.push_back(dihedral_invert(out, i));
  }

  const Shape s = members[0].shape();
  Tensor out = Tensor::zeros(s);
  const size_t n = static_cast<size_t>(s.numel());
  std::array<float, 8> vals;
  for (size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 8; ++k)
      vals[k] = members[k].data()[i];
    if (median) {
      std::sort(vals.begin(), vals.end());
      out.data()[i] = 0.5f * (vals[3] + vals[4]);
    } else {
      double acc = 0.0;
      for (float v : vals)
        acc += v;
      out.data()[i] = static_cast<float>(acc / 8.0);
    }
  }
  return out;
}

Tensor iterative_back_projection(Tensor sr, const Tensor &modality_lr, int r,
                                 const std::optional<BlurKernel> &kernel,
                                 int n_iters, float tol,
                                 std::vector<float> *residual_trace) {
  const Shape ss = sr.shape();
  const Shape ls = modality_lr.shape();
  if (ss.h != r * ls.h || ss.w != r * ls.w)
    throw std::invalid_argument("iterative_back_projection: sr is not r x lr");

  for (int it = 0; it < n_iters; ++it) {
    const Tensor down = downsample_by(sr, r, kernel);
    const Tensor err = sub(modality_lr, down);
    double mean_abs = 0.0;
    for (int64_t i = 0; i < err.numel(); ++i)
      mean_abs += std::fabs(err.data()[i]);
    mean_abs /= static_cast<double>(err.numel());
    if (residual_trace)
      residual_trace->push_back(static_cast<float>(mean_abs));
    if (mean_abs < tol)
      break;
    sr = add(sr, resize_bicubic(err, ss.h, ss.w)).detach();
  }
  return sr;
}

SrResult gradual_sr(const PairTensors &pair, int target_r,
                    const TrainConfig &cfg, const InferenceOptions &opts) {
  // target_r must be a power of the per-stage factor.
  int stages = 0;
  for (int v = target_r; v > 1; v /= opts.per_stage_r, ++stages)
    if (v % opts.per_stage_r != 0)
      throw std::invalid_argument(
          "gradual_sr: target ratio " + std::to_string(target_r) +
          " is not a power of the per-stage factor " +
          std::to_string(opts.per_stage_r));
  if (stages == 0)
    throw std::invalid_argument("gradual_sr: target ratio must be > 1");

  const Shape gs = pair.guide.shape();
  SrResult result;
  Tensor modality = pair.modality;
  AffineParams warm_affine;

  int cum_r = 1;
  for (int stage = 0; stage < stages; ++stage) {
    cum_r *= opts.per_stage_r;
    PairTensors stage_pair;
    stage_pair.modality = modality;
    stage_pair.r = opts.per_stage_r;
    stage_pair.blur_kernel = pair.blur_kernel;
    stage_pair.guide =
        (cum_r == target_r)
            ? pair.guide
            : resize_bicubic(pair.guide, gs.h * cum_r / target_r,
                             gs.w * cum_r / target_r)
                  .detach();

    TrainConfig stage_cfg = cfg;
    stage_cfg.r = opts.per_stage_r;
    TrainSession session(stage_pair, stage_cfg);
    if (stage > 0 && cfg.deform_enabled) {
      // Warm-start the global alignment; CPAB/TPS restart per stage.
      std::copy_n(warm_affine.theta.data(), 6,
                  session.deform().affine.theta.data());
    }
    TrainedModel model = session.run();
    warm_affine.theta = model.deform->affine.theta.clone();
    warm_affine.theta.set_requires_grad(true);

    SrStage out_stage;
    out_stage.stage_r = cum_r;
    out_stage.report = model.report;
    Tensor sr = opts.self_ensemble
                    ? geometric_self_ensemble(model.weights, *model.deform,
                                              stage_pair,
                                              opts.ensemble_median)
                    : super_resolve(model.weights, *model.deform, stage_pair);
    sr = iterative_back_projection(sr, stage_pair.modality, stage_pair.r,
                                   stage_pair.blur_kernel, opts.ibp_iters,
                                   opts.ibp_tol, &out_stage.ibp_residuals);
    out_stage.sr = sr;
    result.stages.push_back(out_stage);
    modality = sr.detach();

    if (stage + 1 == stages) {
      const Tensor warped =
          apply_deformation(*model.deform, stage_pair.guide).detach();
      result.warped_guide = warped;
      result.fe2_residual =
          cmsr_forward_parts(model.weights, stage_pair.modality, warped,
                             stage_pair.r)
              .fe2_term.detach();
    }
  }

  result.ensemble_members = opts.self_ensemble ? 8 : 1;
  result.sr = tensor_to_image(result.stages.back().sr, /*clamp01=*/true);
  return result;
}

} // namespace cmsr

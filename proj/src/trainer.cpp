#include "cmsr/trainer.hpp"

#include "cmsr/ops.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cmsr {

void TrainConfig::validate() const {
  if (r < 2)
    throw std::invalid_argument("TrainConfig: r must be >= 2");
  if (p_alt < 0.0f || p_alt > 1.0f)
    throw std::invalid_argument("TrainConfig: p_alt must be in [0,1]");
  if (!(base_lr >= min_lr) || !(min_lr > 0.0f))
    throw std::invalid_argument("TrainConfig: need base_lr >= min_lr > 0");
  if (max_iters < 1 || plateau_window < 2)
    throw std::invalid_argument("TrainConfig: bad iteration limits");
  if (stage_affine_frac < 0.0f || stage_cpab_frac < stage_affine_frac ||
      stage_cpab_frac > 1.0f)
    throw std::invalid_argument("TrainConfig: bad staging fractions");
  CmsrNetConfig net;
  net.fe2_hidden_layers = fe2_layers;
  net.fe2_channels = fe2_channels;
  net.validate();
}

TrainScheme select_scheme(std::mt19937 &rng, float p_alt) {
  const float u = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  return u < p_alt ? TrainScheme::kUpsamplingBased
                   : TrainScheme::kDownsamplingBased;
}

Tensor downsample_by(const Tensor &t, int r,
                     const std::optional<BlurKernel> &kernel) {
  const Shape s = t.shape();
  if (s.h % r != 0 || s.w % r != 0)
    throw std::invalid_argument("downsample_by: size not divisible by r");
  if (kernel)
    return downsample_kernel(t, kernel->values, kernel->kh, kernel->kw, r);
  return resize_bicubic(t, s.h / r, s.w / r);
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

} // namespace

TrainSession::TrainSession(const PairTensors &pair, const TrainConfig &cfg)
    : cfg_(cfg), pair_(pair), rng_(cfg.seed) {
  cfg_.validate();
  const Shape ms = pair_.modality.shape();
  const Shape gs = pair_.guide.shape();
  if (ms.c != 1 || gs.c != 3 || gs.h != cfg_.r * ms.h || gs.w != cfg_.r * ms.w)
    throw std::invalid_argument("TrainSession: pair does not match r=" +
                                std::to_string(cfg_.r));

  patch_size_ = clamp_patch_size(cfg_.patch_size, ms.h, ms.w, cfg_.r,
                                 cfg_.augmentation);
  CmsrNetConfig net_cfg;
  net_cfg.fe2_hidden_layers = cfg_.fe2_layers;
  net_cfg.fe2_channels = cfg_.fe2_channels;
  weights_ = init_weights(net_cfg, rng_);
  deform_ = std::make_shared<DeformationStack>(cfg_.cpab_cells, cfg_.cpab_cells,
                                               cfg_.cpab_steps, cfg_.tps_points,
                                               cfg_.tps_lambda);
  lr_ = cfg_.base_lr;
  start_time_ = now_seconds();
  update_staging();
}

void TrainSession::update_staging() {
  if (!cfg_.deform_enabled) {
    deform_->affine_enabled = false;
    deform_->cpab_enabled = false;
    deform_->tps_enabled = false;
    return;
  }
  const float frac =
      static_cast<float>(iteration_) / static_cast<float>(cfg_.max_iters);
  deform_->affine_enabled = true;
  deform_->cpab_enabled = frac >= cfg_.stage_affine_frac;
  deform_->tps_enabled = frac >= cfg_.stage_cpab_frac;
}

float TrainSession::train_step(TrainScheme scheme) {
  const Shape ms = pair_.modality.shape();
  const int r = cfg_.r;
  const int s = patch_size_;

  const bool warp = cfg_.deform_enabled && deform_->affine_enabled;
  Tensor guide_full =
      warp ? apply_deformation(*deform_, pair_.guide) : pair_.guide;

  const AugmentationParams aug =
      sample_augmentation(rng_, cfg_.augmentation, ms.h, ms.w, s);
  PatchPair patches = extract_pair(pair_.modality, guide_full, aug, s, r);

  Tensor pred, target;
  if (scheme == TrainScheme::kDownsamplingBased) {
    // Both patches drop one scale; the original modality patch is the
    // ground truth.
    Tensor m_lr = downsample_by(patches.modality_patch, r, pair_.blur_kernel);
    Tensor g_lr = downsample_by(patches.guide_patch, r, pair_.blur_kernel);
    pred = cmsr_forward(weights_, m_lr, g_lr, r);
    target = patches.modality_patch;
  } else {
    // Inputs keep their original scale; the target is the naively
    // upsampled modality patch.
    target = resize_bicubic(patches.modality_patch, r * s, r * s);
    pred = cmsr_forward(weights_, patches.modality_patch, patches.guide_patch,
                        r);
  }

  Tensor loss = l1_loss(pred, target);
  const float loss_value = loss.item();
  if (!std::isfinite(loss_value))
    throw std::runtime_error(
        "train_step: non-finite loss at iteration " +
        std::to_string(iteration_) +
        " (lr=" + std::to_string(lr_) + ")");
  backward(loss);

  std::vector<Tensor> net_params = weights_.parameters();
  adam_step(net_params, lr_, kAdamBeta1, kAdamBeta2, kAdamEps, net_state_);
  if (warp) {
    std::vector<Tensor> p = {deform_->affine.theta};
    adam_step(p, lr_ * cfg_.lr_factor_affine, kAdamBeta1, kAdamBeta2,
              kAdamEps, affine_state_);
    if (deform_->cpab_enabled) {
      p = {deform_->cpab.coeffs()};
      adam_step(p, lr_ * cfg_.lr_factor_cpab, kAdamBeta1, kAdamBeta2,
                kAdamEps, cpab_state_);
    }
    if (deform_->tps_enabled) {
      p = {deform_->tps.displacements};
      adam_step(p, lr_ * cfg_.lr_factor_tps, kAdamBeta1, kAdamBeta2, kAdamEps,
                tps_state_);
    }
  }
  for (auto &t : net_params)
    t.zero_grad();
  deform_->affine.theta.zero_grad();
  deform_->cpab.coeffs().zero_grad();
  deform_->tps.displacements.zero_grad();
  return loss_value;
}

bool TrainSession::plateau(double &slope_out) const {
  const int w = cfg_.plateau_window;
  const int n = static_cast<int>(loss_trace_.size());
  if (since_decay_ < w || n < w)
    return false;
  // Least-squares slope of the last w losses against iteration index.
  const double xbar = (w - 1) / 2.0;
  double ybar = 0.0;
  for (int i = 0; i < w; ++i)
    ybar += loss_trace_[n - w + i];
  ybar /= w;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < w; ++i) {
    const double dx = i - xbar;
    sxy += dx * (loss_trace_[n - w + i] - ybar);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  double ss_res = 0.0;
  for (int i = 0; i < w; ++i) {
    const double e = loss_trace_[n - w + i] - (ybar + slope * (i - xbar));
    ss_res += e * e;
  }
  const double resid_std = std::sqrt(ss_res / w);
  slope_out = slope;
  return std::fabs(slope) <=
         static_cast<double>(cfg_.plateau_threshold) * resid_std / w;
}

void TrainSession::lr_schedule_update() {
  double slope = 0.0;
  if (!plateau(slope))
    return;
  since_decay_ = 0;
  if (lr_ > cfg_.min_lr) {
    lr_ = std::max(lr_ / 10.0f, cfg_.min_lr);
    ++decays_;
  } else {
    plateau_at_min_ = true;
  }
}

bool TrainSession::should_stop() const {
  return iteration_ >= cfg_.max_iters || plateau_at_min_;
}

float TrainSession::step() {
  update_staging();
  const TrainScheme scheme = select_scheme(rng_, cfg_.p_alt);
  const float loss = train_step(scheme);
  loss_trace_.push_back(loss);
  lr_trace_.push_back(lr_);
  ++iteration_;
  ++since_decay_;
  lr_schedule_update();
  return loss;
}

TrainedModel TrainSession::finish() {
  TrainedModel model;
  model.weights = weights_;
  model.deform = deform_;
  model.report.loss_trace = loss_trace_;
  model.report.lr_trace = lr_trace_;
  model.report.iterations = iteration_;
  model.report.lr_decays = decays_;
  model.report.wall_seconds = now_seconds() - start_time_;
  model.report.stop_reason =
      plateau_at_min_ ? "plateau" : (iteration_ >= cfg_.max_iters
                                         ? "max_iters"
                                         : "stopped_early");
  model.report.seed = cfg_.seed;
  model.report.patch_size_effective = patch_size_;
  return model;
}

TrainedModel TrainSession::run() {
  while (!should_stop())
    step();
  return finish();
}

TrainedModel train(const PairTensors &pair, const TrainConfig &cfg) {
  TrainSession session(pair, cfg);
  return session.run();
}

std::vector<std::pair<std::string, std::string>>
config_entries(const TrainConfig &cfg) {
  auto fmt = [](double v) {
    std::ostringstream oss;
    oss << v;
    return oss.str();
  };
  return {
      {"r", std::to_string(cfg.r)},
      {"patch_size", std::to_string(cfg.patch_size)},
      {"base_lr", fmt(cfg.base_lr)},
      {"min_lr", fmt(cfg.min_lr)},
      {"lr_factor_affine", fmt(cfg.lr_factor_affine)},
      {"lr_factor_cpab", fmt(cfg.lr_factor_cpab)},
      {"lr_factor_tps", fmt(cfg.lr_factor_tps)},
      {"p_alt", fmt(cfg.p_alt)},
      {"max_iters", std::to_string(cfg.max_iters)},
      {"plateau_window", std::to_string(cfg.plateau_window)},
      {"plateau_threshold", fmt(cfg.plateau_threshold)},
      {"aug_scale_min", fmt(cfg.augmentation.scale_min)},
      {"aug_scale_max", fmt(cfg.augmentation.scale_max)},
      {"aug_rotation_max_deg", fmt(cfg.augmentation.rotation_max_deg)},
      {"aug_shear_max", fmt(cfg.augmentation.shear_max)},
      {"aug_translation_frac", fmt(cfg.augmentation.translation_frac)},
      {"stage_affine_frac", fmt(cfg.stage_affine_frac)},
      {"stage_cpab_frac", fmt(cfg.stage_cpab_frac)},
      {"deform_enabled", cfg.deform_enabled ? "1" : "0"},
      {"cpab_cells", std::to_string(cfg.cpab_cells)},
      {"cpab_steps", std::to_string(cfg.cpab_steps)},
      {"tps_points", std::to_string(cfg.tps_points)},
      {"tps_lambda", fmt(cfg.tps_lambda)},
      {"fe2_layers", std::to_string(cfg.fe2_layers)},
      {"fe2_channels", std::to_string(cfg.fe2_channels)},
      {"seed", std::to_string(cfg.seed)},
  };
}

std::string train_report_text(const TrainConfig &cfg, const TrainReport &rep) {
  std::ostringstream oss;
  oss << "iterations = " << rep.iterations << "\n";
  oss << "stop_reason = " << rep.stop_reason << "\n";
  oss << "wall_seconds = " << rep.wall_seconds << "\n";
  oss << "lr_decays = " << rep.lr_decays << "\n";
  if (!rep.loss_trace.empty()) {
    oss << "loss_first = " << rep.loss_trace.front() << "\n";
    oss << "loss_last = " << rep.loss_trace.back() << "\n";
  }
  if (!rep.lr_trace.empty()) {
    oss << "lr_first = " << rep.lr_trace.front() << "\n";
    oss << "lr_last = " << rep.lr_trace.back() << "\n";
  }
  oss << "patch_size_effective = " << rep.patch_size_effective << "\n";
  oss << "seed = " << rep.seed << "\n";
  for (const auto &[key, value] : config_entries(cfg))
    oss << "config." << key << " = " << value << "\n";
  return oss.str();
}

} // namespace cmsr

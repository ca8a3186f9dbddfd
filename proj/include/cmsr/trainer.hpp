#ifndef CMSR_TRAINER_HPP
#define CMSR_TRAINER_HPP

#include "cmsr/deform.hpp"
#include "cmsr/image_io.hpp"
#include "cmsr/patch_sampler.hpp"
#include "cmsr/sr_net.hpp"
#include "cmsr/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace cmsr {

struct TrainConfig {
  int r = 2;
  int patch_size = 32; // modality pixels; clamped to fit small images

  float base_lr = 1e-4f;
  float min_lr = 1e-6f;
  // Per-deformation-layer learning-rate multipliers.
  float lr_factor_affine = 1.0f;
  float lr_factor_cpab = 1.0f;
  float lr_factor_tps = 0.5f;

  // Probability of the upsampling-based scheme (Alternating Scales).
  float p_alt = 0.3f;

  int max_iters = 3000;
  int plateau_window = 100;
  float plateau_threshold = 1.5f;

  AugmentationRanges augmentation;

  // Coarse-to-fine staging: affine-only until stage_affine_frac of
  // max_iters, +CPAB until stage_cpab_frac, +TPS afterwards.
  float stage_affine_frac = 0.2f;
  float stage_cpab_frac = 0.5f;
  bool deform_enabled = true;

  int cpab_cells = 4;
  int cpab_steps = 32;
  int tps_points = 5;
  float tps_lambda = 0.0f;

  int fe2_layers = 6;
  int fe2_channels = 64;

  uint64_t seed = 0;

  void validate() const;
};

// Fixed optimizer constants (ZSSR lineage).
constexpr float kAdamBeta1 = 0.9f;
constexpr float kAdamBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;

enum class TrainScheme { kDownsamplingBased, kUpsamplingBased };

// Bernoulli(p_alt) draw of the iteration's scheme.
TrainScheme select_scheme(std::mt19937 &rng, float p_alt);

struct TrainReport {
  std::vector<float> loss_trace;
  std::vector<float> lr_trace;
  int iterations = 0;
  int lr_decays = 0;
  double wall_seconds = 0.0;
  std::string stop_reason;
  uint64_t seed = 0;
  int patch_size_effective = 0;
};

struct TrainedModel {
  NetworkWeights weights;
  std::shared_ptr<DeformationStack> deform;
  TrainReport report;
};

// Antialiased bicubic downsample by integer factor r, or the pair's blur
// kernel when one was provided.
Tensor downsample_by(const Tensor &t, int r,
                     const std::optional<BlurKernel> &kernel);

// One training session over a single pair. Iterations are strictly
// sequential; independent sessions may run concurrently.
class TrainSession {
public:
  TrainSession(const PairTensors &pair, const TrainConfig &cfg);

  // Runs the full loop to the stop criterion.
  TrainedModel run();

  // One full iteration: staging, scheme selection, train_step, schedule.
  float step();

  // The pieces, exposed individually.
  float train_step(TrainScheme scheme);
  void lr_schedule_update();
  bool should_stop() const;
  void update_staging();

  int iteration() const { return iteration_; }
  float lr() const { return lr_; }
  std::mt19937 &rng() { return rng_; }
  NetworkWeights &weights() { return weights_; }
  DeformationStack &deform() { return *deform_; }
  const TrainConfig &config() const { return cfg_; }
  const std::vector<float> &loss_trace() const { return loss_trace_; }
  TrainedModel finish();

private:
  bool plateau(double &slope_out) const;

  TrainConfig cfg_;
  PairTensors pair_;
  std::mt19937 rng_;
  NetworkWeights weights_;
  std::shared_ptr<DeformationStack> deform_;
  AdamState net_state_, affine_state_, cpab_state_, tps_state_;
  std::vector<float> loss_trace_, lr_trace_;
  int iteration_ = 0;
  int patch_size_ = 0;
  float lr_ = 0.0f;
  int since_decay_ = 0;
  int decays_ = 0;
  bool plateau_at_min_ = false;
  double start_time_ = 0.0;
};

TrainedModel train(const PairTensors &pair, const TrainConfig &cfg);

// Canonical key-value form of a config, used for report echoes and the
// config-file round trip.
std::vector<std::pair<std::string, std::string>>
config_entries(const TrainConfig &cfg);

std::string train_report_text(const TrainConfig &cfg, const TrainReport &rep);

} // namespace cmsr

#endif

#ifndef CMSR_SR_NET_HPP
#define CMSR_SR_NET_HPP

#include "cmsr/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace cmsr {

// Feature-Extractor 1 is fixed by contract: 8 hidden 3x3 layers of 64
// channels, ReLU after each except the last, which maps to 1 channel.
// Feature-Extractor 2 is configurable within its contract: 4-8 hidden 3x3
// ReLU layers with 4-128 channels, then a 1x1 head to 1 channel with no
// activation.
struct CmsrNetConfig {
  int fe1_hidden_layers = 8;
  int fe1_channels = 64;
  int fe2_hidden_layers = 6;
  int fe2_channels = 64;

  void validate() const;
};

struct ConvLayer {
  Tensor weights; // (outC, inC, kh, kw)
  Tensor bias;    // (1, outC, 1, 1)
  bool relu_after = false;
};

struct FeatureExtractor {
  std::vector<ConvLayer> layers;
};

struct NetworkWeights {
  CmsrNetConfig config;
  FeatureExtractor fe1; // reads the upsampled modality (1 channel in)
  FeatureExtractor fe2; // reads the aligned RGB guide (3 channels in)

  std::vector<Tensor> parameters() const;
};

// He-normal kernels (std sqrt(2/fan_in)), zero biases; the final layer of
// each extractor is scaled by 0.1 so training starts near the bicubic
// identity.
NetworkWeights init_weights(const CmsrNetConfig &cfg, std::mt19937 &rng);

Tensor feature_extractor_forward(const FeatureExtractor &fe, const Tensor &x);

// Three-way residual summation: bicubic-upsampled modality plus one feature
// map from each extractor. Output has the guide's spatial size, 1 channel.
Tensor cmsr_forward(const NetworkWeights &w, const Tensor &modality_lr,
                    const Tensor &guide_hr, int r);

// Same forward with the summands exposed (fe2_term is the learned RGB
// residual map).
struct CmsrParts {
  Tensor upsampled;
  Tensor fe1_term;
  Tensor fe2_term;
  Tensor sr;
};
CmsrParts cmsr_forward_parts(const NetworkWeights &w, const Tensor &modality_lr,
                             const Tensor &guide_hr, int r);

// Checkpoint container: one-line JSON header (version, configs, shapes)
// followed by raw little-endian float32 payload.
void save_weights(const NetworkWeights &w, const std::string &path);
NetworkWeights load_weights(const std::string &path);

} // namespace cmsr

#endif

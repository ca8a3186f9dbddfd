#include "cmsr/sr_net.hpp"

#include "cmsr/ops.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace cmsr;

namespace {

Tensor random_tensor(Shape s, std::mt19937 &rng) {
  return Tensor::from_data(
      s, oracles::to_f32(oracles::random_vec(rng, s.numel(), 0.0, 1.0)));
}

} // namespace

TEST_CASE("config contract: FE1 fixed, FE2 bounded") {
  CmsrNetConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.fe2_hidden_layers = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.fe2_hidden_layers = 9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.fe2_hidden_layers = 6;
  cfg.fe2_channels = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.fe2_channels = 200;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = CmsrNetConfig{};
  cfg.fe1_channels = 32;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("init_weights: deterministic, He-scaled, zero biases") {
  CmsrNetConfig cfg;
  std::mt19937 rng_a(42), rng_b(42);
  const NetworkWeights a = init_weights(cfg, rng_a);
  const NetworkWeights b = init_weights(cfg, rng_b);
  REQUIRE(a.fe1.layers.size() == 8);
  REQUIRE(a.fe2.layers.size() == 7); // 6 hidden + 1x1 head

  for (size_t l = 0; l < a.fe1.layers.size(); ++l)
    for (int64_t i = 0; i < a.fe1.layers[l].weights.numel(); ++i)
      CHECK(a.fe1.layers[l].weights.data()[i] ==
            b.fe1.layers[l].weights.data()[i]);

  // Kernel std within 10% of sqrt(2/fan_in) for a big layer (64*9 fan-in).
  const Tensor &w = a.fe1.layers[3].weights;
  REQUIRE(w.numel() >= 10000);
  double sum = 0.0, sum2 = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i) {
    sum += w.data()[i];
    sum2 += static_cast<double>(w.data()[i]) * w.data()[i];
  }
  const double n = static_cast<double>(w.numel());
  const double stddev = std::sqrt(sum2 / n - (sum / n) * (sum / n));
  const double expected = std::sqrt(2.0 / (64.0 * 9.0));
  CHECK(std::fabs(stddev - expected) < 0.1 * expected);

  for (const auto *fe : {&a.fe1, &a.fe2})
    for (const auto &layer : fe->layers)
      for (int64_t i = 0; i < layer.bias.numel(); ++i)
        CHECK(layer.bias.data()[i] == 0.0f);

  // Head shapes: FE1 ends 64->1 with a 3x3 kernel, FE2 ends 64->1 at 1x1.
  CHECK(a.fe1.layers.back().weights.shape() == Shape{1, 64, 3, 3});
  CHECK_FALSE(a.fe1.layers.back().relu_after);
  CHECK(a.fe2.layers.back().weights.shape() == Shape{1, 64, 1, 1});
  CHECK_FALSE(a.fe2.layers.back().relu_after);
  CHECK(a.fe2.layers.front().weights.shape() == Shape{64, 3, 3, 3});
}

TEST_CASE("feature extractors preserve spatial size") {
  CmsrNetConfig cfg;
  std::mt19937 rng(7);
  const NetworkWeights net = init_weights(cfg, rng);

  Tensor x1 = random_tensor({1, 1, 16, 16}, rng);
  CHECK(feature_extractor_forward(net.fe1, x1).shape() == Shape{1, 1, 16, 16});

  Tensor x2 = random_tensor({1, 3, 64, 64}, rng);
  CHECK(feature_extractor_forward(net.fe2, x2).shape() == Shape{1, 1, 64, 64});

  CHECK_THROWS_AS(feature_extractor_forward(net.fe1, x2),
                  std::invalid_argument);
}

TEST_CASE("perturbing a mid-layer kernel changes the output") {
  CmsrNetConfig cfg;
  std::mt19937 rng(11);
  NetworkWeights net = init_weights(cfg, rng);
  Tensor x = random_tensor({1, 1, 12, 12}, rng);
  const Tensor before = feature_extractor_forward(net.fe1, x);
  for (int64_t i = 0; i < net.fe1.layers[4].weights.numel(); ++i)
    net.fe1.layers[4].weights.data()[i] *= 2.0f;
  const Tensor after = feature_extractor_forward(net.fe1, x);
  double l1 = 0.0;
  for (int64_t i = 0; i < before.numel(); ++i)
    l1 += std::fabs(before.data()[i] - after.data()[i]);
  CHECK(l1 > 0.0);
}

TEST_CASE("zero input at init propagates to a zero output") {
  CmsrNetConfig cfg;
  std::mt19937 rng(13);
  const NetworkWeights net = init_weights(cfg, rng);
  Tensor m = Tensor::zeros({1, 1, 8, 8});
  Tensor g = Tensor::zeros({1, 3, 16, 16});
  const CmsrParts parts = cmsr_forward_parts(net, m, g, 2);
  for (int64_t i = 0; i < parts.sr.numel(); ++i) {
    CHECK(parts.sr.data()[i] == parts.upsampled.data()[i]); // residual only
    CHECK(parts.sr.data()[i] == 0.0f);
  }
}

TEST_CASE("cmsr_forward shape contract and ratio error") {
  CmsrNetConfig cfg;
  std::mt19937 rng(17);
  const NetworkWeights net = init_weights(cfg, rng);
  Tensor m = random_tensor({1, 1, 60, 80}, rng);
  Tensor g = random_tensor({1, 3, 240, 320}, rng);
  CHECK(cmsr_forward(net, m, g, 4).shape() == Shape{1, 1, 240, 320});
  CHECK_THROWS_AS(cmsr_forward(net, m, g, 2), std::invalid_argument);
}

TEST_CASE("zero weights reduce the network to bicubic upsampling") {
  CmsrNetConfig cfg;
  std::mt19937 rng(19);
  NetworkWeights net = init_weights(cfg, rng);
  for (auto &t : net.parameters())
    std::fill_n(t.data(), t.numel(), 0.0f);

  Tensor m = random_tensor({1, 1, 10, 12}, rng);
  Tensor g = random_tensor({1, 3, 20, 24}, rng);
  const Tensor out = cmsr_forward(net, m, g, 2);
  const Tensor up = resize_bicubic(m, 20, 24);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == up.data()[i]);
}

TEST_CASE("residual decomposition is exact") {
  CmsrNetConfig cfg;
  cfg.fe2_hidden_layers = 4;
  cfg.fe2_channels = 16;
  std::mt19937 rng(23);
  const NetworkWeights net = init_weights(cfg, rng);
  Tensor m = random_tensor({1, 1, 9, 11}, rng);
  Tensor g = random_tensor({1, 3, 18, 22}, rng);
  const CmsrParts parts = cmsr_forward_parts(net, m, g, 2);
  for (int64_t i = 0; i < parts.sr.numel(); ++i)
    CHECK(parts.sr.data()[i] == parts.upsampled.data()[i] +
                                    parts.fe1_term.data()[i] +
                                    parts.fe2_term.data()[i]);
}

TEST_CASE("fully convolutional: one set of weights, any spatial size") {
  CmsrNetConfig cfg;
  cfg.fe2_hidden_layers = 4;
  cfg.fe2_channels = 8;
  std::mt19937 rng(29);
  const NetworkWeights net = init_weights(cfg, rng);
  for (auto [h, w] : {std::pair{8, 8}, {12, 20}, {25, 9}}) {
    Tensor m = random_tensor({1, 1, h, w}, rng);
    Tensor g = random_tensor({1, 3, 2 * h, 2 * w}, rng);
    CHECK(cmsr_forward(net, m, g, 2).shape() == Shape{1, 1, 2 * h, 2 * w});
  }
}

TEST_CASE("weight checkpoints round trip bit-exactly") {
  namespace fs = std::filesystem;
  CmsrNetConfig cfg;
  cfg.fe2_hidden_layers = 5;
  cfg.fe2_channels = 24;
  std::mt19937 rng(31);
  const NetworkWeights net = init_weights(cfg, rng);

  const std::string path =
      (fs::temp_directory_path() / "cmsr_weights_test.bin").string();
  save_weights(net, path);
  const NetworkWeights back = load_weights(path);
  fs::remove(path);

  CHECK(back.config.fe2_hidden_layers == 5);
  CHECK(back.config.fe2_channels == 24);
  REQUIRE(back.fe1.layers.size() == net.fe1.layers.size());
  REQUIRE(back.fe2.layers.size() == net.fe2.layers.size());
  for (size_t l = 0; l < net.fe2.layers.size(); ++l) {
    CHECK(back.fe2.layers[l].relu_after == net.fe2.layers[l].relu_after);
    for (int64_t i = 0; i < net.fe2.layers[l].weights.numel(); ++i)
      CHECK(back.fe2.layers[l].weights.data()[i] ==
            net.fe2.layers[l].weights.data()[i]);
  }

  CHECK_THROWS_AS(load_weights("/nonexistent/w.bin"), std::runtime_error);
}

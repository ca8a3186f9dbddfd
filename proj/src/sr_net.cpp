#include "cmsr/sr_net.hpp"

#include "cmsr/ops.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cmsr {

void CmsrNetConfig::validate() const {
  if (fe1_hidden_layers != 8 || fe1_channels != 64)
    throw std::invalid_argument("CmsrNetConfig: FE1 is fixed at 8 hidden "
                                "layers of 64 channels");
  if (fe2_hidden_layers < 4 || fe2_hidden_layers > 8)
    throw std::invalid_argument("CmsrNetConfig: FE2 hidden layers must be in "
                                "[4,8], got " +
                                std::to_string(fe2_hidden_layers));
  if (fe2_channels < 4 || fe2_channels > 128)
    throw std::invalid_argument("CmsrNetConfig: FE2 channels must be in "
                                "[4,128], got " +
                                std::to_string(fe2_channels));
}

std::vector<Tensor> NetworkWeights::parameters() const {
  std::vector<Tensor> params;
  for (const auto *fe : {&fe1, &fe2})
    for (const auto &layer : fe->layers) {
      params.push_back(layer.weights);
      params.push_back(layer.bias);
    }
  return params;
}

namespace {

ConvLayer make_layer(int out_c, int in_c, int k, bool relu_after, float scale,
                     std::mt19937 &rng) {
  const int fan_in = in_c * k * k;
  std::normal_distribution<float> dist(
      0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  std::vector<float> w(static_cast<size_t>(out_c) * in_c * k * k);
  for (auto &v : w)
    v = dist(rng) * scale;
  ConvLayer layer;
  layer.weights =
      Tensor::from_data(Shape{out_c, in_c, k, k}, std::move(w), true);
  layer.bias = Tensor::zeros(Shape{1, out_c, 1, 1}, true);
  layer.relu_after = relu_after;
  return layer;
}

} // namespace

NetworkWeights init_weights(const CmsrNetConfig &cfg, std::mt19937 &rng) {
  cfg.validate();
  NetworkWeights net;
  net.config = cfg;

  // FE1: layers 1..n-1 keep 64 channels with ReLU; layer n maps to 1
  // channel, 3x3, no activation, damped by 0.1.
  int in_c = 1;
  for (int i = 0; i < cfg.fe1_hidden_layers; ++i) {
    const bool last = i + 1 == cfg.fe1_hidden_layers;
    const int out_c = last ? 1 : cfg.fe1_channels;
    net.fe1.layers.push_back(
        make_layer(out_c, in_c, 3, !last, last ? 0.1f : 1.0f, rng));
    in_c = out_c;
  }

  // FE2: 3x3 ReLU stack, then a 1x1 head to 1 channel, no activation.
  in_c = 3;
  for (int i = 0; i < cfg.fe2_hidden_layers; ++i) {
    net.fe2.layers.push_back(
        make_layer(cfg.fe2_channels, in_c, 3, true, 1.0f, rng));
    in_c = cfg.fe2_channels;
  }
  net.fe2.layers.push_back(make_layer(1, in_c, 1, false, 0.1f, rng));
  return net;
}

Tensor feature_extractor_forward(const FeatureExtractor &fe, const Tensor &x) {
  Tensor h = x;
  for (const auto &layer : fe.layers) {
    h = conv2d(h, layer.weights, layer.bias);
    if (layer.relu_after)
      h = relu(h);
  }
  return h;
}

Tensor cmsr_forward(const NetworkWeights &w, const Tensor &modality_lr,
                    const Tensor &guide_hr, int r) {
  return cmsr_forward_parts(w, modality_lr, guide_hr, r).sr;
}

CmsrParts cmsr_forward_parts(const NetworkWeights &w, const Tensor &modality_lr,
                             const Tensor &guide_hr, int r) {
  const Shape ms = modality_lr.shape();
  const Shape gs = guide_hr.shape();
  if (gs.h != r * ms.h || gs.w != r * ms.w)
    throw std::invalid_argument(
        "cmsr_forward: guide " + gs.str() + " is not " + std::to_string(r) +
        " x modality " + ms.str());
  CmsrParts parts;
  parts.upsampled = resize_bicubic(modality_lr, gs.h, gs.w);
  parts.fe1_term = feature_extractor_forward(w.fe1, parts.upsampled);
  parts.fe2_term = feature_extractor_forward(w.fe2, guide_hr);
  parts.sr = add(add(parts.upsampled, parts.fe1_term), parts.fe2_term);
  return parts;
}

namespace {

void append_layer_payload(const ConvLayer &layer, std::ofstream &out) {
  out.write(reinterpret_cast<const char *>(layer.weights.data()),
            layer.weights.numel() * static_cast<std::streamsize>(sizeof(float)));
  out.write(reinterpret_cast<const char *>(layer.bias.data()),
            layer.bias.numel() * static_cast<std::streamsize>(sizeof(float)));
}

nlohmann::json layer_meta(const ConvLayer &layer) {
  const Shape s = layer.weights.shape();
  return {{"out_c", s.n}, {"in_c", s.c}, {"k", s.h},
          {"relu", layer.relu_after}};
}

ConvLayer read_layer(const nlohmann::json &meta, std::ifstream &in,
                     const std::string &path) {
  const int out_c = meta.at("out_c"), in_c = meta.at("in_c"),
            k = meta.at("k");
  ConvLayer layer;
  std::vector<float> w(static_cast<size_t>(out_c) * in_c * k * k);
  std::vector<float> b(static_cast<size_t>(out_c));
  in.read(reinterpret_cast<char *>(w.data()),
          static_cast<std::streamsize>(w.size() * sizeof(float)));
  in.read(reinterpret_cast<char *>(b.data()),
          static_cast<std::streamsize>(b.size() * sizeof(float)));
  if (!in)
    throw std::runtime_error(path + ": truncated weight payload");
  layer.weights =
      Tensor::from_data(Shape{out_c, in_c, k, k}, std::move(w), true);
  layer.bias =
      Tensor::from_data(Shape{1, out_c, 1, 1}, std::move(b), true);
  layer.relu_after = meta.at("relu");
  return layer;
}

} // namespace

void save_weights(const NetworkWeights &w, const std::string &path) {
  nlohmann::json header;
  header["format"] = "cmsr-weights";
  header["version"] = 1;
  header["fe1_hidden_layers"] = w.config.fe1_hidden_layers;
  header["fe1_channels"] = w.config.fe1_channels;
  header["fe2_hidden_layers"] = w.config.fe2_hidden_layers;
  header["fe2_channels"] = w.config.fe2_channels;
  for (const auto &layer : w.fe1.layers)
    header["fe1"].push_back(layer_meta(layer));
  for (const auto &layer : w.fe2.layers)
    header["fe2"].push_back(layer_meta(layer));

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error(path + ": cannot open for writing");
  out << header.dump() << "\n";
  for (const auto &layer : w.fe1.layers)
    append_layer_payload(layer, out);
  for (const auto &layer : w.fe2.layers)
    append_layer_payload(layer, out);
  if (!out)
    throw std::runtime_error(path + ": write failed");
}

NetworkWeights load_weights(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": missing header");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "cmsr-weights")
    throw std::runtime_error(path + ": not a cmsr weights file");
  if (header.value("version", 0) != 1)
    throw std::runtime_error(path + ": unsupported weights version");

  NetworkWeights w;
  w.config.fe1_hidden_layers = header.at("fe1_hidden_layers");
  w.config.fe1_channels = header.at("fe1_channels");
  w.config.fe2_hidden_layers = header.at("fe2_hidden_layers");
  w.config.fe2_channels = header.at("fe2_channels");
  for (const auto &meta : header.at("fe1"))
    w.fe1.layers.push_back(read_layer(meta, in, path));
  for (const auto &meta : header.at("fe2"))
    w.fe2.layers.push_back(read_layer(meta, in, path));
  return w;
}

} // namespace cmsr

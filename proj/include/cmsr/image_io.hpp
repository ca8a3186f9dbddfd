#ifndef CMSR_IMAGE_IO_HPP
#define CMSR_IMAGE_IO_HPP

#include "cmsr/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cmsr {

// Planar (channel-major) float image with values in [0,1].
struct ImageBuffer {
  int height = 0;
  int width = 0;
  int channels = 0; // 1 (modality) or 3 (RGB)
  int source_bit_depth = 8;
  std::vector<float> data; // channels * height * width

  float &at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct BlurKernel {
  int kh = 0;
  int kw = 0;
  std::vector<float> values; // row-major, normalized to sum 1
};

// The sole training input: LR single-band modality + HR RGB guide whose
// dimensions are exactly r x the modality's.
struct ImagePair {
  ImageBuffer modality_lr;
  ImageBuffer guide_rgb_hr;
  int r = 2;
  std::optional<BlurKernel> blur_kernel;
};

// Decodes PNG (8/16-bit gray or RGB; palette and alpha are normalized away)
// or binary PGM/PPM. Values are scaled to [0,1] by the format's max code.
ImageBuffer load_image(const std::string &path);

// Clamps to [0,1], quantizes round-to-nearest at the requested depth and
// writes PNG, PGM or PPM depending on the file extension.
void save_image(const ImageBuffer &img, const std::string &path,
                int bit_depth = 8);

// Plain-text kernel file: two ints (rows cols) then rows*cols floats.
// The kernel is normalized to sum 1 on load.
BlurKernel load_kernel(const std::string &path);

// Loads a pair and enforces the exact-ratio invariant: the guide is
// center-cropped to r x the modality size (never resampled). The modality
// must be single-band; a 3-channel file with identical channels collapses
// to 1, anything else is rejected. A grayscale guide expands to 3 channels.
ImagePair make_pair(const std::string &modality_path,
                    const std::string &guide_path, int r,
                    const std::optional<std::string> &kernel_path = {});

// --- tensor bridging ---
Tensor image_to_tensor(const ImageBuffer &img);
ImageBuffer tensor_to_image(const Tensor &t, bool clamp01 = true);

struct PairTensors {
  Tensor modality; // (1,1,H,W)
  Tensor guide;    // (1,3,rH,rW)
  int r = 2;
  std::optional<BlurKernel> blur_kernel;
};

PairTensors pair_to_tensors(const ImagePair &pair);

} // namespace cmsr

#endif

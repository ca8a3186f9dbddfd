#ifndef CMSR_OPS_HPP
#define CMSR_OPS_HPP

#include "cmsr/tensor.hpp"

#include <vector>

namespace cmsr {

// 2-D convolution with zero "same" padding so spatial size is preserved.
// weights: (outC, inC, kh, kw) with kh, kw odd; bias: (1, outC, 1, 1).
// Differentiable w.r.t. input, weights and bias.
Tensor conv2d(const Tensor &input, const Tensor &weights, const Tensor &bias);

// Samples `input` (1,C,H,W) at `grid` (1,2,Hg,Wg) by bilinear interpolation.
// Grid holds normalized coordinates in [-1,1], channel 0 = x, channel 1 = y,
// pixel-center convention: x = (2j+1)/W - 1. Coordinates outside the range
// clamp to the border. Differentiable w.r.t. input and grid.
Tensor grid_sample_bilinear(const Tensor &input, const Tensor &grid);

// Catmull-Rom bicubic resampling (a = -0.5). Output sample j maps to input
// coordinate j * (in/out); when downsampling the kernel support widens by
// the scale factor, which antialiases. Linear in the input.
Tensor resize_bicubic(const Tensor &input, int out_h, int out_w);

// Blur with `kernel` (normalized, row-major kh x kw) then decimate by `r`,
// keeping samples at multiples of r. Border replicates. Linear in the input.
Tensor downsample_kernel(const Tensor &input, const std::vector<float> &kernel,
                         int kh, int kw, int r);

// --- dihedral-group data movement (not recorded on the graph) ---

// Rotates counter-clockwise by k*90 degrees. k=1 or 3 swaps H and W.
Tensor rot90(const Tensor &t, int k);
// Mirrors along the horizontal axis (left-right flip).
Tensor flip_lr(const Tensor &t);
// Applies dihedral element i in {0..7}: rot90 by (i & 3), then flip if i >= 4.
Tensor dihedral_apply(const Tensor &t, int i);
// Inverse of dihedral_apply with the same index.
Tensor dihedral_invert(const Tensor &t, int i);

} // namespace cmsr

#endif

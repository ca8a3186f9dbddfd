#include "cmsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cmsr {

namespace {

inline int clampi(int v, int lo, int hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// Unnormalizes a [-1,1] pixel-center coordinate and snaps results that are
// within 1e-4 px of a lattice point, so the identity grid reproduces the
// input bit-exactly despite float rounding.
inline float to_pixel(float coord, int size) {
  float p = 0.5f * ((coord + 1.0f) * static_cast<float>(size) - 1.0f);
  const float r = std::round(p);
  if (std::fabs(p - r) < 1e-4f)
    p = r;
  return p;
}

float catmull_rom(double t) {
  constexpr double a = -0.5;
  const double x = std::fabs(t);
  if (x <= 1.0)
    return static_cast<float>(((a + 2.0) * x - (a + 3.0)) * x * x + 1.0);
  if (x < 2.0)
    return static_cast<float>((((x - 5.0) * x + 8.0) * x - 4.0) * a);
  return 0.0f;
}

struct ResampleTaps {
  std::vector<int> start;      // first source index per output index
  std::vector<int> count;      // taps per output index
  std::vector<float> weight;   // taps flattened, count[i] entries each
  std::vector<int> offset;     // start of output index i in `weight`
};

// Weight table for one axis. src = dst * (in/out); downscaling widens the
// kernel by the scale factor. Indices clamp to the border and weights are
// normalized to sum to 1 in double precision.
ResampleTaps build_taps(int in_size, int out_size) {
  ResampleTaps taps;
  taps.start.resize(out_size);
  taps.count.resize(out_size);
  taps.offset.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  const double support = scale > 1.0 ? 2.0 * scale : 2.0;
  const double kscale = scale > 1.0 ? 1.0 / scale : 1.0;
  for (int o = 0; o < out_size; ++o) {
    const double src = o * scale;
    const int lo = static_cast<int>(std::ceil(src - support));
    const int hi = static_cast<int>(std::floor(src + support));
    std::vector<double> w;
    double sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double v = catmull_rom((i - src) * kscale);
      w.push_back(v);
      sum += v;
    }
    taps.offset[o] = static_cast<int>(taps.weight.size());
    taps.start[o] = lo;
    taps.count[o] = static_cast<int>(w.size());
    for (double v : w)
      taps.weight.push_back(static_cast<float>(v / sum));
  }
  return taps;
}

// Applies taps along the last (width) axis of rows x in_size data.
void resample_axis(const float *in, int rows, int in_size,
                   const ResampleTaps &taps, int out_size, float *out) {
  for (int r = 0; r < rows; ++r) {
    const float *src = in + static_cast<size_t>(r) * in_size;
    float *dst = out + static_cast<size_t>(r) * out_size;
    for (int o = 0; o < out_size; ++o) {
      const float *w = taps.weight.data() + taps.offset[o];
      double acc = 0.0;
      for (int t = 0; t < taps.count[o]; ++t)
        acc += static_cast<double>(w[t]) *
               src[clampi(taps.start[o] + t, 0, in_size - 1)];
      dst[o] = static_cast<float>(acc);
    }
  }
}

// Adjoint: scatters output-axis gradients back onto the input axis.
void resample_axis_adjoint(const float *gout, int rows, int in_size,
                           const ResampleTaps &taps, int out_size,
                           float *gin) {
  for (int r = 0; r < rows; ++r) {
    const float *src = gout + static_cast<size_t>(r) * out_size;
    float *dst = gin + static_cast<size_t>(r) * in_size;
    for (int o = 0; o < out_size; ++o) {
      const float *w = taps.weight.data() + taps.offset[o];
      const float g = src[o];
      for (int t = 0; t < taps.count[o]; ++t)
        dst[clampi(taps.start[o] + t, 0, in_size - 1)] += w[t] * g;
    }
  }
}

// Transposes the trailing (h,w) axes of a (planes,h,w) buffer.
void transpose_hw(const float *in, int planes, int h, int w, float *out) {
  for (int p = 0; p < planes; ++p) {
    const float *src = in + static_cast<size_t>(p) * h * w;
    float *dst = out + static_cast<size_t>(p) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[static_cast<size_t>(x) * h + y] = src[static_cast<size_t>(y) * w + x];
  }
}

} // namespace

Tensor grid_sample_bilinear(const Tensor &input, const Tensor &grid) {
  const Shape is = input.shape();
  const Shape gs = grid.shape();
  if (is.n != 1 || gs.n != 1 || gs.c != 2)
    throw std::invalid_argument("grid_sample: input (1,C,H,W), grid (1,2,Hg,Wg); got " +
                                is.str() + " and " + gs.str());
  const int C = is.c, H = is.h, W = is.w;
  const int Hg = gs.h, Wg = gs.w;
  const size_t Pg = static_cast<size_t>(Hg) * Wg;
  const float *gx = grid.data();
  const float *gy = grid.data() + Pg;

  std::vector<float> out(static_cast<size_t>(C) * Pg);
  for (size_t p = 0; p < Pg; ++p) {
    const float px = to_pixel(gx[p], W);
    const float py = to_pixel(gy[p], H);
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const float wx = px - static_cast<float>(x0);
    const float wy = py - static_cast<float>(y0);
    const int x0c = clampi(x0, 0, W - 1), x1c = clampi(x0 + 1, 0, W - 1);
    const int y0c = clampi(y0, 0, H - 1), y1c = clampi(y0 + 1, 0, H - 1);
    for (int c = 0; c < C; ++c) {
      const float *plane = input.data() + static_cast<size_t>(c) * H * W;
      const float v00 = plane[static_cast<size_t>(y0c) * W + x0c];
      const float v01 = plane[static_cast<size_t>(y0c) * W + x1c];
      const float v10 = plane[static_cast<size_t>(y1c) * W + x0c];
      const float v11 = plane[static_cast<size_t>(y1c) * W + x1c];
      out[c * Pg + p] = (1.0f - wy) * ((1.0f - wx) * v00 + wx * v01) +
                        wy * ((1.0f - wx) * v10 + wx * v11);
    }
  }

  return make_op(
      Shape{1, C, Hg, Wg}, std::move(out), {input, grid},
      [=](detail::TensorNode &self) {
        const auto &in_node = self.parents[0];
        const auto &grid_node = self.parents[1];
        const float *gout = self.grad.data();
        const float *gx = grid_node->data.data();
        const float *gy = grid_node->data.data() + Pg;
        const float *in = in_node->data.data();

        std::vector<float> gin;
        if (in_node->requires_grad)
          gin.assign(static_cast<size_t>(C) * H * W, 0.0f);
        std::vector<float> ggrid;
        if (grid_node->requires_grad)
          ggrid.assign(2 * Pg, 0.0f);

        for (size_t p = 0; p < Pg; ++p) {
          const float px = to_pixel(gx[p], W);
          const float py = to_pixel(gy[p], H);
          const int x0 = static_cast<int>(std::floor(px));
          const int y0 = static_cast<int>(std::floor(py));
          const float wx = px - static_cast<float>(x0);
          const float wy = py - static_cast<float>(y0);
          const int x0c = clampi(x0, 0, W - 1), x1c = clampi(x0 + 1, 0, W - 1);
          const int y0c = clampi(y0, 0, H - 1), y1c = clampi(y0 + 1, 0, H - 1);
          float dx_acc = 0.0f, dy_acc = 0.0f;
          for (int c = 0; c < C; ++c) {
            const float g = gout[c * Pg + p];
            if (g == 0.0f)
              continue;
            const float *plane = in + static_cast<size_t>(c) * H * W;
            const float v00 = plane[static_cast<size_t>(y0c) * W + x0c];
            const float v01 = plane[static_cast<size_t>(y0c) * W + x1c];
            const float v10 = plane[static_cast<size_t>(y1c) * W + x0c];
            const float v11 = plane[static_cast<size_t>(y1c) * W + x1c];
            if (!gin.empty()) {
              float *gp = gin.data() + static_cast<size_t>(c) * H * W;
              gp[static_cast<size_t>(y0c) * W + x0c] += g * (1.0f - wy) * (1.0f - wx);
              gp[static_cast<size_t>(y0c) * W + x1c] += g * (1.0f - wy) * wx;
              gp[static_cast<size_t>(y1c) * W + x0c] += g * wy * (1.0f - wx);
              gp[static_cast<size_t>(y1c) * W + x1c] += g * wy * wx;
            }
            // d(out)/d(px): finite within a cell; zero in fully clamped zones.
            dx_acc += g * ((1.0f - wy) * (v01 - v00) + wy * (v11 - v10));
            dy_acc += g * ((1.0f - wx) * (v10 - v00) + wx * (v11 - v01));
          }
          if (!ggrid.empty()) {
            ggrid[p] = dx_acc * 0.5f * static_cast<float>(W);
            ggrid[Pg + p] = dy_acc * 0.5f * static_cast<float>(H);
          }
        }
        if (!gin.empty())
          accumulate_grad(in_node, gin.data());
        if (!ggrid.empty())
          accumulate_grad(grid_node, ggrid.data());
      });
}

Tensor resize_bicubic(const Tensor &input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize_bicubic: output size must be >= 1");
  const Shape is = input.shape();
  const int planes = is.n * is.c, H = is.h, W = is.w;
  const ResampleTaps tx = build_taps(W, out_w);
  const ResampleTaps ty = build_taps(H, out_h);

  // Horizontal pass, then vertical via transpose.
  std::vector<float> tmp(static_cast<size_t>(planes) * H * out_w);
  resample_axis(input.data(), planes * H, W, tx, out_w, tmp.data());
  std::vector<float> tmp_t(tmp.size());
  transpose_hw(tmp.data(), planes, H, out_w, tmp_t.data());
  std::vector<float> out_t(static_cast<size_t>(planes) * out_w * out_h);
  resample_axis(tmp_t.data(), planes * out_w, H, ty, out_h, out_t.data());
  std::vector<float> out(out_t.size());
  transpose_hw(out_t.data(), planes, out_w, out_h, out.data());

  return make_op(
      Shape{is.n, is.c, out_h, out_w}, std::move(out), {input},
      [=](detail::TensorNode &self) {
        const auto &in_node = self.parents[0];
        if (!in_node->requires_grad)
          return;
        // Adjoint of each pass, applied in reverse order.
        std::vector<float> g_t(self.grad.size());
        transpose_hw(self.grad.data(), planes, out_h, out_w, g_t.data());
        std::vector<float> gtmp_t(static_cast<size_t>(planes) * out_w * H,
                                  0.0f);
        resample_axis_adjoint(g_t.data(), planes * out_w, H, ty, out_h,
                              gtmp_t.data());
        std::vector<float> gtmp(gtmp_t.size());
        transpose_hw(gtmp_t.data(), planes, out_w, H, gtmp.data());
        std::vector<float> gin(static_cast<size_t>(planes) * H * W, 0.0f);
        resample_axis_adjoint(gtmp.data(), planes * H, W, tx, out_w,
                              gin.data());
        accumulate_grad(in_node, gin.data());
      });
}

Tensor downsample_kernel(const Tensor &input, const std::vector<float> &kernel,
                         int kh, int kw, int r) {
  const Shape is = input.shape();
  if (static_cast<int>(kernel.size()) != kh * kw)
    throw std::invalid_argument("downsample_kernel: kernel size mismatch");
  if (is.h % r != 0 || is.w % r != 0)
    throw std::invalid_argument("downsample_kernel: size not divisible by r");
  const int planes = is.n * is.c, H = is.h, W = is.w;
  const int oh = H / r, ow = W / r;
  const int ch = kh / 2, cw = kw / 2;

  std::vector<float> out(static_cast<size_t>(planes) * oh * ow);
  for (int pl = 0; pl < planes; ++pl) {
    const float *src = input.data() + static_cast<size_t>(pl) * H * W;
    float *dst = out.data() + static_cast<size_t>(pl) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int di = 0; di < kh; ++di) {
          const int sy = clampi(y * r + di - ch, 0, H - 1);
          for (int dj = 0; dj < kw; ++dj) {
            const int sx = clampi(x * r + dj - cw, 0, W - 1);
            acc += static_cast<double>(kernel[di * kw + dj]) *
                   src[static_cast<size_t>(sy) * W + sx];
          }
        }
        dst[static_cast<size_t>(y) * ow + x] = static_cast<float>(acc);
      }
  }

  return make_op(
      Shape{is.n, is.c, oh, ow}, std::move(out), {input},
      [=](detail::TensorNode &self) {
        const auto &in_node = self.parents[0];
        if (!in_node->requires_grad)
          return;
        std::vector<float> gin(static_cast<size_t>(planes) * H * W, 0.0f);
        for (int pl = 0; pl < planes; ++pl) {
          const float *g = self.grad.data() + static_cast<size_t>(pl) * oh * ow;
          float *dst = gin.data() + static_cast<size_t>(pl) * H * W;
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
              const float gv = g[static_cast<size_t>(y) * ow + x];
              for (int di = 0; di < kh; ++di) {
                const int sy = clampi(y * r + di - ch, 0, H - 1);
                for (int dj = 0; dj < kw; ++dj) {
                  const int sx = clampi(x * r + dj - cw, 0, W - 1);
                  dst[static_cast<size_t>(sy) * W + sx] +=
                      kernel[di * kw + dj] * gv;
                }
              }
            }
        }
        accumulate_grad(in_node, gin.data());
      });
}

Tensor rot90(const Tensor &t, int k) {
  k = ((k % 4) + 4) % 4;
  const Shape s = t.shape();
  if (k == 0)
    return t.clone();
  const int oh = (k % 2 == 0) ? s.h : s.w;
  const int ow = (k % 2 == 0) ? s.w : s.h;
  Tensor out = Tensor::zeros(Shape{s.n, s.c, oh, ow});
  const int planes = s.n * s.c;
  for (int pl = 0; pl < planes; ++pl) {
    const float *src = t.data() + static_cast<size_t>(pl) * s.h * s.w;
    float *dst = out.data() + static_cast<size_t>(pl) * oh * ow;
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        int oy = 0, ox = 0;
        switch (k) {
        case 1: oy = s.w - 1 - x; ox = y; break;          // CCW
        case 2: oy = s.h - 1 - y; ox = s.w - 1 - x; break;
        default: oy = x; ox = s.h - 1 - y; break;          // CW
        }
        dst[static_cast<size_t>(oy) * ow + ox] =
            src[static_cast<size_t>(y) * s.w + x];
      }
  }
  return out;
}

Tensor flip_lr(const Tensor &t) {
  const Shape s = t.shape();
  Tensor out = Tensor::zeros(s);
  const int planes = s.n * s.c;
  for (int pl = 0; pl < planes; ++pl) {
    const float *src = t.data() + static_cast<size_t>(pl) * s.h * s.w;
    float *dst = out.data() + static_cast<size_t>(pl) * s.h * s.w;
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        dst[static_cast<size_t>(y) * s.w + (s.w - 1 - x)] =
            src[static_cast<size_t>(y) * s.w + x];
  }
  return out;
}

Tensor dihedral_apply(const Tensor &t, int i) {
  Tensor out = rot90(t, i & 3);
  if (i >= 4)
    out = flip_lr(out);
  return out;
}

Tensor dihedral_invert(const Tensor &t, int i) {
  Tensor out = (i >= 4) ? flip_lr(t) : t;
  return rot90(out, -(i & 3));
}

} // namespace cmsr

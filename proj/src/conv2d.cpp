#include "cmsr/ops.hpp"

#include <cblas.h>

#include <stdexcept>
#include <vector>

namespace cmsr {

namespace {

// Unpacks (C,H,W) into a (C*kh*kw) x (H*W) matrix of shifted copies with
// zero padding, one column per output pixel.
void im2col(const float *in, int C, int H, int W, int kh, int kw,
            std::vector<float> &col) {
  const int ph = kh / 2, pw = kw / 2;
  const int P = H * W;
  col.assign(static_cast<size_t>(C) * kh * kw * P, 0.0f);
  size_t row = 0;
  for (int c = 0; c < C; ++c) {
    const float *plane = in + static_cast<size_t>(c) * P;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj, ++row) {
        float *dst = col.data() + row * P;
        const int oi = di - ph, oj = dj - pw;
        const int y0 = std::max(0, -oi), y1 = std::min(H, H - oi);
        const int x0 = std::max(0, -oj), x1 = std::min(W, W - oj);
        for (int y = y0; y < y1; ++y) {
          const float *src = plane + static_cast<size_t>(y + oi) * W + oj;
          float *d = dst + static_cast<size_t>(y) * W;
          for (int x = x0; x < x1; ++x)
            d[x] = src[x];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds matrix rows back into (C,H,W).
void col2im(const float *col, int C, int H, int W, int kh, int kw,
            float *out) {
  const int ph = kh / 2, pw = kw / 2;
  const int P = H * W;
  size_t row = 0;
  for (int c = 0; c < C; ++c) {
    float *plane = out + static_cast<size_t>(c) * P;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj, ++row) {
        const float *src_row = col + row * P;
        const int oi = di - ph, oj = dj - pw;
        const int y0 = std::max(0, -oi), y1 = std::min(H, H - oi);
        const int x0 = std::max(0, -oj), x1 = std::min(W, W - oj);
        for (int y = y0; y < y1; ++y) {
          float *dst = plane + static_cast<size_t>(y + oi) * W + oj;
          const float *s = src_row + static_cast<size_t>(y) * W;
          for (int x = x0; x < x1; ++x)
            dst[x] += s[x];
        }
      }
    }
  }
}

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, const float *a,
           const float *b, float beta, float *c) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a,
              trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

} // namespace

Tensor conv2d(const Tensor &input, const Tensor &weights, const Tensor &bias) {
  const Shape is = input.shape();
  const Shape ws = weights.shape(); // (outC, inC, kh, kw)
  const int outC = ws.n, inC = ws.c, kh = ws.h, kw = ws.w;
  if (is.c != inC)
    throw std::invalid_argument("conv2d: input has " + std::to_string(is.c) +
                                " channels, weights expect " +
                                std::to_string(inC));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("conv2d: kernel size must be odd");
  const Shape bs = bias.shape();
  if (bs.n != 1 || bs.c != outC || bs.h != 1 || bs.w != 1)
    throw std::invalid_argument("conv2d: bias must be (1," +
                                std::to_string(outC) + ",1,1), got " +
                                bs.str());

  const int N = is.n, H = is.h, W = is.w;
  const int P = H * W;
  const int K = inC * kh * kw;

  std::vector<float> out(static_cast<size_t>(N) * outC * P);
  std::vector<float> col;
  for (int n = 0; n < N; ++n) {
    im2col(input.data() + static_cast<size_t>(n) * inC * P, inC, H, W, kh, kw,
           col);
    float *o = out.data() + static_cast<size_t>(n) * outC * P;
    for (int oc = 0; oc < outC; ++oc)
      std::fill(o + static_cast<size_t>(oc) * P,
                o + static_cast<size_t>(oc + 1) * P, bias.data()[oc]);
    sgemm(false, false, outC, P, K, weights.data(), col.data(), 1.0f, o);
  }

  return make_op(
      Shape{N, outC, H, W}, std::move(out), {input, weights, bias},
      [=](detail::TensorNode &self) {
        const auto &in_node = self.parents[0];
        const auto &w_node = self.parents[1];
        const auto &b_node = self.parents[2];
        const float *gout = self.grad.data();

        if (b_node->requires_grad) {
          std::vector<float> gb(static_cast<size_t>(outC), 0.0f);
          for (int n = 0; n < N; ++n)
            for (int oc = 0; oc < outC; ++oc) {
              const float *g =
                  gout + (static_cast<size_t>(n) * outC + oc) * P;
              double acc = 0.0;
              for (int p = 0; p < P; ++p)
                acc += g[p];
              gb[oc] += static_cast<float>(acc);
            }
          accumulate_grad(b_node, gb.data());
        }

        std::vector<float> col;
        std::vector<float> gw;
        if (w_node->requires_grad)
          gw.assign(static_cast<size_t>(outC) * K, 0.0f);
        std::vector<float> gin;
        std::vector<float> gcol;
        if (in_node->requires_grad)
          gin.assign(static_cast<size_t>(N) * inC * P, 0.0f);

        for (int n = 0; n < N; ++n) {
          const float *g = gout + static_cast<size_t>(n) * outC * P;
          if (w_node->requires_grad) {
            im2col(in_node->data.data() + static_cast<size_t>(n) * inC * P,
                   inC, H, W, kh, kw, col);
            // gW += gOut * col^T
            sgemm(false, true, outC, K, P, g, col.data(), 1.0f, gw.data());
          }
          if (in_node->requires_grad) {
            gcol.assign(static_cast<size_t>(K) * P, 0.0f);
            // gcol = W^T * gOut
            sgemm(true, false, K, P, outC, w_node->data.data(), g, 0.0f,
                  gcol.data());
            col2im(gcol.data(), inC, H, W, kh, kw,
                   gin.data() + static_cast<size_t>(n) * inC * P);
          }
        }
        if (w_node->requires_grad)
          accumulate_grad(w_node, gw.data());
        if (in_node->requires_grad)
          accumulate_grad(in_node, gin.data());
      });
}

} // namespace cmsr

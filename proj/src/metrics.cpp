#include "cmsr/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace cmsr {

namespace {

void check_compatible(const ImageBuffer &a, const ImageBuffer &b,
                      const char *op) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw std::invalid_argument(std::string(op) + ": dimension mismatch");
  if (a.channels != 1)
    throw std::invalid_argument(std::string(op) +
                                ": expects single-channel images");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (auto &v : w)
    v /= sum;
  return w;
}

// Separable Gaussian filter, valid positions only: (h,w) -> (h-k+1, w-k+1).
std::vector<double> filter_valid(const std::vector<double> &img, int h, int w,
                                 const std::vector<double> &win) {
  const int k = static_cast<int>(win.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> horiz(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t)
        acc += win[t] * img[static_cast<size_t>(y) * w + x + t];
      horiz[static_cast<size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t)
        acc += win[t] * horiz[static_cast<size_t>(y + t) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = acc;
    }
  return out;
}

} // namespace

double psnr(const ImageBuffer &a, const ImageBuffer &b, double peak) {
  check_compatible(a, b, "psnr");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const ImageBuffer &a, const ImageBuffer &b, double peak) {
  check_compatible(a, b, "ssim");
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  if (a.height < kWindow || a.width < kWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const auto win = gaussian_window(kWindow, kSigma);
  const int h = a.height, w = a.width;

  std::vector<double> da(a.data.begin(), a.data.end());
  std::vector<double> db(b.data.begin(), b.data.end());
  std::vector<double> daa(da.size()), dbb(db.size()), dab(da.size());
  for (size_t i = 0; i < da.size(); ++i) {
    daa[i] = da[i] * da[i];
    dbb[i] = db[i] * db[i];
    dab[i] = da[i] * db[i];
  }

  const auto mu_a = filter_valid(da, h, w, win);
  const auto mu_b = filter_valid(db, h, w, win);
  const auto m_aa = filter_valid(daa, h, w, win);
  const auto m_bb = filter_valid(dbb, h, w, win);
  const auto m_ab = filter_valid(dab, h, w, win);

  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = m_aa[i] - ma * ma;
    const double var_b = m_bb[i] - mb * mb;
    const double cov = m_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

QualityReport evaluate(const ImageBuffer &a, const ImageBuffer &b,
                       double peak) {
  QualityReport r;
  r.psnr_db = psnr(a, b, peak);
  r.ssim = ssim(a, b, peak);
  return r;
}

std::string format_psnr(double psnr_db) {
  if (std::isinf(psnr_db))
    return "inf";
  std::ostringstream oss;
  oss.precision(4);
  oss << std::fixed << psnr_db;
  return oss.str();
}

} // namespace cmsr

#ifndef CMSR_METRICS_HPP
#define CMSR_METRICS_HPP

#include "cmsr/image_io.hpp"

#include <string>

namespace cmsr {

struct QualityReport {
  double psnr_db = 0.0; // +inf when the images are identical
  double ssim = 0.0;
};

// 10 log10(peak^2 / MSE); identical images report +infinity.
double psnr(const ImageBuffer &a, const ImageBuffer &b, double peak = 1.0);

// Mean structural similarity with the canonical settings: 11x11 Gaussian
// window (sigma 1.5), k1 = 0.01, k2 = 0.03, averaged over positions where
// the window fits entirely.
double ssim(const ImageBuffer &a, const ImageBuffer &b, double peak = 1.0);

QualityReport evaluate(const ImageBuffer &a, const ImageBuffer &b,
                       double peak = 1.0);

std::string format_psnr(double psnr_db);

} // namespace cmsr

#endif

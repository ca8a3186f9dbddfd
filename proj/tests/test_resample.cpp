#include "cmsr/deform.hpp"
#include "cmsr/ops.hpp"
#include "cmsr/tensor.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <random>

using namespace cmsr;

namespace {

Tensor random_tensor(Shape s, std::mt19937 &rng, bool requires_grad) {
  return Tensor::from_data(
      s, oracles::to_f32(oracles::random_vec(rng, s.numel(), 0.0, 1.0)),
      requires_grad);
}

std::vector<double> values_f64(const Tensor &t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

Tensor probe_loss(const Tensor &out, const std::vector<double> &omega) {
  Tensor w = Tensor::from_data(out.shape(), oracles::to_f32(omega));
  return sum_all(mul(out, w));
}

double probe_loss_ref(const std::vector<double> &out,
                      const std::vector<double> &omega) {
  double acc = 0.0;
  for (size_t i = 0; i < out.size(); ++i)
    acc += out[i] * omega[i];
  return acc;
}

} // namespace

TEST_CASE("grid_sample with the identity grid is the exact identity") {
  std::mt19937 rng(41);
  for (auto [h, w] : {std::pair{4, 4}, {3, 5}, {7, 3}}) {
    Tensor img = random_tensor({1, 2, h, w}, rng, false);
    Tensor out = grid_sample_bilinear(img, identity_grid(h, w));
    for (int64_t i = 0; i < img.numel(); ++i)
      CHECK(out.data()[i] == img.data()[i]); // bit-exact
  }
}

TEST_CASE("grid_sample: one-pixel shift of a ramp, border clamps") {
  // Horizontal ramp image: value = column index.
  const int h = 4, w = 6;
  std::vector<float> ramp(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      ramp[static_cast<size_t>(y) * w + x] = static_cast<float>(x);
  Tensor img = Tensor::from_data({1, 1, h, w}, ramp);

  // Shift the grid by exactly one pixel pitch (2/w in normalized coords).
  Tensor grid = identity_grid(h, w);
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i)
    grid.data()[i] += 2.0f / w;
  Tensor out = grid_sample_bilinear(img, grid);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float expected = static_cast<float>(std::min(x + 1, w - 1));
      CHECK(out.at(0, 0, y, x) == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("grid_sample matches the direct bilinear oracle off-lattice") {
  std::mt19937 rng(43);
  Tensor img = random_tensor({1, 3, 5, 7}, rng, false);
  const int hg = 4, wg = 6;
  Tensor grid = Tensor::from_data(
      {1, 2, hg, wg},
      oracles::to_f32(oracles::random_vec(rng, 2 * hg * wg, -1.3, 1.3)));
  Tensor out = grid_sample_bilinear(img, grid);
  const auto ref = oracles::ref_grid_sample(values_f64(img), 3, 5, 7,
                                            values_f64(grid), hg, wg);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("grid_sample gradients match finite differences") {
  std::mt19937 rng(47);
  Tensor img = random_tensor({1, 1, 4, 4}, rng, true);
  // Random in-range coords, kept away from exact lattice sites.
  Tensor grid = Tensor::from_data(
      {1, 2, 3, 3},
      oracles::to_f32(oracles::random_vec(rng, 18, -0.83, 0.79)), true);
  const auto omega = oracles::random_vec(rng, 9, -1.0, 1.0);

  backward(probe_loss(grid_sample_bilinear(img, grid), omega));

  const auto vi = values_f64(img), vg = values_f64(grid);
  const auto fd_img =
      oracles::fd_gradient(vi, [&](const std::vector<double> &v) {
        return probe_loss_ref(oracles::ref_grid_sample(v, 1, 4, 4, vg, 3, 3),
                              omega);
      });
  CHECK(oracles::max_rel_err(img.grad(), fd_img) < 1e-3);
  const auto fd_grid =
      oracles::fd_gradient(vg, [&](const std::vector<double> &v) {
        return probe_loss_ref(oracles::ref_grid_sample(vi, 1, 4, 4, v, 3, 3),
                              omega);
      }, 1e-4);
  CHECK(oracles::max_rel_err(grid.grad(), fd_grid) < 1e-3);
}

TEST_CASE("resize_bicubic keeps constant images constant") {
  Tensor c = Tensor::full({1, 1, 7, 5}, 0.613f);
  for (auto [oh, ow] : {std::pair{14, 10}, {3, 2}, {7, 5}, {19, 4}}) {
    Tensor out = resize_bicubic(c, oh, ow);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(std::fabs(out.data()[i] - 0.613f) < 1e-5f);
  }
}

TEST_CASE("bicubic 2x upsample interpolates the original samples") {
  std::mt19937 rng(53);
  Tensor img = random_tensor({1, 1, 6, 8}, rng, false);
  Tensor up = resize_bicubic(img, 12, 16);
  // Output sample 2j maps to source coordinate j exactly.
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(std::fabs(up.at(0, 0, 2 * y, 2 * x) - img.at(0, 0, y, x)) < 1e-5f);
}

TEST_CASE("resize_bicubic matches the reference resampler both ways") {
  std::mt19937 rng(59);
  Tensor img = random_tensor({1, 2, 9, 7}, rng, false);
  for (auto [oh, ow] : {std::pair{18, 14}, {5, 3}, {4, 11}}) {
    Tensor out = resize_bicubic(img, oh, ow);
    const auto ref = oracles::ref_bicubic(values_f64(img), 2, 9, 7, oh, ow);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}

TEST_CASE("resize_bicubic gradient matches finite differences") {
  std::mt19937 rng(61);
  Tensor img = random_tensor({1, 1, 6, 6}, rng, true);
  const auto omega = oracles::random_vec(rng, 3 * 4, -1.0, 1.0);
  backward(probe_loss(resize_bicubic(img, 3, 4), omega));

  const auto vi = values_f64(img);
  const auto fd = oracles::fd_gradient(vi, [&](const std::vector<double> &v) {
    return probe_loss_ref(oracles::ref_bicubic(v, 1, 6, 6, 3, 4), omega);
  });
  CHECK(oracles::max_rel_err(img.grad(), fd) < 1e-3);

  // Upsampling direction too.
  Tensor img2 = random_tensor({1, 1, 4, 4}, rng, true);
  const auto omega2 = oracles::random_vec(rng, 8 * 8, -1.0, 1.0);
  backward(probe_loss(resize_bicubic(img2, 8, 8), omega2));
  const auto vi2 = values_f64(img2);
  const auto fd2 =
      oracles::fd_gradient(vi2, [&](const std::vector<double> &v) {
        return probe_loss_ref(oracles::ref_bicubic(v, 1, 4, 4, 8, 8), omega2);
      });
  CHECK(oracles::max_rel_err(img2.grad(), fd2) < 1e-3);
}

TEST_CASE("downsample_kernel blurs then decimates at phase zero") {
  // 3x3 box kernel on a delta image: the decimated output picks up the
  // kernel value wherever the window overlaps the spike.
  const int h = 8, w = 8, r = 2;
  std::vector<float> img(static_cast<size_t>(h) * w, 0.0f);
  img[3 * w + 4] = 1.0f;
  Tensor t = Tensor::from_data({1, 1, h, w}, img);
  const std::vector<float> box(9, 1.0f / 9.0f);
  Tensor out = downsample_kernel(t, box, 3, 3, r);
  REQUIRE(out.shape().h == 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const bool hit = std::abs(2 * y - 3) <= 1 && std::abs(2 * x - 4) <= 1;
      CHECK(out.at(0, 0, y, x) == doctest::Approx(hit ? 1.0 / 9.0 : 0.0));
    }

  // Adjoint check against the double-precision reference.
  std::mt19937 rng(67);
  Tensor x = random_tensor({1, 1, 8, 8}, rng, true);
  const auto omega = oracles::random_vec(rng, 16, -1.0, 1.0);
  backward(probe_loss(downsample_kernel(x, box, 3, 3, 2), omega));
  const std::vector<double> box_d(9, 1.0 / 9.0);
  const auto vx = values_f64(x);
  const auto fd = oracles::fd_gradient(vx, [&](const std::vector<double> &v) {
    return probe_loss_ref(
        oracles::ref_downsample_kernel(v, 8, 8, box_d, 3, 3, 2), omega);
  });
  CHECK(oracles::max_rel_err(x.grad(), fd) < 1e-3);
}

TEST_CASE("dihedral transforms invert exactly") {
  std::mt19937 rng(71);
  Tensor t = random_tensor({1, 2, 3, 5}, rng, false);
  for (int i = 0; i < 8; ++i) {
    Tensor round = dihedral_invert(dihedral_apply(t, i), i);
    REQUIRE(round.shape() == t.shape());
    for (int64_t j = 0; j < t.numel(); ++j)
      CHECK(round.data()[j] == t.data()[j]);
  }
  // Rotations by 90 degrees swap dimensions.
  CHECK(rot90(t, 1).shape().h == 5);
  CHECK(rot90(t, 1).shape().w == 3);
}

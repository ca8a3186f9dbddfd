#include "cmsr/tensor.hpp"
#include "cmsr/ops.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <random>

using namespace cmsr;

namespace {

Tensor random_tensor(Shape s, std::mt19937 &rng, bool requires_grad,
                     double lo = -1.0, double hi = 1.0) {
  return Tensor::from_data(
      s, oracles::to_f32(oracles::random_vec(rng, s.numel(), lo, hi)),
      requires_grad);
}

std::vector<double> values_f64(const Tensor &t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

// loss = sum(out * omega) for a fixed random probe vector.
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

TEST_CASE("elementwise add: identity and exact gradient passthrough") {
  std::mt19937 rng(7);
  Tensor x = random_tensor({1, 2, 3, 4}, rng, true);
  Tensor z = Tensor::zeros({1, 2, 3, 4});
  Tensor y = add(x, z);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == x.data()[i]);

  backward(sum_all(y));
  REQUIRE(x.grad().size() == static_cast<size_t>(x.numel()));
  for (float g : x.grad())
    CHECK(g == 1.0f); // upstream gradient passes through exactly
}

TEST_CASE("elementwise shape mismatch is an error") {
  Tensor a = Tensor::zeros({1, 1, 2, 2});
  Tensor b = Tensor::zeros({1, 1, 2, 3});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(l1_loss(a, b), std::invalid_argument);
}

TEST_CASE("mul gradient matches finite differences") {
  std::mt19937 rng(11);
  Tensor a = random_tensor({2, 3, 4, 4}, rng, true);
  Tensor b = random_tensor({2, 3, 4, 4}, rng, true);
  const auto omega = oracles::random_vec(rng, a.numel(), -1.0, 1.0);

  backward(probe_loss(mul(a, b), omega));

  const auto vb = values_f64(b);
  const auto fd_a = oracles::fd_gradient(
      values_f64(a), [&](const std::vector<double> &va) {
        std::vector<double> out(va.size());
        for (size_t i = 0; i < va.size(); ++i)
          out[i] = va[i] * vb[i];
        return probe_loss_ref(out, omega);
      });
  CHECK(oracles::max_rel_err(a.grad(), fd_a) < 1e-3);
}

TEST_CASE("scale and sub") {
  std::mt19937 rng(3);
  Tensor a = random_tensor({1, 1, 2, 2}, rng, true);
  Tensor b = random_tensor({1, 1, 2, 2}, rng, true);
  Tensor y = sub(scale(a, 2.5f), b);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(2.5f * a.data()[i] - b.data()[i]));
  backward(sum_all(y));
  for (float g : a.grad())
    CHECK(g == doctest::Approx(2.5f));
  for (float g : b.grad())
    CHECK(g == doctest::Approx(-1.0f));
}

TEST_CASE("conv2d zero input and identity kernel") {
  std::mt19937 rng(5);
  Tensor w = random_tensor({4, 2, 3, 3}, rng, false);
  Tensor zero_bias = Tensor::zeros({1, 4, 1, 1});
  Tensor out = conv2d(Tensor::zeros({1, 2, 6, 6}), w, zero_bias);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == 0.0f);

  // 1-channel delta kernel reproduces the input.
  std::vector<float> delta(9, 0.0f);
  delta[4] = 1.0f;
  Tensor wd = Tensor::from_data({1, 1, 3, 3}, delta);
  Tensor x = random_tensor({1, 1, 5, 7}, rng, false);
  Tensor y = conv2d(x, wd, Tensor::zeros({1, 1, 1, 1}));
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d rejects channel mismatch and even kernels") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  CHECK_THROWS_AS(
      conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1, 1, 1, 1})),
      std::invalid_argument);
  CHECK_THROWS_AS(
      conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 1, 1, 1})),
      std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937 rng(13);
  Tensor x = random_tensor({1, 2, 5, 5}, rng, true);
  Tensor w = random_tensor({3, 2, 3, 3}, rng, true);
  Tensor b = random_tensor({1, 3, 1, 1}, rng, true);
  const auto omega = oracles::random_vec(rng, 3 * 5 * 5, -1.0, 1.0);

  backward(probe_loss(conv2d(x, w, b), omega));

  const auto vx = values_f64(x), vw = values_f64(w), vb = values_f64(b);
  auto loss_of = [&](const std::vector<double> &xx,
                     const std::vector<double> &ww,
                     const std::vector<double> &bb) {
    return probe_loss_ref(oracles::ref_conv2d(xx, 2, 5, 5, ww, 3, 3, 3, bb),
                          omega);
  };
  CHECK(oracles::max_rel_err(
            x.grad(), oracles::fd_gradient(vx, [&](const auto &v) {
              return loss_of(v, vw, vb);
            })) < 1e-3);
  CHECK(oracles::max_rel_err(
            w.grad(), oracles::fd_gradient(vw, [&](const auto &v) {
              return loss_of(vx, v, vb);
            })) < 1e-3);
  CHECK(oracles::max_rel_err(
            b.grad(), oracles::fd_gradient(vb, [&](const auto &v) {
              return loss_of(vx, vw, v);
            })) < 1e-3);
}

TEST_CASE("relu forward extremes and masked gradient") {
  Tensor neg = Tensor::full({1, 1, 2, 2}, -0.7f);
  Tensor out = relu(neg);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == 0.0f);

  Tensor pos = Tensor::full({1, 1, 2, 2}, 0.7f);
  out = relu(pos);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == 0.7f);

  // FD away from the kink (|x| > 0.1).
  std::mt19937 rng(17);
  std::vector<double> raw = oracles::random_vec(rng, 16, 0.1, 1.0);
  for (size_t i = 0; i < raw.size(); i += 2)
    raw[i] = -raw[i];
  Tensor x = Tensor::from_data({1, 1, 4, 4}, oracles::to_f32(raw), true);
  const auto omega = oracles::random_vec(rng, 16, -1.0, 1.0);
  backward(probe_loss(relu(x), omega));
  const auto fd = oracles::fd_gradient(raw, [&](const std::vector<double> &v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i)
      out[i] = v[i] > 0.0 ? v[i] : 0.0;
    return probe_loss_ref(out, omega);
  });
  CHECK(oracles::max_rel_err(x.grad(), fd) < 1e-3);
}

TEST_CASE("l1_loss values and gradient") {
  std::mt19937 rng(19);
  Tensor a = random_tensor({1, 1, 3, 3}, rng, false);
  CHECK(l1_loss(a, a).item() == 0.0f);

  Tensor shifted = scale(a, 1.0f);
  for (int64_t i = 0; i < shifted.numel(); ++i)
    shifted.data()[i] += 0.5f;
  CHECK(l1_loss(shifted, a).item() == doctest::Approx(0.5).epsilon(1e-6));

  // Gradient is sign(pred - target)/N away from zero differences.
  Tensor pred = random_tensor({1, 1, 4, 4}, rng, true);
  Tensor target = random_tensor({1, 1, 4, 4}, rng, false);
  for (int64_t i = 0; i < pred.numel(); ++i)
    if (std::fabs(pred.data()[i] - target.data()[i]) < 0.02f)
      pred.data()[i] += 0.05f;
  backward(l1_loss(pred, target));
  const auto vp = values_f64(pred), vt = values_f64(target);
  const auto fd = oracles::fd_gradient(vp, [&](const std::vector<double> &v) {
    double acc = 0.0;
    for (size_t i = 0; i < v.size(); ++i)
      acc += std::fabs(v[i] - vt[i]);
    return acc / static_cast<double>(v.size());
  });
  CHECK(oracles::max_rel_err(pred.grad(), fd) < 1e-3);
  const float n_inv = 1.0f / static_cast<float>(pred.numel());
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const float expected =
        pred.data()[i] > target.data()[i] ? n_inv : -n_inv;
    CHECK(pred.grad()[i] == doctest::Approx(expected));
  }
}

TEST_CASE("backward: sum seeds ones, accumulation doubles, scalar check") {
  Tensor x = Tensor::full({1, 1, 2, 3}, 0.5f);
  x.set_requires_grad(true);
  Tensor loss = sum_all(x);
  backward(loss);
  for (float g : x.grad())
    CHECK(g == 1.0f);
  backward(loss);
  for (float g : x.grad())
    CHECK(g == 2.0f); // accumulation without reset doubles exactly

  CHECK_THROWS_AS(backward(Tensor::zeros({1, 1, 2, 2})),
                  std::invalid_argument);
}

TEST_CASE("backward through conv + l1 chain matches finite differences") {
  std::mt19937 rng(23);
  Tensor x = random_tensor({1, 1, 5, 5}, rng, false);
  Tensor w = random_tensor({1, 1, 3, 3}, rng, true);
  Tensor b = Tensor::zeros({1, 1, 1, 1});
  Tensor t = random_tensor({1, 1, 5, 5}, rng, false);

  backward(l1_loss(conv2d(x, w, b), t));

  const auto vx = values_f64(x), vw = values_f64(w), vt = values_f64(t);
  const auto fd = oracles::fd_gradient(vw, [&](const std::vector<double> &v) {
    const auto out = oracles::ref_conv2d(vx, 1, 5, 5, v, 1, 3, 3, {0.0});
    double acc = 0.0;
    for (size_t i = 0; i < out.size(); ++i)
      acc += std::fabs(out[i] - vt[i]);
    return acc / static_cast<double>(out.size());
  });
  CHECK(oracles::max_rel_err(w.grad(), fd) < 1e-3);
}

TEST_CASE("adam: zero grad no-op, constant-gradient magnitude, first step") {
  // Zero gradient leaves parameters unchanged.
  Tensor p = Tensor::full({1, 1, 1, 2}, 0.3f);
  p.set_requires_grad(true);
  backward(scale(sum_all(p), 0.0f));
  std::vector<Tensor> params = {p};
  AdamState state;
  adam_step(params, 0.01f, 0.9f, 0.999f, 1e-8f, state);
  CHECK(p.data()[0] == 0.3f);
  CHECK(p.data()[1] == 0.3f);

  // Constant gradient g: update magnitude approaches lr. Closed-form Adam
  // recurrence: m_hat = g, v_hat = g^2 for all steps, so each update is
  // exactly lr * g / (|g| + eps) after bias correction.
  Tensor q = Tensor::zeros({1, 1, 1, 1});
  q.set_requires_grad(true);
  AdamState qs;
  std::vector<Tensor> qp = {q};
  const float lr = 0.001f, g = 0.37f;
  float prev = 0.0f;
  for (int i = 0; i < 50; ++i) {
    q.zero_grad();
    backward(scale(sum_all(q), g));
    prev = q.data()[0];
    adam_step(qp, lr, 0.9f, 0.999f, 1e-8f, qs);
  }
  CHECK(std::fabs(prev - q.data()[0]) ==
        doctest::Approx(lr).epsilon(1e-3)); // |update| -> lr

  // Single step from zeroed moments: update = -lr * g / (|g| + eps).
  Tensor r = Tensor::zeros({1, 1, 1, 1});
  r.set_requires_grad(true);
  AdamState rs;
  std::vector<Tensor> rp = {r};
  backward(scale(sum_all(r), g));
  adam_step(rp, lr, 0.9f, 0.999f, 1e-8f, rs);
  const double expected = -lr * g / (std::fabs(g) + 1e-8);
  CHECK(r.data()[0] == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("adam requires gradients") {
  Tensor p = Tensor::zeros({1, 1, 1, 1});
  p.set_requires_grad(true);
  std::vector<Tensor> params = {p};
  AdamState state;
  CHECK_THROWS_AS(adam_step(params, 0.01f, 0.9f, 0.999f, 1e-8f, state),
                  std::runtime_error);
}

TEST_CASE("fixed seed makes op sequences bit-identical") {
  auto run = [] {
    std::mt19937 rng(99);
    Tensor x = random_tensor({1, 2, 6, 6}, rng, true);
    Tensor w = random_tensor({2, 2, 3, 3}, rng, true);
    Tensor b = random_tensor({1, 2, 1, 1}, rng, true);
    Tensor out = relu(conv2d(x, w, b));
    backward(sum_all(out));
    std::vector<float> result(out.data(), out.data() + out.numel());
    result.insert(result.end(), w.grad().begin(), w.grad().end());
    return result;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == b[i]);
}

TEST_CASE("forward ops keep finite inputs finite") {
  std::mt19937 rng(31);
  Tensor x = random_tensor({1, 3, 8, 8}, rng, true, -10.0, 10.0);
  Tensor w = random_tensor({4, 3, 3, 3}, rng, false, -2.0, 2.0);
  Tensor b = random_tensor({1, 4, 1, 1}, rng, false);
  CHECK(all_finite(relu(conv2d(x, w, b))));
  CHECK(all_finite(resize_bicubic(x, 13, 5)));
  CHECK(all_finite(mul(x, x)));
}

#include "cmsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cmsr {

std::string Shape::str() const {
  std::ostringstream oss;
  oss << "(" << n << "," << c << "," << h << "," << w << ")";
  return oss.str();
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = s;
  node->data.assign(static_cast<size_t>(s.numel()), 0.0f);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::full(Shape s, float value) {
  Tensor t = zeros(s);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape s, std::vector<float> values,
                         bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != s.numel())
    throw std::invalid_argument("Tensor::from_data: " +
                                std::to_string(values.size()) +
                                " values for shape " + s.str());
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = s;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

float Tensor::at(int n, int c, int y, int x) const {
  const Shape &s = node_->shape;
  return node_->data[((static_cast<size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

float Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("Tensor::item on non-scalar " + shape().str());
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data; // shared buffers are not exposed; copy is fine
  return wrap(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

Tensor make_op(Shape out_shape, std::vector<float> out_data,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode &)> backward_fn) {
  bool needs_graph = false;
  for (const auto &p : parents)
    needs_graph = needs_graph || p.requires_grad();
  Tensor out = Tensor::from_data(out_shape, std::move(out_data));
  if (needs_graph) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto &p : parents)
      node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return out;
}

void accumulate_grad(const std::shared_ptr<detail::TensorNode> &parent,
                     const float *delta) {
  if (!parent->requires_grad)
    return;
  parent->ensure_grad();
  float *g = parent->grad.data();
  const size_t n = parent->grad.size();
  for (size_t i = 0; i < n; ++i)
    g[i] += delta[i];
}

namespace {

void check_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
}

} // namespace

Tensor add(const Tensor &a, const Tensor &b) {
  check_same_shape(a, b, "add");
  const size_t n = static_cast<size_t>(a.numel());
  std::vector<float> out(n);
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < n; ++i)
    out[i] = pa[i] + pb[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](detail::TensorNode &self) {
                   accumulate_grad(self.parents[0], self.grad.data());
                   accumulate_grad(self.parents[1], self.grad.data());
                 });
}

Tensor sub(const Tensor &a, const Tensor &b) {
  check_same_shape(a, b, "sub");
  const size_t n = static_cast<size_t>(a.numel());
  std::vector<float> out(n);
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < n; ++i)
    out[i] = pa[i] - pb[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [n](detail::TensorNode &self) {
                   accumulate_grad(self.parents[0], self.grad.data());
                   if (self.parents[1]->requires_grad) {
                     std::vector<float> neg(n);
                     for (size_t i = 0; i < n; ++i)
                       neg[i] = -self.grad[i];
                     accumulate_grad(self.parents[1], neg.data());
                   }
                 });
}

Tensor mul(const Tensor &a, const Tensor &b) {
  check_same_shape(a, b, "mul");
  const size_t n = static_cast<size_t>(a.numel());
  std::vector<float> out(n);
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < n; ++i)
    out[i] = pa[i] * pb[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [n](detail::TensorNode &self) {
                   const float *ga = self.parents[0]->data.data();
                   const float *gb = self.parents[1]->data.data();
                   std::vector<float> d(n);
                   if (self.parents[0]->requires_grad) {
                     for (size_t i = 0; i < n; ++i)
                       d[i] = self.grad[i] * gb[i];
                     accumulate_grad(self.parents[0], d.data());
                   }
                   if (self.parents[1]->requires_grad) {
                     for (size_t i = 0; i < n; ++i)
                       d[i] = self.grad[i] * ga[i];
                     accumulate_grad(self.parents[1], d.data());
                   }
                 });
}

Tensor scale(const Tensor &a, float s) {
  const size_t n = static_cast<size_t>(a.numel());
  std::vector<float> out(n);
  const float *pa = a.data();
  for (size_t i = 0; i < n; ++i)
    out[i] = pa[i] * s;
  return make_op(a.shape(), std::move(out), {a},
                 [n, s](detail::TensorNode &self) {
                   if (!self.parents[0]->requires_grad)
                     return;
                   std::vector<float> d(n);
                   for (size_t i = 0; i < n; ++i)
                     d[i] = self.grad[i] * s;
                   accumulate_grad(self.parents[0], d.data());
                 });
}

Tensor relu(const Tensor &x) {
  const size_t n = static_cast<size_t>(x.numel());
  std::vector<float> out(n);
  const float *px = x.data();
  for (size_t i = 0; i < n; ++i)
    out[i] = px[i] > 0.0f ? px[i] : 0.0f;
  return make_op(x.shape(), std::move(out), {x},
                 [n](detail::TensorNode &self) {
                   if (!self.parents[0]->requires_grad)
                     return;
                   const float *px = self.parents[0]->data.data();
                   std::vector<float> d(n);
                   for (size_t i = 0; i < n; ++i)
                     d[i] = px[i] > 0.0f ? self.grad[i] : 0.0f;
                   accumulate_grad(self.parents[0], d.data());
                 });
}

Tensor l1_loss(const Tensor &pred, const Tensor &target) {
  check_same_shape(pred, target, "l1_loss");
  const size_t n = static_cast<size_t>(pred.numel());
  const float *pp = pred.data(), *pt = target.data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i)
    acc += std::fabs(static_cast<double>(pp[i]) - pt[i]);
  const float inv_n = 1.0f / static_cast<float>(n);
  return make_op(
      Shape{1, 1, 1, 1}, {static_cast<float>(acc / static_cast<double>(n))},
      {pred, target}, [n, inv_n](detail::TensorNode &self) {
        const float g = self.grad[0] * inv_n;
        const float *pp = self.parents[0]->data.data();
        const float *pt = self.parents[1]->data.data();
        std::vector<float> d(n);
        for (size_t i = 0; i < n; ++i) {
          const float diff = pp[i] - pt[i];
          d[i] = diff > 0.0f ? g : (diff < 0.0f ? -g : 0.0f);
        }
        accumulate_grad(self.parents[0], d.data());
        if (self.parents[1]->requires_grad) {
          for (size_t i = 0; i < n; ++i)
            d[i] = -d[i];
          accumulate_grad(self.parents[1], d.data());
        }
      });
}

Tensor sum_all(const Tensor &x) {
  const size_t n = static_cast<size_t>(x.numel());
  const float *px = x.data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i)
    acc += px[i];
  return make_op(Shape{1, 1, 1, 1}, {static_cast<float>(acc)}, {x},
                 [n](detail::TensorNode &self) {
                   if (!self.parents[0]->requires_grad)
                     return;
                   std::vector<float> d(n, self.grad[0]);
                   accumulate_grad(self.parents[0], d.data());
                 });
}

void backward(const Tensor &loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                loss.shape().str());
  using detail::TensorNode;

  // Iterative DFS post-order: children after all their parents.
  std::vector<TensorNode *> topo;
  std::unordered_set<TensorNode *> visited;
  std::vector<std::pair<TensorNode *, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode *p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are pass-local; leaf grads persist and accumulate.
  for (TensorNode *node : topo) {
    if (!node->is_leaf())
      node->grad.assign(node->data.size(), 0.0f);
  }
  TensorNode *root = loss.node().get();
  root->ensure_grad();
  if (root->is_leaf()) {
    root->grad[0] += 1.0f;
    return;
  }
  root->grad[0] = 1.0f;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode *node = *it;
    if (node->backward_fn)
      node->backward_fn(*node);
  }
}

void adam_step(std::vector<Tensor> &params, float lr, float beta1, float beta2,
               float eps, AdamState &state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);
      state.v[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state/param count mismatch");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), state.step);

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor &p = params[i];
    if (p.grad().size() != static_cast<size_t>(p.numel()))
      throw std::runtime_error("adam_step: parameter " + std::to_string(i) +
                               " has no gradient");
    float *w = p.data();
    const float *g = p.grad().data();
    float *m = state.m[i].data();
    float *v = state.v[i].data();
    const size_t n = state.m[i].size();
    for (size_t j = 0; j < n; ++j) {
      m[j] = beta1 * m[j] + (1.0f - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0f - beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

bool all_finite(const Tensor &t) {
  const float *p = t.data();
  const size_t n = static_cast<size_t>(t.numel());
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i]))
      return false;
  return true;
}

} // namespace cmsr

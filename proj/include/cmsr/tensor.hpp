#ifndef CMSR_TENSOR_HPP
#define CMSR_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cmsr {

// All arrays are 4-D, laid out (batch, channels, height, width), row-major.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  int64_t numel() const {
    return static_cast<int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape &o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape &o) const { return !(*this == o); }
  std::string str() const;
};

namespace detail {

// One node of the computation graph. Non-leaf nodes hold the recorded
// backward rule and keep their inputs alive; dropping the last Tensor
// that references the graph root releases every intermediate buffer.
struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad; // allocated lazily, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(TensorNode &)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size())
      grad.assign(data.size(), 0.0f);
  }
};

} // namespace detail

// Value-semantic handle to a shared float32 buffer plus optional autodiff
// state. Copies alias the same storage.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, float value);
  static Tensor from_data(Shape s, std::vector<float> values,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }

  float *data() { return node_->data.data(); }
  const float *data() const { return node_->data.data(); }
  const std::vector<float> &values() const { return node_->data; }

  float at(int n, int c, int y, int x) const;
  float item() const; // single-element tensors only

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Leaf gradient buffer (empty until backward has touched this leaf).
  const std::vector<float> &grad() const { return node_->grad; }
  void zero_grad();

  // Same storage, no graph membership.
  Tensor detach() const;
  // Deep copy of the data, detached from any graph.
  Tensor clone() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> n);

private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Creates a graph node for a custom differentiable op. `backward_fn`
// receives the output node (with .grad populated) and must accumulate into
// each parent's grad via accumulate_grad below. Recording only happens when
// some parent requires grad; otherwise the result is a constant.
Tensor make_op(Shape out_shape, std::vector<float> out_data,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode &)> backward_fn);

// Helper for backward rules: adds `delta` (same length as parent's data)
// into the parent's grad, allocating it on first touch. No-op when the
// parent does not participate in the grad path.
void accumulate_grad(const std::shared_ptr<detail::TensorNode> &parent,
                     const float *delta);

// --- elementwise ---
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, float s);

Tensor relu(const Tensor &x);

// Mean absolute difference, reduced to a {1,1,1,1} scalar. The subgradient
// at zero difference is 0.
Tensor l1_loss(const Tensor &pred, const Tensor &target);

// Sum of all elements, reduced to a {1,1,1,1} scalar.
Tensor sum_all(const Tensor &x);

// Populates dLoss/dLeaf for every requires_grad leaf reachable from `loss`.
// Repeated calls without zero_grad accumulate into leaf grads.
void backward(const Tensor &loss);

// --- optimizer ---
struct AdamState {
  int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

// Standard Adam with bias correction. Parameters must carry populated
// gradient buffers. `state` is sized on first use and must be reused with
// the same parameter list.
void adam_step(std::vector<Tensor> &params, float lr, float beta1,
               float beta2, float eps, AdamState &state);

bool all_finite(const Tensor &t);

} // namespace cmsr

#endif

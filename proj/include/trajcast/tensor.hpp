#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trajcast/rng.hpp"

namespace trajcast {

// Dense fp64 tensors with reverse-mode autodiff on a per-graph tape.
//
// A Tensor is a cheap value handle over a shared node. Ops allocate a new
// node, link it to its parents and stash a closure that scatters the node's
// gradient back into them. backward() walks the graph once in reverse
// topological order, then drops the links so memory is reclaimed. Scalars
// are rank-0 tensors (shape {}, one element). Everything is row-major.

using Shape = std::vector<int>;

size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  bool requires_grad() const { return node_->requires_grad; }
  // Valid after backward(); empty span if this node was never visited.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  // Value of a one-element tensor.
  double value() const;

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op_output(Shape shape, std::vector<double> data,
                               const std::vector<Tensor>& inputs, const char* op_name);
};

enum class OpKind {
  matmul,
  add,
  mul,
  concat,
  relu,
  leaky_relu,
  softmax,
  dilated_causal_conv1d,
  linear,
  dropout,
  gaussian_sample_reparam,
  mse,
  kl_standard_normal,
  reshape,
  scale,
  last_step,
};

struct OpAttrs {
  int axis = 0;           // concat
  int dilation = 1;       // dilated_causal_conv1d
  double rate = 0.0;      // dropout
  bool training = false;  // dropout
  double slope = 0.01;    // leaky_relu
  double factor = 1.0;    // scale
  Shape target_shape;     // reshape
  Rng* rng = nullptr;     // dropout, gaussian_sample_reparam
};

// Single dispatch point; the named wrappers below are sugar over it.
Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs = {});

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts, int axis = 0);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor softmax(const Tensor& x);
// x: [T] with kernel [K], or [Ci,T] with kernel [Co,Ci,K] and optional bias [Co].
// Left zero-padding of (K-1)*dilation keeps the output strictly causal.
Tensor dilated_causal_conv1d(const Tensor& x, const Tensor& kernel, int dilation);
Tensor dilated_causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                             int dilation);
// x: [in] or [batch,in]; w: [out,in]; b: [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Inverted dropout: identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);
// z = mu + exp(logvar/2) * eps with eps ~ N(0, I); gradients flow to mu and logvar.
Tensor gaussian_sample_reparam(const Tensor& mu, const Tensor& logvar, Rng& rng);
Tensor mse(const Tensor& a, const Tensor& b);
// KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over dimensions.
Tensor kl_standard_normal(const Tensor& mu, const Tensor& logvar);
Tensor reshape(const Tensor& x, Shape target_shape);
Tensor scale(const Tensor& x, double factor);
// x: [C,T] -> [C], or [T] -> scalar; picks the newest time step.
Tensor last_step(const Tensor& x);

// Populates grad buffers for everything the loss depends on, then clears the
// tape. loss must have shape {} or {1}.
void backward(Tensor& loss);

// Disables tape recording for its scope (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Central finite differences against analytic gradients. Returns
// max over inputs of |analytic - numeric| / max(1, |numeric|); 0 when inputs
// is empty. loss_fn must be deterministic (re-seed any rng it uses).
double grad_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                  double fd_step = 1e-5);

}  // namespace trajcast

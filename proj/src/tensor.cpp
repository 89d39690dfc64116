#include "trajcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "trajcast/errors.hpp"

namespace trajcast {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const char* op, std::span<const double> values, const char* which) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite " + which);
    }
  }
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void accumulate(const std::shared_ptr<TensorNode>& node, size_t index, double v) {
  if (node->requires_grad) node->grad[index] += v;
}

}  // namespace

size_t numel(const Shape& shape) {
  size_t n = 1;
  for (int e : shape) n *= static_cast<size_t>(e);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (int e : shape) {
    if (e < 0) shape_fail("full", "negative extent in " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->data.assign(numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    shape_fail("from_data", shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                                " values");
  }
  check_finite("from_data", data, "input");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::value() const {
  if (node_->data.size() != 1) {
    shape_fail("value", "tensor has shape " + shape_str(node_->shape));
  }
  return node_->data[0];
}

Tensor make_op_output(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                      const char* op_name) {
  check_finite(op_name, data, "output");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any_grad = false;
  for (const Tensor& in : inputs) any_grad = any_grad || in.requires_grad();
  node->requires_grad = g_grad_enabled && any_grad;
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const Tensor& in : inputs) node->parents.push_back(in.node());
  }
  return Tensor(std::move(node));
}

namespace {

void expect_inputs(const char* op, const std::vector<Tensor>& inputs, size_t lo, size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(lo) +
                     (hi != lo ? ".." + std::to_string(hi) : "") + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  for (const Tensor& in : inputs) check_finite(op, in.data(), "input");
}

Tensor op_matmul(const std::vector<Tensor>& inputs) {
  expect_inputs("matmul", inputs, 2, 2);
  const Tensor& a = inputs[0];
  const Tensor& b = inputs[1];
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_fail("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double ail = ad[i * k + l];
      for (int j = 0; j < n; ++j) out[i * n + j] += ail * bd[l * n + j];
    }
  }
  Tensor result = make_op_output({m, n}, std::move(out), inputs, "matmul");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto pa = a.node(), pb = b.node();
    result.node()->backward_fn = [self, pa, pb, m, k, n]() {
      const auto& g = self->grad;
      if (pa->requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += g[i * n + j] * pb->data[l * n + j];
            pa->grad[i * k + l] += s;
          }
      }
      if (pb->requires_grad) {
        for (int l = 0; l < k; ++l)
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += pa->data[i * k + l] * g[i * n + j];
            pb->grad[l * n + j] += s;
          }
      }
    };
  }
  return result;
}

Tensor op_elementwise_pair(OpKind kind, const std::vector<Tensor>& inputs) {
  const char* name = kind == OpKind::add ? "add" : "mul";
  expect_inputs(name, inputs, 2, 2);
  const Tensor& a = inputs[0];
  const Tensor& b = inputs[1];
  if (a.shape() != b.shape()) {
    shape_fail(name, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  if (kind == OpKind::add) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  }
  Tensor result = make_op_output(a.shape(), std::move(out), inputs, name);
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto pa = a.node(), pb = b.node();
    if (kind == OpKind::add) {
      result.node()->backward_fn = [self, pa, pb]() {
        for (size_t i = 0; i < self->grad.size(); ++i) {
          accumulate(pa, i, self->grad[i]);
          accumulate(pb, i, self->grad[i]);
        }
      };
    } else {
      result.node()->backward_fn = [self, pa, pb]() {
        for (size_t i = 0; i < self->grad.size(); ++i) {
          accumulate(pa, i, self->grad[i] * pb->data[i]);
          accumulate(pb, i, self->grad[i] * pa->data[i]);
        }
      };
    }
  }
  return result;
}

Tensor op_concat(const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  if (inputs.empty()) shape_fail("concat", "no inputs");
  for (const Tensor& in : inputs) check_finite("concat", in.data(), "input");
  const int rank = inputs[0].rank();
  const int axis = attrs.axis;
  if (rank != 1 && rank != 2) shape_fail("concat", "supports rank 1 and 2 only");
  if (axis < 0 || axis >= rank) shape_fail("concat", "axis " + std::to_string(axis));
  for (const Tensor& in : inputs) {
    if (in.rank() != rank) shape_fail("concat", "mixed ranks");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && in.shape()[d] != inputs[0].shape()[d]) {
        shape_fail("concat", shape_str(in.shape()) + " vs " + shape_str(inputs[0].shape()));
      }
    }
  }

  Shape out_shape = inputs[0].shape();
  int total = 0;
  for (const Tensor& in : inputs) total += in.shape()[axis];
  out_shape[axis] = total;

  std::vector<double> out(numel(out_shape));
  std::vector<int> offsets(inputs.size());
  if (rank == 1 || axis == 0) {
    size_t pos = 0;
    for (size_t p = 0; p < inputs.size(); ++p) {
      offsets[p] = static_cast<int>(pos);
      const auto d = inputs[p].data();
      std::copy(d.begin(), d.end(), out.begin() + pos);
      pos += d.size();
    }
  } else {  // rank 2, axis 1
    const int rows = out_shape[0];
    int col = 0;
    for (size_t p = 0; p < inputs.size(); ++p) {
      offsets[p] = col;
      const int cols_p = inputs[p].shape()[1];
      const auto d = inputs[p].data();
      for (int r = 0; r < rows; ++r) {
        std::copy(d.begin() + r * cols_p, d.begin() + (r + 1) * cols_p,
                  out.begin() + r * total + col);
      }
      col += cols_p;
    }
  }

  Tensor result = make_op_output(out_shape, std::move(out), inputs, "concat");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const Tensor& in : inputs) parents.push_back(in.node());
    const bool along_cols = (rank == 2 && axis == 1);
    const int rows = rank == 2 ? inputs[0].shape()[0] : 0;
    result.node()->backward_fn = [self, parents, offsets, along_cols, rows, total]() {
      for (size_t p = 0; p < parents.size(); ++p) {
        const auto& parent = parents[p];
        if (!parent->requires_grad) continue;
        if (!along_cols) {
          for (size_t i = 0; i < parent->data.size(); ++i) {
            parent->grad[i] += self->grad[offsets[p] + i];
          }
        } else {
          const int cols_p = parent->shape[1];
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols_p; ++c) {
              parent->grad[r * cols_p + c] += self->grad[r * total + offsets[p] + c];
            }
        }
      }
    };
  }
  return result;
}

Tensor op_relu_family(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  const bool leaky = kind == OpKind::leaky_relu;
  const char* name = leaky ? "leaky_relu" : "relu";
  expect_inputs(name, inputs, 1, 1);
  const Tensor& x = inputs[0];
  const double slope = leaky ? attrs.slope : 0.0;
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : slope * xd[i];
  Tensor result = make_op_output(x.shape(), std::move(out), inputs, name);
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node();
    result.node()->backward_fn = [self, px, slope]() {
      for (size_t i = 0; i < self->grad.size(); ++i) {
        px->grad[i] += self->grad[i] * (px->data[i] > 0.0 ? 1.0 : slope);
      }
    };
  }
  return result;
}

Tensor op_softmax(const std::vector<Tensor>& inputs) {
  expect_inputs("softmax", inputs, 1, 1);
  const Tensor& x = inputs[0];
  if (x.rank() != 1 || x.size() == 0) shape_fail("softmax", "needs a nonempty vector");
  const auto xd = x.data();
  const double mx = *std::max_element(xd.begin(), xd.end());
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(xd[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  Tensor result = make_op_output(x.shape(), std::move(out), inputs, "softmax");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node();
    result.node()->backward_fn = [self, px]() {
      double dot = 0.0;
      for (size_t i = 0; i < self->grad.size(); ++i) dot += self->grad[i] * self->data[i];
      for (size_t i = 0; i < self->grad.size(); ++i) {
        px->grad[i] += self->data[i] * (self->grad[i] - dot);
      }
    };
  }
  return result;
}

Tensor op_conv(const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  const char* name = "dilated_causal_conv1d";
  expect_inputs(name, inputs, 2, 3);
  const Tensor& x = inputs[0];
  const Tensor& w = inputs[1];
  const int d = attrs.dilation;
  if (d < 1) shape_fail(name, "dilation must be >= 1");

  // Single-channel convenience form: x [T], kernel [K].
  if (x.rank() == 1) {
    if (w.rank() != 1 || inputs.size() != 2) {
      shape_fail(name, "vector input takes a vector kernel and no bias");
    }
    const int t_len = x.shape()[0], klen = w.shape()[0];
    if (t_len == 0 || klen == 0) shape_fail(name, "empty input or kernel");
    std::vector<double> out(t_len, 0.0);
    const auto xd = x.data();
    const auto wd = w.data();
    for (int t = 0; t < t_len; ++t) {
      for (int j = 0; j < klen; ++j) {
        const int src = t - (klen - 1 - j) * d;
        if (src >= 0) out[t] += wd[j] * xd[src];
      }
    }
    Tensor result = make_op_output(x.shape(), std::move(out), inputs, name);
    if (result.requires_grad()) {
      TensorNode* self = result.node().get();
      auto px = x.node(), pw = w.node();
      result.node()->backward_fn = [self, px, pw, t_len, klen, d]() {
        for (int t = 0; t < t_len; ++t) {
          const double g = self->grad[t];
          for (int j = 0; j < klen; ++j) {
            const int src = t - (klen - 1 - j) * d;
            if (src < 0) continue;
            accumulate(px, src, g * pw->data[j]);
            accumulate(pw, j, g * px->data[src]);
          }
        }
      };
    }
    return result;
  }

  // Channel form: x [Ci,T], kernel [Co,Ci,K], optional bias [Co].
  if (x.rank() != 2 || w.rank() != 3 || w.shape()[1] != x.shape()[0]) {
    shape_fail(name, "input " + shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
  }
  const int ci = x.shape()[0], t_len = x.shape()[1];
  const int co = w.shape()[0], klen = w.shape()[2];
  if (t_len == 0 || klen == 0) shape_fail(name, "empty input or kernel");
  const bool has_bias = inputs.size() == 3;
  if (has_bias && (inputs[2].rank() != 1 || inputs[2].shape()[0] != co)) {
    shape_fail(name, "bias " + shape_str(inputs[2].shape()) + " for " + std::to_string(co) +
                         " output channels");
  }

  std::vector<double> out(static_cast<size_t>(co) * t_len, 0.0);
  const auto xd = x.data();
  const auto wd = w.data();
  for (int o = 0; o < co; ++o) {
    for (int c = 0; c < ci; ++c) {
      for (int j = 0; j < klen; ++j) {
        const double wv = wd[(o * ci + c) * klen + j];
        const int shift = (klen - 1 - j) * d;
        for (int t = shift; t < t_len; ++t) out[o * t_len + t] += wv * xd[c * t_len + t - shift];
      }
    }
    if (has_bias) {
      const double bv = inputs[2].data()[o];
      for (int t = 0; t < t_len; ++t) out[o * t_len + t] += bv;
    }
  }

  Tensor result = make_op_output({co, t_len}, std::move(out), inputs, name);
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node(), pw = w.node();
    auto pb = has_bias ? inputs[2].node() : nullptr;
    result.node()->backward_fn = [self, px, pw, pb, ci, co, t_len, klen, d]() {
      for (int o = 0; o < co; ++o) {
        for (int c = 0; c < ci; ++c) {
          for (int j = 0; j < klen; ++j) {
            const int shift = (klen - 1 - j) * d;
            const size_t wi = (o * ci + c) * klen + j;
            double wsum = 0.0;
            for (int t = shift; t < t_len; ++t) {
              const double g = self->grad[o * t_len + t];
              wsum += g * px->data[c * t_len + t - shift];
              accumulate(px, c * t_len + t - shift, g * pw->data[wi]);
            }
            accumulate(pw, wi, wsum);
          }
        }
        if (pb && pb->requires_grad) {
          double bsum = 0.0;
          for (int t = 0; t < t_len; ++t) bsum += self->grad[o * t_len + t];
          pb->grad[o] += bsum;
        }
      }
    };
  }
  return result;
}

Tensor op_linear(const std::vector<Tensor>& inputs) {
  expect_inputs("linear", inputs, 3, 3);
  const Tensor& x = inputs[0];
  const Tensor& w = inputs[1];
  const Tensor& b = inputs[2];
  if (w.rank() != 2 || b.rank() != 1 || b.shape()[0] != w.shape()[0]) {
    shape_fail("linear", "weight " + shape_str(w.shape()) + " bias " + shape_str(b.shape()));
  }
  const int out_dim = w.shape()[0], in_dim = w.shape()[1];
  const bool batched = x.rank() == 2;
  if ((batched ? x.shape()[1] : (x.rank() == 1 ? x.shape()[0] : -1)) != in_dim) {
    shape_fail("linear", "input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  }
  const int rows = batched ? x.shape()[0] : 1;

  std::vector<double> out(static_cast<size_t>(rows) * out_dim);
  const auto xd = x.data();
  const auto wd = w.data();
  const auto bd = b.data();
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out_dim; ++o) {
      double s = bd[o];
      for (int i = 0; i < in_dim; ++i) s += wd[o * in_dim + i] * xd[r * in_dim + i];
      out[r * out_dim + o] = s;
    }
  }
  Shape out_shape = batched ? Shape{rows, out_dim} : Shape{out_dim};
  Tensor result = make_op_output(std::move(out_shape), std::move(out), inputs, "linear");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node(), pw = w.node(), pb = b.node();
    result.node()->backward_fn = [self, px, pw, pb, rows, out_dim, in_dim]() {
      for (int r = 0; r < rows; ++r) {
        for (int o = 0; o < out_dim; ++o) {
          const double g = self->grad[r * out_dim + o];
          if (g == 0.0) continue;
          accumulate(pb, o, g);
          for (int i = 0; i < in_dim; ++i) {
            accumulate(px, r * in_dim + i, g * pw->data[o * in_dim + i]);
            accumulate(pw, o * in_dim + i, g * px->data[r * in_dim + i]);
          }
        }
      }
    };
  }
  return result;
}

Tensor op_dropout(const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  expect_inputs("dropout", inputs, 1, 1);
  const Tensor& x = inputs[0];
  if (attrs.rate < 0.0 || attrs.rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(attrs.rate));
  }
  if (!attrs.training || attrs.rate == 0.0) return x;  // identity at inference
  if (attrs.rng == nullptr) throw ConfigError("dropout: training mode needs an rng");

  const double keep = 1.0 - attrs.rate;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = attrs.rng->uniform() >= attrs.rate ? 1.0 / keep : 0.0;
    out[i] = xd[i] * (*mask)[i];
  }
  Tensor result = make_op_output(x.shape(), std::move(out), inputs, "dropout");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node();
    result.node()->backward_fn = [self, px, mask]() {
      for (size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += self->grad[i] * (*mask)[i];
    };
  }
  return result;
}

Tensor op_reparam(const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  const char* name = "gaussian_sample_reparam";
  expect_inputs(name, inputs, 2, 2);
  const Tensor& mu = inputs[0];
  const Tensor& logvar = inputs[1];
  if (mu.shape() != logvar.shape()) {
    shape_fail(name, shape_str(mu.shape()) + " vs " + shape_str(logvar.shape()));
  }
  if (attrs.rng == nullptr) throw ConfigError(std::string(name) + ": needs an rng");
  std::vector<double> out(mu.size());
  const auto md = mu.data();
  const auto ld = logvar.data();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = md[i] + std::exp(0.5 * ld[i]) * attrs.rng->normal();
  }
  Tensor result = make_op_output(mu.shape(), std::move(out), inputs, name);
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto pm = mu.node(), pl = logvar.node();
    // d out / d logvar = exp(logvar/2) * eps / 2 = (out - mu) / 2.
    result.node()->backward_fn = [self, pm, pl]() {
      for (size_t i = 0; i < self->grad.size(); ++i) {
        accumulate(pm, i, self->grad[i]);
        accumulate(pl, i, self->grad[i] * 0.5 * (self->data[i] - pm->data[i]));
      }
    };
  }
  return result;
}

Tensor op_mse(const std::vector<Tensor>& inputs) {
  expect_inputs("mse", inputs, 2, 2);
  const Tensor& a = inputs[0];
  const Tensor& b = inputs[1];
  if (a.shape() != b.shape() || a.size() == 0) {
    shape_fail("mse", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  const auto ad = a.data();
  const auto bd = b.data();
  for (size_t i = 0; i < ad.size(); ++i) {
    const double diff = ad[i] - bd[i];
    s += diff * diff;
  }
  Tensor result = make_op_output({}, {s / n}, inputs, "mse");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto pa = a.node(), pb = b.node();
    result.node()->backward_fn = [self, pa, pb, n]() {
      const double g = self->grad[0];
      for (size_t i = 0; i < pa->data.size(); ++i) {
        const double v = g * 2.0 * (pa->data[i] - pb->data[i]) / n;
        accumulate(pa, i, v);
        accumulate(pb, i, -v);
      }
    };
  }
  return result;
}

Tensor op_kl(const std::vector<Tensor>& inputs) {
  const char* name = "kl_standard_normal";
  expect_inputs(name, inputs, 2, 2);
  const Tensor& mu = inputs[0];
  const Tensor& logvar = inputs[1];
  if (mu.shape() != logvar.shape()) {
    shape_fail(name, shape_str(mu.shape()) + " vs " + shape_str(logvar.shape()));
  }
  double s = 0.0;
  const auto md = mu.data();
  const auto ld = logvar.data();
  for (size_t i = 0; i < md.size(); ++i) {
    s += std::exp(ld[i]) + md[i] * md[i] - 1.0 - ld[i];
  }
  Tensor result = make_op_output({}, {0.5 * s}, inputs, name);
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto pm = mu.node(), pl = logvar.node();
    result.node()->backward_fn = [self, pm, pl]() {
      const double g = self->grad[0];
      for (size_t i = 0; i < pm->data.size(); ++i) {
        accumulate(pm, i, g * pm->data[i]);
        accumulate(pl, i, g * 0.5 * (std::exp(pl->data[i]) - 1.0));
      }
    };
  }
  return result;
}

Tensor op_reshape(const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  expect_inputs("reshape", inputs, 1, 1);
  const Tensor& x = inputs[0];
  for (int e : attrs.target_shape) {
    if (e < 0) shape_fail("reshape", "negative extent in " + shape_str(attrs.target_shape));
  }
  if (numel(attrs.target_shape) != x.size()) {
    shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(attrs.target_shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Tensor result = make_op_output(attrs.target_shape, std::move(out), inputs, "reshape");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node();
    result.node()->backward_fn = [self, px]() {
      for (size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += self->grad[i];
    };
  }
  return result;
}

Tensor op_scale(const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  expect_inputs("scale", inputs, 1, 1);
  const Tensor& x = inputs[0];
  const double f = attrs.factor;
  if (!std::isfinite(f)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f * xd[i];
  Tensor result = make_op_output(x.shape(), std::move(out), inputs, "scale");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node();
    result.node()->backward_fn = [self, px, f]() {
      for (size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += f * self->grad[i];
    };
  }
  return result;
}

Tensor op_last_step(const std::vector<Tensor>& inputs) {
  expect_inputs("last_step", inputs, 1, 1);
  const Tensor& x = inputs[0];
  if (x.size() == 0) shape_fail("last_step", "empty input");
  Shape out_shape;
  std::vector<double> out;
  int t_len = 0;
  if (x.rank() == 1) {
    t_len = x.shape()[0];
    out_shape = {};
    out = {x.data()[t_len - 1]};
  } else if (x.rank() == 2) {
    const int c = x.shape()[0];
    t_len = x.shape()[1];
    out_shape = {c};
    out.resize(c);
    for (int i = 0; i < c; ++i) out[i] = x.data()[i * t_len + t_len - 1];
  } else {
    shape_fail("last_step", "supports rank 1 and 2, got " + shape_str(x.shape()));
  }
  Tensor result = make_op_output(std::move(out_shape), std::move(out), inputs, "last_step");
  if (result.requires_grad()) {
    TensorNode* self = result.node().get();
    auto px = x.node();
    result.node()->backward_fn = [self, px, t_len]() {
      for (size_t i = 0; i < self->grad.size(); ++i) {
        px->grad[i * t_len + t_len - 1] += self->grad[i];
      }
    };
  }
  return result;
}

}  // namespace

Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::matmul:
      return op_matmul(inputs);
    case OpKind::add:
    case OpKind::mul:
      return op_elementwise_pair(kind, inputs);
    case OpKind::concat:
      return op_concat(inputs, attrs);
    case OpKind::relu:
    case OpKind::leaky_relu:
      return op_relu_family(kind, inputs, attrs);
    case OpKind::softmax:
      return op_softmax(inputs);
    case OpKind::dilated_causal_conv1d:
      return op_conv(inputs, attrs);
    case OpKind::linear:
      return op_linear(inputs);
    case OpKind::dropout:
      return op_dropout(inputs, attrs);
    case OpKind::gaussian_sample_reparam:
      return op_reparam(inputs, attrs);
    case OpKind::mse:
      return op_mse(inputs);
    case OpKind::kl_standard_normal:
      return op_kl(inputs);
    case OpKind::reshape:
      return op_reshape(inputs, attrs);
    case OpKind::scale:
      return op_scale(inputs, attrs);
    case OpKind::last_step:
      return op_last_step(inputs);
  }
  throw std::logic_error("forward_op: unknown op kind");
}

Tensor matmul(const Tensor& a, const Tensor& b) { return forward_op(OpKind::matmul, {a, b}); }
Tensor add(const Tensor& a, const Tensor& b) { return forward_op(OpKind::add, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return forward_op(OpKind::mul, {a, b}); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return forward_op(OpKind::concat, parts, attrs);
}

Tensor relu(const Tensor& x) { return forward_op(OpKind::relu, {x}); }

Tensor leaky_relu(const Tensor& x, double slope) {
  OpAttrs attrs;
  attrs.slope = slope;
  return forward_op(OpKind::leaky_relu, {x}, attrs);
}

Tensor softmax(const Tensor& x) { return forward_op(OpKind::softmax, {x}); }

Tensor dilated_causal_conv1d(const Tensor& x, const Tensor& kernel, int dilation) {
  OpAttrs attrs;
  attrs.dilation = dilation;
  return forward_op(OpKind::dilated_causal_conv1d, {x, kernel}, attrs);
}

Tensor dilated_causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                             int dilation) {
  OpAttrs attrs;
  attrs.dilation = dilation;
  return forward_op(OpKind::dilated_causal_conv1d, {x, kernel, bias}, attrs);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return forward_op(OpKind::linear, {x, w, b});
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  OpAttrs attrs;
  attrs.rate = rate;
  attrs.training = training;
  attrs.rng = &rng;
  return forward_op(OpKind::dropout, {x}, attrs);
}

Tensor gaussian_sample_reparam(const Tensor& mu, const Tensor& logvar, Rng& rng) {
  OpAttrs attrs;
  attrs.rng = &rng;
  return forward_op(OpKind::gaussian_sample_reparam, {mu, logvar}, attrs);
}

Tensor mse(const Tensor& a, const Tensor& b) { return forward_op(OpKind::mse, {a, b}); }

Tensor kl_standard_normal(const Tensor& mu, const Tensor& logvar) {
  return forward_op(OpKind::kl_standard_normal, {mu, logvar});
}

Tensor reshape(const Tensor& x, Shape target_shape) {
  OpAttrs attrs;
  attrs.target_shape = std::move(target_shape);
  return forward_op(OpKind::reshape, {x}, attrs);
}

Tensor scale(const Tensor& x, double factor) {
  OpAttrs attrs;
  attrs.factor = factor;
  return forward_op(OpKind::scale, {x}, attrs);
}

Tensor last_step(const Tensor& x) { return forward_op(OpKind::last_step, {x}); }

void backward(Tensor& loss) {
  auto root = loss.node();
  if (!root) throw std::invalid_argument("backward: undefined tensor");
  if (!(root->shape.empty() || (root->shape.size() == 1 && root->shape[0] == 1))) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any differentiable tensor");
  }

  // Reverse post-order over parent links gives a topological order with every
  // consumer ahead of its producers.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  visited.insert(root.get());
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorNode* node : order) node->grad.assign(node->data.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
  for (TensorNode* node : order) {
    node->parents.clear();
    node->backward_fn = nullptr;
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

double grad_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                  double fd_step) {
  if (fd_step <= 0.0) throw std::invalid_argument("grad_check: fd_step must be positive");
  if (inputs.empty()) return 0.0;
  for (const Tensor& in : inputs) {
    if (!in.requires_grad()) {
      throw std::invalid_argument("grad_check: every input must have requires_grad");
    }
  }

  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    auto g = in.grad();
    analytic.emplace_back(g.empty() ? std::vector<double>(in.size(), 0.0)
                                    : std::vector<double>(g.begin(), g.end()));
  }

  NoGradGuard no_grad;
  double max_err = 0.0;
  for (size_t p = 0; p < inputs.size(); ++p) {
    Tensor in = inputs[p];
    auto vals = in.mutable_data();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + fd_step;
      const double lp = loss_fn().value();
      vals[i] = orig - fd_step;
      const double lm = loss_fn().value();
      vals[i] = orig;
      const double numeric = (lp - lm) / (2.0 * fd_step);
      const double err = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace trajcast

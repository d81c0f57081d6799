#pragma once

// Dense row-major tensors with reverse-mode gradient recording.
//
// A Var is a handle to a graph node holding a value, a lazily allocated
// gradient, its parent nodes and a closure that pushes the node's gradient
// into its parents. Ops only record a closure when some input requires a
// gradient, so constant sub-expressions stay out of the graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "corrstn/error.hpp"

namespace corrstn::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_extents();
  }
  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_extents();
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                           std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  Tensor& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape(), 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var leaf(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Gradient accumulated so far (zeros if none).
  Tensor grad() const {
    if (node_->grad.numel() == node_->value.numel()) return node_->grad;
    return Tensor(node_->value.shape(), 0.0);
  }
  void zero_grad() {
    if (node_->grad.numel() == node_->value.numel()) node_->grad.fill(0.0);
  }

  /// Reverse pass from a scalar output with seed 1.
  void backward() const {
    if (numel() != 1) throw DimensionError("backward() without a seed needs a scalar output");
    backward(Tensor(shape(), 1.0));
  }

  void backward(const Tensor& seed) const {
    if (seed.shape() != shape()) throw DimensionError("backward seed shape mismatch");
    if (!requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    Tensor& g = node_->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward();
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Named trainable leaf.
struct Parameter {
  std::string name;
  Var var;

  Parameter() = default;
  Parameter(std::string n, Tensor init) : name(std::move(n)), var(Var::leaf(std::move(init))) {}

  const Shape& shape() const { return var.shape(); }
  Tensor& value() { return var.mutable_value(); }
  const Tensor& value() const { return var.value(); }
  Tensor grad() const { return var.grad(); }
  void zero_grad() { var.zero_grad(); }
};

namespace detail {

// Creates the output node; `backward` receives (output node) and is only
// attached when some input requires a gradient.
inline Var make_result(Tensor value, std::vector<Var> inputs,
                       std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  bool needs = false;
  for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (!needs) return out;
  Node* self = out.node();
  self->requires_grad = true;
  for (const auto& v : inputs) self->parents.push_back(v.ptr());
  self->backward = [self, fn = std::move(backward)]() {
    if (self->grad.numel() == self->value.numel()) fn(*self);
  };
  return out;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise ops

/// a + b where b equals a's shape or a trailing suffix of it (broadcast over
/// leading axes).
inline Var add(const Var& a, const Var& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return add(b, a);
    throw DimensionError("add: cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  }
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  Tensor out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % m];
  Node* an = a.node();
  Node* bn = b.node();
  return detail::make_result(std::move(out), {a, b}, [an, bn, n, m](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i % m] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw DimensionError("sub: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return detail::make_result(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Element-wise product of equal shapes.
inline Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return detail::make_result(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

inline Var mul_scalar(const Var& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
  Node* an = a.node();
  return detail::make_result(std::move(out), {a}, [an, s](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
  });
}

/// a scaled by element `index` of s (used for per-attribute mixing weights).
inline Var scale_by(const Var& a, const Var& s, std::size_t index = 0) {
  if (index >= s.numel()) throw DimensionError("scale_by: index out of range");
  const double k = s.value()[index];
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * k;
  Node* an = a.node();
  Node* sn = s.node();
  return detail::make_result(std::move(out), {a, s}, [an, sn, index, k](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * k;
    }
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * an->value[i];
      sn->grad_buffer()[index] += acc;
    }
  });
}

inline Var relu(const Var& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  Node* an = a.node();
  return detail::make_result(std::move(out), {a}, [an](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (an->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Node* an = a.node();
  return detail::make_result(Tensor({1}, std::vector<double>{s}), {a}, [an](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

inline Var mean(const Var& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// mean |pred - target|; the subgradient at zero is 0.
inline Var mae_loss(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mae_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const std::size_t n = pred.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(pred.value()[i] - target.value()[i]);
  Node* pn = pred.node();
  Node* tn = target.node();
  const double inv = 1.0 / static_cast<double>(n);
  return detail::make_result(Tensor({1}, std::vector<double>{s * inv}), {pred, target},
                             [pn, tn, n, inv](Node& self) {
                               const double g0 = self.grad[0] * inv;
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double d = pn->value[i] - tn->value[i];
                                 const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                                 if (pn->requires_grad) pn->grad_buffer()[i] += g0 * sg;
                                 if (tn->requires_grad) tn->grad_buffer()[i] -= g0 * sg;
                               }
                             });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(std::move(s));
  Node* an = a.node();
  return detail::make_result(std::move(out), {a}, [an](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each output flat index, the source flat index under permutation `perm`
// (output axis k reads input axis perm[k]).
inline std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& perm) {
  Shape out_shape(in.size());
  for (std::size_t k = 0; k < in.size(); ++k) out_shape[k] = in[perm[k]];
  const auto in_st = strides_of(in);
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t k = 0; k < in.size(); ++k) src += idx[k] * in_st[perm[k]];
    map[o] = src;
    for (std::size_t k = in.size(); k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  return map;
}

}  // namespace detail

inline Var permute(const Var& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  if (perm.size() != in.size()) throw DimensionError("permute: axis count mismatch");
  std::vector<bool> used(in.size(), false);
  for (std::size_t p : perm) {
    if (p >= in.size() || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(in.size());
  for (std::size_t k = 0; k < in.size(); ++k) out_shape[k] = in[perm[k]];
  auto map = std::make_shared<std::vector<std::size_t>>(detail::permutation_map(in, perm));
  Tensor out(out_shape);
  for (std::size_t o = 0; o < out.numel(); ++o) out[o] = a.value()[(*map)[o]];
  Node* an = a.node();
  return detail::make_result(std::move(out), {a}, [an, map](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t o = 0; o < map->size(); ++o) g[(*map)[o]] += self.grad[o];
  });
}

inline Var transpose_last2(const Var& a) {
  if (a.shape().size() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  std::vector<std::size_t> perm(a.shape().size());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, perm);
}

/// Concatenation along `axis`; all other extents must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != axis && s[k] != shape[k]) throw DimensionError("concat: extent mismatch");
    }
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t outer = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  std::size_t inner = 1;
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().data() + o * len * inner, len * inner,
                  out.data() + (o * total + off) * inner);
    }
    off += len;
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result(std::move(out), parts,
                             [nodes, offsets, outer, inner, total, axis](Node& self) {
                               for (std::size_t q = 0; q < nodes.size(); ++q) {
                                 Node* n = nodes[q];
                                 if (!n->requires_grad) continue;
                                 const std::size_t len = n->value.shape()[axis];
                                 auto& g = n->grad_buffer();
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   for (std::size_t r = 0; r < len * inner; ++r) {
                                     g[o * len * inner + r] += self.grad[(o * total + offsets[q]) * inner + r];
                                   }
                                 }
                               }
                             });
}

/// Elements [begin, end) along `axis`.
inline Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in = a.shape();
  if (axis >= in.size() || begin >= end || end > in[axis]) throw DimensionError("slice: bad range");
  Shape shape = in;
  shape[axis] = end - begin;
  std::size_t outer = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= in[k];
  std::size_t inner = 1;
  for (std::size_t k = axis + 1; k < in.size(); ++k) inner *= in[k];
  const std::size_t full = in[axis];
  const std::size_t len = end - begin;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  Node* an = a.node();
  return detail::make_result(std::move(out), {a}, [an, outer, inner, full, len, begin](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < len * inner; ++r) g[(o * full + begin) * inner + r] += self.grad[o * len * inner + r];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products

/// Batched matrix product over the last two axes. Leading (batch) axes must
/// match, or one operand may be a plain matrix shared by every batch.
inline Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t k2 = bs[bs.size() - 2];
  const std::size_t n = bs[bs.size() - 1];
  if (k != k2) throw DimensionError("matmul: inner extents " + shape_str(as) + " x " + shape_str(bs));
  Shape a_batch(as.begin(), as.end() - 2);
  Shape b_batch(bs.begin(), bs.end() - 2);
  Shape batch;
  if (a_batch == b_batch || b_batch.empty()) batch = a_batch;
  else if (a_batch.empty()) batch = b_batch;
  else throw DimensionError("matmul: batch extents " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t nb = shape_numel(batch);
  const std::size_t a_step = a_batch.empty() ? 0 : m * k;
  const std::size_t b_step = b_batch.empty() ? 0 : k * n;
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const double* ap = a.value().data();
  const double* bp = b.value().data();
  double* op = out.data();
  for (std::size_t q = 0; q < nb; ++q) {
    const double* A = ap + q * a_step;
    const double* B = bp + q * b_step;
    double* O = op + q * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) O[i * n + j] += av * B[p * n + j];
      }
    }
  }
  Node* an = a.node();
  Node* bn = b.node();
  return detail::make_result(std::move(out), {a, b}, [an, bn, nb, m, k, n, a_step, b_step](Node& self) {
    const double* G = self.grad.data();
    if (an->requires_grad) {
      double* gA = an->grad_buffer().data();
      const double* B = bn->value.data();
      for (std::size_t q = 0; q < nb; ++q) {
        // dA = dO * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[q * m * n + i * n + j] * B[q * b_step + p * n + j];
            gA[q * a_step + i * k + p] += acc;
          }
        }
      }
    }
    if (bn->requires_grad) {
      double* gB = bn->grad_buffer().data();
      const double* A = an->value.data();
      for (std::size_t q = 0; q < nb; ++q) {
        // dB = A^T * dO
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t i = 0; i < m; ++i) {
            const double av = A[q * a_step + i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gB[q * b_step + p * n + j] += av * G[q * m * n + i * n + j];
          }
        }
      }
    }
  });
}

/// x W + b with W of shape [in, out] and b of shape [out].
inline Var linear(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }

inline Var linear(const Var& x, const Var& w) { return matmul(x, w); }

// ---------------------------------------------------------------------------
// Normalization

/// Softmax over the last axis. With `causal`, the last two axes are read as
/// [query, key] and keys after the query position receive probability 0.
inline Var softmax(const Var& a, bool causal = false) {
  const Shape& s = a.shape();
  const std::size_t cols = s.back();
  const std::size_t rows = a.numel() / cols;
  std::size_t q_len = 1;
  if (causal) {
    if (s.size() < 2) throw DimensionError("causal softmax needs rank >= 2");
    q_len = s[s.size() - 2];
  }
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = causal ? std::min(cols, (r % q_len) + 1) : cols;
    const double* in = a.value().data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < visible; ++j) o[j] /= z;
  }
  Node* an = a.node();
  return detail::make_result(std::move(out), {a}, [an, rows, cols](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (gy[j] - dot);
    }
  });
}

/// Layer normalization over the last axis followed by gamma * x + beta.
inline Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const std::size_t d = a.shape().back();
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine width mismatch");
  const std::size_t rows = a.numel() / d;
  Tensor out(a.shape());
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  Node* an = a.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  return detail::make_result(std::move(out), {a, gamma, beta}, [an, gn, bn, xhat, inv_std, rows, d](Node& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = self.grad.data() + r * d;
      const double* h = xhat->data() + r * d;
      if (gn->requires_grad) {
        auto& gg = gn->grad_buffer();
        for (std::size_t j = 0; j < d; ++j) gg[j] += gy[j] * h[j];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t j = 0; j < d; ++j) gb[j] += gy[j];
      }
      if (an->requires_grad) {
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gy[j] * gn->value[j];
          m1 += dh;
          m2 += dh * h[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        auto& ga = an->grad_buffer();
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gy[j] * gn->value[j];
          ga[r * d + j] += (*inv_std)[r] * (dh - m1 - h[j] * m2);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Temporal convolution

/// 1-D convolution along the second-to-last axis of x [..., L, d_in] with
/// kernel w [k, d_in, d_out] and bias b [d_out]. Output keeps length L:
/// centered zero padding, or left-only padding when `causal`.
inline Var conv1d_temporal(const Var& x, const Var& w, const Var& b, bool causal = false) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() < 2 || ws.size() != 3) throw DimensionError("conv1d_temporal: bad ranks");
  const std::size_t len = xs[xs.size() - 2];
  const std::size_t din = xs.back();
  const std::size_t k = ws[0];
  const std::size_t dout = ws[2];
  if (ws[1] != din) throw DimensionError("conv1d_temporal: input width mismatch");
  if (b.numel() != dout) throw DimensionError("conv1d_temporal: bias width mismatch");
  const std::size_t pad = causal ? k - 1 : (k - 1) / 2;
  const std::size_t seqs = x.numel() / (len * din);
  Shape os = xs;
  os.back() = dout;
  Tensor out(os);
  const double* X = x.value().data();
  const double* W = w.value().data();
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t l = 0; l < len; ++l) {
      double* o = out.data() + (s * len + l) * dout;
      for (std::size_t j = 0; j < dout; ++j) o[j] = b.value()[j];
      for (std::size_t t = 0; t < k; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + t) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* xi = X + (s * len + static_cast<std::size_t>(src)) * din;
        for (std::size_t i = 0; i < din; ++i) {
          const double xv = xi[i];
          const double* wr = W + (t * din + i) * dout;
          for (std::size_t j = 0; j < dout; ++j) o[j] += xv * wr[j];
        }
      }
    }
  }
  Node* xn = x.node();
  Node* wn = w.node();
  Node* bn = b.node();
  return detail::make_result(std::move(out), {x, w, b}, [xn, wn, bn, seqs, len, din, dout, k, pad](Node& self) {
    const double* G = self.grad.data();
    const double* X = xn->value.data();
    const double* W = wn->value.data();
    double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
    double* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
    double* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
    for (std::size_t s = 0; s < seqs; ++s) {
      for (std::size_t l = 0; l < len; ++l) {
        const double* go = G + (s * len + l) * dout;
        if (gb) {
          for (std::size_t j = 0; j < dout; ++j) gb[j] += go[j];
        }
        for (std::size_t t = 0; t < k; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + t) - static_cast<std::ptrdiff_t>(pad);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t xrow = (s * len + static_cast<std::size_t>(src)) * din;
          for (std::size_t i = 0; i < din; ++i) {
            const double* wr = W + (t * din + i) * dout;
            double acc = 0.0;
            for (std::size_t j = 0; j < dout; ++j) {
              acc += go[j] * wr[j];
              if (gw) gw[(t * din + i) * dout + j] += X[xrow + i] * go[j];
            }
            if (gx) gx[xrow + i] += acc;
          }
        }
      }
    }
  });
}

}  // namespace corrstn::nn

// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "beamclean/tensor.hpp"

namespace beamclean::ad {

// Define-by-run reverse-mode autodiff. Every op returns a Var holding the
// computed value; when grad mode is on and an input requires grad, the op
// also records its parents and a backprop closure. backward() walks the
// recorded graph in reverse creation order.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  int64_t id = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  void accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = Tensor(value.shape());
      has_grad = true;
    }
    grad.add_scaled(g, 1.0);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII guard disabling graph recording (inference / finite differences).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

namespace detail {
inline int64_t next_id() {
  thread_local int64_t id = 0;
  return ++id;
}
}  // namespace detail

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = detail::next_id();
  return n;
}

/// Trainable leaf (model parameter).
inline Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->id = detail::next_id();
  return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = detail::next_id();
  if (grad_mode()) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
  }
  return n;
}

/// Iteratively clears parent links so deep graphs never unwind recursively.
inline void release_graph(const Var& root) {
  if (!root) return;
  std::vector<Var> stack{root};
  while (!stack.empty()) {
    Var n = stack.back();
    stack.pop_back();
    for (auto& p : n->parents) stack.push_back(std::move(p));
    n->parents.clear();
    n->backprop = nullptr;
  }
}

/// Reverse pass from a scalar root. Releases the graph afterwards.
inline void backward(const Var& root) {
  check(root->value.numel() == 1, "backward: root must be scalar, got ",
        shape_str(root->value.shape()));
  check(root->requires_grad, "backward: root does not require grad (no-grad graph?)");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  root->accumulate(Tensor::full({1}, 1.0));
  for (Node* n : order)
    if (n->backprop) n->backprop(*n);
  release_graph(root);
}

inline void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    p->has_grad = false;
    p->grad = Tensor();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch ", shape_str(a->value.shape()),
        " vs ", shape_str(b->value.shape()));
  Tensor out = a->value;
  out.add_scaled(b->value, 1.0);
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    a->accumulate(n.grad);
    b->accumulate(n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out = a->value;
  out.add_scaled(b->value, -1.0);
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    a->accumulate(n.grad);
    Tensor gb = n.grad;
    for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
    b->accumulate(gb);
  });
}

inline Var mul(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    Tensor ga = n.grad;
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= b->value[i];
    a->accumulate(ga);
    Tensor gb = n.grad;
    for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= a->value[i];
    b->accumulate(gb);
  });
}

inline Var div(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "div: shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    Tensor ga = n.grad;
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] /= b->value[i];
    a->accumulate(ga);
    Tensor gb = n.grad;
    for (int64_t i = 0; i < gb.numel(); ++i)
      gb[i] *= -a->value[i] / (b->value[i] * b->value[i]);
    b->accumulate(gb);
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_op(std::move(out), {a}, [a, s](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
    a->accumulate(g);
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make_op(std::move(out), {a}, [a](Node& n) { a->accumulate(n.grad); });
}

inline Var reciprocal(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / out[i];
  Tensor y = out;
  return make_op(std::move(out), {a}, [a, y](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= -y[i] * y[i];
    a->accumulate(g);
  });
}

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] <= 0.0) g[i] = 0.0;
    a->accumulate(g);
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor y = out;
  return make_op(std::move(out), {a}, [a, y](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= y[i] * (1.0 - y[i]);
    a->accumulate(g);
  });
}

inline Var tanh_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  Tensor y = out;
  return make_op(std::move(out), {a}, [a, y](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= 1.0 - y[i] * y[i];
    a->accumulate(g);
  });
}

inline Var exp_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  Tensor y = out;
  return make_op(std::move(out), {a}, [a, y](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= y[i];
    a->accumulate(g);
  });
}

inline Var log_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] /= a->value[i];
    a->accumulate(g);
  });
}

/// Gradient passes only strictly inside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], lo, hi);
  return make_op(std::move(out), {a}, [a, lo, hi](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] <= lo || a->value[i] >= hi) g[i] = 0.0;
    a->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Broadcast helpers (last-dim vectors, scalar Vars)
// ---------------------------------------------------------------------------

/// x[..., D] + v[D], broadcast over leading dims.
inline Var add_last(const Var& x, const Var& v) {
  const int64_t d = v->value.numel();
  check(x->value.ndim() >= 1 && x->value.dim(x->value.ndim() - 1) == d,
        "add_last: last dim of ", shape_str(x->value.shape()), " vs vector ", d);
  const int64_t rows = x->value.numel() / d;
  Tensor out = x->value;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[r * d + j] += v->value[j];
  return make_op(std::move(out), {x, v}, [x, v, rows, d](Node& n) {
    x->accumulate(n.grad);
    Tensor gv(v->value.shape());
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) gv[j] += n.grad[r * d + j];
    v->accumulate(gv);
  });
}

/// x[..., D] * v[D], broadcast over leading dims.
inline Var mul_last(const Var& x, const Var& v) {
  const int64_t d = v->value.numel();
  check(x->value.ndim() >= 1 && x->value.dim(x->value.ndim() - 1) == d,
        "mul_last: last dim of ", shape_str(x->value.shape()), " vs vector ", d);
  const int64_t rows = x->value.numel() / d;
  Tensor out = x->value;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[r * d + j] *= v->value[j];
  return make_op(std::move(out), {x, v}, [x, v, rows, d](Node& n) {
    Tensor gx = n.grad;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) gx[r * d + j] *= v->value[j];
    x->accumulate(gx);
    Tensor gv(v->value.shape());
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) gv[j] += n.grad[r * d + j] * x->value[r * d + j];
    v->accumulate(gv);
  });
}

/// x * s where s is a scalar Var.
inline Var mul_scalar_var(const Var& x, const Var& s) {
  check(s->value.numel() == 1, "mul_scalar_var: s must be scalar");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
  return make_op(std::move(out), {x, s}, [x, s, sv](Node& n) {
    Tensor gx = n.grad;
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] *= sv;
    x->accumulate(gx);
    s->accumulate(Tensor::scalar(n.grad.dot(x->value)));
  });
}

/// x - s (scalar Var broadcast over all elements).
inline Var sub_scalar_var(const Var& x, const Var& s) {
  check(s->value.numel() == 1, "sub_scalar_var: s must be scalar");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= sv;
  return make_op(std::move(out), {x, s}, [x, s](Node& n) {
    x->accumulate(n.grad);
    s->accumulate(Tensor::scalar(-n.grad.sum()));
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x->value.sum());
  return make_op(std::move(out), {x}, [x](Node& n) {
    Tensor g = Tensor::full(x->value.shape(), n.grad[0]);
    x->accumulate(g);
  });
}

inline Var mean_all(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x->value.numel());
  Tensor out = Tensor::scalar(x->value.sum() * inv);
  return make_op(std::move(out), {x}, [x, inv](Node& n) {
    Tensor g = Tensor::full(x->value.shape(), n.grad[0] * inv);
    x->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(shape);
  return make_op(std::move(out), {x}, [x](Node& n) {
    x->accumulate(n.grad.reshaped(x->value.shape()));
  });
}

namespace detail {
inline Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm) {
  const int nd = static_cast<int>(t.ndim());
  check(static_cast<int>(perm.size()) == nd, "permute: rank mismatch");
  Shape out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = t.dim(perm[static_cast<size_t>(i)]);
  Tensor out(out_shape);
  std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * t.dim(i + 1);
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  for (int64_t o = 0; o < out.numel(); ++o) {
    int64_t src = 0;
    for (int i = 0; i < nd; ++i)
      src += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    out[o] = t[src];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  return out;
}
}  // namespace detail

inline Var permute(const Var& x, std::vector<int> perm) {
  Tensor out = detail::permute_tensor(x->value, perm);
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  return make_op(std::move(out), {x}, [x, inv](Node& n) {
    x->accumulate(detail::permute_tensor(n.grad, inv));
  });
}

/// Slice `len` entries starting at `start` along `dim`.
inline Var narrow(const Var& x, int dim, int64_t start, int64_t len) {
  const Shape& s = x->value.shape();
  check(dim >= 0 && dim < static_cast<int>(s.size()), "narrow: bad dim");
  check(start >= 0 && start + len <= s[static_cast<size_t>(dim)], "narrow: slice [", start, ",",
        start + len, ") out of dim ", s[static_cast<size_t>(dim)]);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(dim) + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t d = s[static_cast<size_t>(dim)];
  Shape out_shape = s;
  out_shape[static_cast<size_t>(dim)] = len;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy_n(x->value.data() + (o * d + start + j) * inner, inner,
                  out.data() + (o * len + j) * inner);
  return make_op(std::move(out), {x}, [x, dim, start, len, outer, inner, d](Node& n) {
    Tensor g(x->value.shape());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < len; ++j)
        std::copy_n(n.grad.data() + (o * len + j) * inner, inner,
                    g.data() + (o * d + start + j) * inner);
    x->accumulate(g);
  });
}

/// Concatenate along `dim`; all other dims must agree.
inline Var concat(const std::vector<Var>& parts, int dim) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0]->value.shape();
  const int nd = static_cast<int>(s0.size());
  check(dim >= 0 && dim < nd, "concat: bad dim");
  int64_t total = 0;
  for (const auto& p : parts) {
    check(p->value.ndim() == nd, "concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != dim)
        check(p->value.dim(i) == s0[static_cast<size_t>(i)], "concat: dim ", i, " mismatch");
    total += p->value.dim(dim);
  }
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(dim)] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s0[static_cast<size_t>(i)];
  for (int i = dim + 1; i < nd; ++i) inner *= s0[static_cast<size_t>(i)];
  Tensor out(out_shape);
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t d = p->value.dim(dim);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p->value.data() + o * d * inner, d * inner,
                  out.data() + (o * total + offset) * inner);
    offset += d;
  }
  std::vector<Var> parents = parts;
  return make_op(std::move(out), parents, [parents, dim, outer, inner, total](Node& n) {
    int64_t off = 0;
    for (const auto& p : parents) {
      const int64_t d = p->value.dim(dim);
      Tensor g(p->value.shape());
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(n.grad.data() + (o * total + off) * inner, d * inner, g.data() + o * d * inner);
      p->accumulate(g);
      off += d;
    }
  });
}

/// Zero-pad along `dim`.
inline Var pad_dim(const Var& x, int dim, int64_t before, int64_t after) {
  if (before == 0 && after == 0) return x;
  const Shape& s = x->value.shape();
  const int nd = static_cast<int>(s.size());
  check(dim >= 0 && dim < nd && before >= 0 && after >= 0, "pad_dim: bad args");
  Shape out_shape = s;
  out_shape[static_cast<size_t>(dim)] += before + after;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = dim + 1; i < nd; ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t d = s[static_cast<size_t>(dim)];
  const int64_t dt = out_shape[static_cast<size_t>(dim)];
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x->value.data() + o * d * inner, d * inner, out.data() + (o * dt + before) * inner);
  return make_op(std::move(out), {x}, [x, before, d, dt, outer, inner](Node& n) {
    Tensor g(x->value.shape());
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(n.grad.data() + (o * dt + before) * inner, d * inner, g.data() + o * d * inner);
    x->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  check(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(0), "matmul: bad shapes ",
        shape_str(av.shape()), " * ", shape_str(bv.shape()));
  const int64_t m = av.dim(0), k = av.dim(1), p = bv.dim(1);
  Tensor out({m, p});
  out.mat(m, p).noalias() = av.mat(m, k) * bv.mat(k, p);
  return make_op(std::move(out), {a, b}, [a, b, m, k, p](Node& n) {
    if (a->requires_grad) {
      Tensor ga({m, k});
      ga.mat(m, k).noalias() = n.grad.mat(m, p) * b->value.mat(k, p).transpose();
      a->accumulate(ga);
    }
    if (b->requires_grad) {
      Tensor gb({k, p});
      gb.mat(k, p).noalias() = a->value.mat(m, k).transpose() * n.grad.mat(m, p);
      b->accumulate(gb);
    }
  });
}

/// Batched matmul over the leading dim; optionally B is transposed per batch.
inline Var bmm(const Var& a, const Var& b, bool trans_b = false) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  check(av.ndim() == 3 && bv.ndim() == 3 && av.dim(0) == bv.dim(0), "bmm: bad batch dims");
  const int64_t nb = av.dim(0), m = av.dim(1), k = av.dim(2);
  const int64_t p = trans_b ? bv.dim(1) : bv.dim(2);
  check(trans_b ? bv.dim(2) == k : bv.dim(1) == k, "bmm: inner dim mismatch");
  Tensor out({nb, m, p});
  for (int64_t i = 0; i < nb; ++i) {
    Tensor::ConstMatMap am(av.data() + i * m * k, m, k);
    Tensor::MatMap om(out.data() + i * m * p, m, p);
    if (trans_b) {
      Tensor::ConstMatMap bm(bv.data() + i * p * k, p, k);
      om.noalias() = am * bm.transpose();
    } else {
      Tensor::ConstMatMap bm(bv.data() + i * k * p, k, p);
      om.noalias() = am * bm;
    }
  }
  return make_op(std::move(out), {a, b}, [a, b, nb, m, k, p, trans_b](Node& n) {
    if (a->requires_grad) {
      Tensor ga({nb, m, k});
      for (int64_t i = 0; i < nb; ++i) {
        Tensor::ConstMatMap gm(n.grad.data() + i * m * p, m, p);
        Tensor::MatMap gam(ga.data() + i * m * k, m, k);
        if (trans_b) {
          Tensor::ConstMatMap bm(b->value.data() + i * p * k, p, k);
          gam.noalias() = gm * bm;
        } else {
          Tensor::ConstMatMap bm(b->value.data() + i * k * p, k, p);
          gam.noalias() = gm * bm.transpose();
        }
      }
      a->accumulate(ga);
    }
    if (b->requires_grad) {
      Tensor gb(b->value.shape());
      for (int64_t i = 0; i < nb; ++i) {
        Tensor::ConstMatMap am(a->value.data() + i * m * k, m, k);
        Tensor::ConstMatMap gm(n.grad.data() + i * m * p, m, p);
        if (trans_b) {
          Tensor::MatMap gbm(gb.data() + i * p * k, p, k);
          gbm.noalias() = gm.transpose() * am;
        } else {
          Tensor::MatMap gbm(gb.data() + i * k * p, k, p);
          gbm.noalias() = am.transpose() * gm;
        }
      }
      b->accumulate(gb);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

/// Softmax over the last dim.
inline Var softmax_last(const Var& x) {
  const int64_t d = x->value.dim(x->value.ndim() - 1);
  const int64_t rows = x->value.numel() / d;
  Tensor out = x->value;
  for (int64_t r = 0; r < rows; ++r) {
    double mx = -1e300;
    for (int64_t j = 0; j < d; ++j) mx = std::max(mx, out[r * d + j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      out[r * d + j] = std::exp(out[r * d + j] - mx);
      sum += out[r * d + j];
    }
    for (int64_t j = 0; j < d; ++j) out[r * d + j] /= sum;
  }
  Tensor y = out;
  return make_op(std::move(out), {x}, [x, y, rows, d](Node& n) {
    Tensor g(x->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += n.grad[r * d + j] * y[r * d + j];
      for (int64_t j = 0; j < d; ++j)
        g[r * d + j] = (n.grad[r * d + j] - dot) * y[r * d + j];
    }
    x->accumulate(g);
  });
}

/// Layer normalization over the last dim with affine parameters.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const int64_t d = gamma->value.numel();
  check(beta->value.numel() == d, "layer_norm: gamma/beta size mismatch");
  check(x->value.dim(x->value.ndim() - 1) == d, "layer_norm: last dim ",
        shape_str(x->value.shape()), " vs ", d);
  const int64_t rows = x->value.numel() / d;
  Tensor xhat(x->value.shape());
  Tensor inv_std({rows});
  Tensor out(x->value.shape());
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += x->value[r * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = x->value[r * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (x->value[r * d + j] - mean) * is;
      out[r * d + j] = gamma->value[j] * xhat[r * d + j] + beta->value[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, rows, d](Node& n) {
    if (gamma->requires_grad) {
      Tensor gg(gamma->value.shape());
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) gg[j] += n.grad[r * d + j] * xhat[r * d + j];
      gamma->accumulate(gg);
    }
    if (beta->requires_grad) {
      Tensor gb(beta->value.shape());
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) gb[j] += n.grad[r * d + j];
      beta->accumulate(gb);
    }
    if (x->requires_grad) {
      Tensor gx(x->value.shape());
      for (int64_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double dxh = n.grad[r * d + j] * gamma->value[j];
          m1 += dxh;
          m2 += dxh * xhat[r * d + j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) {
          const double dxh = n.grad[r * d + j] * gamma->value[j];
          gx[r * d + j] = (dxh - m1 - xhat[r * d + j] * m2) * inv_std[r];
        }
      }
      x->accumulate(gx);
    }
  });
}

// ---------------------------------------------------------------------------
// Framing ops (linear, exact adjoints of each other)
// ---------------------------------------------------------------------------

/// x[B,T] -> frames [B,N,L] every `hop` samples after `pad` zeros per side.
inline Var segment_rows(const Var& x, int64_t frame_len, int64_t hop, int64_t pad) {
  const Tensor& xv = x->value;
  check(xv.ndim() == 2, "segment_rows: expected [B,T], got ", shape_str(xv.shape()));
  check(frame_len > 0 && hop > 0 && pad >= 0, "segment_rows: bad framing args");
  const int64_t bsz = xv.dim(0), t = xv.dim(1);
  const int64_t padded = t + 2 * pad;
  check(padded >= frame_len, "segment_rows: signal too short for frame_len");
  const int64_t n = 1 + (padded - frame_len) / hop;
  Tensor out({bsz, n, frame_len});
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < n; ++i) {
      const int64_t start = i * hop - pad;
      for (int64_t k = 0; k < frame_len; ++k) {
        const int64_t src = start + k;
        if (src >= 0 && src < t) out.at(b, i, k) = xv.at(b, src);
      }
    }
  return make_op(std::move(out), {x}, [x, bsz, t, n, frame_len, hop, pad](Node& nd) {
    Tensor g({bsz, t});
    for (int64_t b = 0; b < bsz; ++b)
      for (int64_t i = 0; i < n; ++i) {
        const int64_t start = i * hop - pad;
        for (int64_t k = 0; k < frame_len; ++k) {
          const int64_t src = start + k;
          if (src >= 0 && src < t) g.at(b, src) += nd.grad.at(b, i, k);
        }
      }
    x->accumulate(g);
  });
}

/// frames [B,N,L] -> x[B,(N-1)*hop+L] by summation at hop offsets.
inline Var overlap_add_rows(const Var& f, int64_t hop) {
  const Tensor& fv = f->value;
  check(fv.ndim() == 3, "overlap_add_rows: expected [B,N,L]");
  check(hop > 0, "overlap_add_rows: hop must be positive");
  const int64_t bsz = fv.dim(0), n = fv.dim(1), l = fv.dim(2);
  const int64_t t = (n - 1) * hop + l;
  Tensor out({bsz, t});
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t k = 0; k < l; ++k) out.at(b, i * hop + k) += fv.at(b, i, k);
  return make_op(std::move(out), {f}, [f, bsz, n, l, hop](Node& nd) {
    Tensor g({bsz, n, l});
    for (int64_t b = 0; b < bsz; ++b)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < l; ++k) g.at(b, i, k) = nd.grad.at(b, i * hop + k);
    f->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Feature ops
// ---------------------------------------------------------------------------

/// Row-wise cosine similarity of a[B,F] and b[B,F] -> [B].
/// Zero-norm rows produce 0 with zero gradient.
inline Var ncc_rows(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  check(av.ndim() == 2 && av.same_shape(bv), "ncc_rows: need matching [B,F]");
  const int64_t bsz = av.dim(0), f = av.dim(1);
  Tensor out({bsz});
  Tensor na({bsz}), nb({bsz}), dt({bsz});
  for (int64_t r = 0; r < bsz; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (int64_t j = 0; j < f; ++j) {
      dot += av.at(r, j) * bv.at(r, j);
      sa += av.at(r, j) * av.at(r, j);
      sb += bv.at(r, j) * bv.at(r, j);
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    dt[r] = dot;
    out[r] = (sa == 0.0 || sb == 0.0) ? 0.0 : dot / (na[r] * nb[r]);
  }
  Tensor rho = out;
  return make_op(std::move(out), {a, b}, [a, b, na, nb, dt, rho, bsz, f](Node& n) {
    Tensor ga(a->value.shape());
    Tensor gb(b->value.shape());
    for (int64_t r = 0; r < bsz; ++r) {
      if (na[r] == 0.0 || nb[r] == 0.0) continue;
      const double g = n.grad[r];
      const double inv = 1.0 / (na[r] * nb[r]);
      for (int64_t j = 0; j < f; ++j) {
        ga.at(r, j) = g * (b->value.at(r, j) * inv - rho[r] * a->value.at(r, j) / (na[r] * na[r]));
        gb.at(r, j) = g * (a->value.at(r, j) * inv - rho[r] * b->value.at(r, j) / (nb[r] * nb[r]));
      }
    }
    if (a->requires_grad) a->accumulate(ga);
    if (b->requires_grad) b->accumulate(gb);
  });
}

/// Adaptive average pooling of the last dim into `groups` bins.
inline Var avg_pool_last(const Var& x, int64_t groups) {
  const int64_t d = x->value.dim(x->value.ndim() - 1);
  check(groups > 0 && groups <= d, "avg_pool_last: bad group count");
  const int64_t rows = x->value.numel() / d;
  Shape out_shape = x->value.shape();
  out_shape.back() = groups;
  Tensor out(out_shape);
  std::vector<int64_t> lo(static_cast<size_t>(groups)), hi(static_cast<size_t>(groups));
  for (int64_t g = 0; g < groups; ++g) {
    lo[static_cast<size_t>(g)] = g * d / groups;
    hi[static_cast<size_t>(g)] = (g + 1) * d / groups;
  }
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t g = 0; g < groups; ++g) {
      double s = 0.0;
      for (int64_t j = lo[static_cast<size_t>(g)]; j < hi[static_cast<size_t>(g)]; ++j)
        s += x->value[r * d + j];
      out[r * groups + g] = s / static_cast<double>(hi[static_cast<size_t>(g)] - lo[static_cast<size_t>(g)]);
    }
  return make_op(std::move(out), {x}, [x, rows, d, groups, lo, hi](Node& n) {
    Tensor g(x->value.shape());
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t gi = 0; gi < groups; ++gi) {
        const double w = 1.0 / static_cast<double>(hi[static_cast<size_t>(gi)] - lo[static_cast<size_t>(gi)]);
        for (int64_t j = lo[static_cast<size_t>(gi)]; j < hi[static_cast<size_t>(gi)]; ++j)
          g[r * d + j] += n.grad[r * groups + gi] * w;
      }
    x->accumulate(g);
  });
}

}  // namespace beamclean::ad

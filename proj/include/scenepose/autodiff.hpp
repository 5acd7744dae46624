#pragma once

// Reverse-mode automatic differentiation on a dynamically built tape.
// Every op creates a Node holding its value and a closure that scatters the
// node's gradient into its parents. Graphs are built per sample; parameter
// nodes persist across graphs and accumulate gradients until an optimizer
// step consumes them.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "scenepose/tensor.hpp"

namespace scenepose {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool needs_grad = false;

  void ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
  }
  void accumulate(const Tensor& g) {
    ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
  }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

inline Var make_param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->needs_grad = true;
  return n;
}

namespace detail {

inline Var make_node(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->needs_grad) n->needs_grad = true;
  n->parents = std::move(parents);
  return n;
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar root.
inline void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  // Post-order DFS, then replay in reverse.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->needs_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] += b->value.data[i];
  Var out = detail::make_node(std::move(v), {a, b});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), pb = b.get()](Node& n) {
      if (pa->needs_grad) pa->accumulate(n.grad);
      if (pb->needs_grad) pb->accumulate(n.grad);
    };
  return out;
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] -= b->value.data[i];
  Var out = detail::make_node(std::move(v), {a, b});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), pb = b.get()](Node& n) {
      if (pa->needs_grad) pa->accumulate(n.grad);
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i) pb->grad.data[i] -= n.grad.data[i];
      }
    };
  return out;
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] *= b->value.data[i];
  Var out = detail::make_node(std::move(v), {a, b});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), pb = b.get()](Node& n) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i)
          pa->grad.data[i] += n.grad.data[i] * pb->value.data[i];
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i)
          pb->grad.data[i] += n.grad.data[i] * pa->value.data[i];
      }
    };
  return out;
}

/// k * x + c, elementwise with scalar constants.
inline Var affine(const Var& a, double k, double c) {
  Tensor v = a->value;
  for (double& x : v.data) x = k * x + c;
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), k](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) pa->grad.data[i] += k * n.grad.data[i];
    };
  return out;
}

/// x + t for a constant tensor t of the same shape.
inline Var add_const(const Var& a, const Tensor& t) {
  if (!a->value.same_shape(t)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] += t.data[i];
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) { pa->accumulate(n.grad); };
  return out;
}

inline Var relu(const Var& a) {
  Tensor v = a->value;
  for (double& x : v.data) x = x > 0.0 ? x : 0.0;
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i)
        if (pa->value.data[i] > 0.0) pa->grad.data[i] += n.grad.data[i];
    };
  return out;
}

inline Var vtanh(const Var& a) {
  Tensor v = a->value;
  for (double& x : v.data) x = std::tanh(x);
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) {
        const double y = n.value.data[i];
        pa->grad.data[i] += n.grad.data[i] * (1.0 - y * y);
      }
    };
  return out;
}

inline Var vsigmoid(const Var& a) {
  Tensor v = a->value;
  for (double& x : v.data) x = 1.0 / (1.0 + std::exp(-x));
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) {
        const double y = n.value.data[i];
        pa->grad.data[i] += n.grad.data[i] * y * (1.0 - y);
      }
    };
  return out;
}

inline Var vlog(const Var& a) {
  Tensor v = a->value;
  for (double& x : v.data) x = std::log(x);
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i)
        pa->grad.data[i] += n.grad.data[i] / pa->value.data[i];
    };
  return out;
}

/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
inline Var clip(const Var& a, double lo, double hi) {
  Tensor v = a->value;
  for (double& x : v.data) x = std::min(std::max(x, lo), hi);
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), lo, hi](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) {
        const double x = pa->value.data[i];
        if (x > lo && x < hi) pa->grad.data[i] += n.grad.data[i];
      }
    };
  return out;
}

/// Value copy with the gradient path severed.
inline Var detach(const Var& a) { return constant(a->value); }

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double x : a->value.data) acc += x;
  Tensor v({1, 1});
  v.data[0] = acc;
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) {
      pa->ensure_grad();
      const double g = n.grad.data[0];
      for (double& d : pa->grad.data) d += g;
    };
  return out;
}

inline Var mean(const Var& a) { return affine(sum(a), 1.0 / a->value.numel(), 0.0); }

inline Var reshape(const Var& a, std::vector<int> shape) {
  Tensor v(shape);
  if (v.numel() != a->value.numel()) throw std::invalid_argument("reshape: element count mismatch");
  v.data = a->value.data;
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& n) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) pa->grad.data[i] += n.grad.data[i];
    };
  return out;
}

/// Concatenate rank-2 tensors along columns (equal row counts).
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int rows = parts[0]->value.dim(0);
  int cols = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != 2 || p->value.dim(0) != rows)
      throw std::invalid_argument("concat_cols: incompatible shapes");
    cols += p->value.dim(1);
  }
  Tensor v({rows, cols});
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p->value.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pc; ++c) v(r, off + c) = p->value(r, c);
    off += pc;
  }
  Var out = detail::make_node(std::move(v), parts);
  if (out->needs_grad)
    out->backward_fn = [](Node& n) {
      const int rows = n.value.dim(0);
      int off = 0;
      for (const auto& p : n.parents) {
        const int pc = p->value.dim(1);
        if (p->needs_grad) {
          p->ensure_grad();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < pc; ++c) p->grad(r, c) += n.grad(r, off + c);
        }
        off += pc;
      }
    };
  return out;
}

inline Var col_slice(const Var& a, int c0, int c1) {
  if (a->value.rank() != 2 || c0 < 0 || c1 > a->value.dim(1) || c0 >= c1)
    throw std::invalid_argument("col_slice: bad range");
  const int rows = a->value.dim(0);
  Tensor v({rows, c1 - c0});
  for (int r = 0; r < rows; ++r)
    for (int c = c0; c < c1; ++c) v(r, c - c0) = a->value(r, c);
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), c0](Node& n) {
      pa->ensure_grad();
      for (int r = 0; r < n.value.dim(0); ++r)
        for (int c = 0; c < n.value.dim(1); ++c) pa->grad(r, c0 + c) += n.grad(r, c);
    };
  return out;
}

inline Var row_slice(const Var& a, int r0, int r1) {
  if (a->value.rank() != 2 || r0 < 0 || r1 > a->value.dim(0) || r0 >= r1)
    throw std::invalid_argument("row_slice: bad range");
  const int cols = a->value.dim(1);
  Tensor v({r1 - r0, cols});
  for (int r = r0; r < r1; ++r)
    for (int c = 0; c < cols; ++c) v(r - r0, c) = a->value(r, c);
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), r0](Node& n) {
      pa->ensure_grad();
      for (int r = 0; r < n.value.dim(0); ++r)
        for (int c = 0; c < n.value.dim(1); ++c) pa->grad(r0 + r, c) += n.grad(r, c);
    };
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false) {
  Tensor v = matmul_raw(a->value, trans_a, b->value, trans_b);
  Var out = detail::make_node(std::move(v), {a, b});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), pb = b.get(), trans_a, trans_b](Node& n) {
      if (pa->needs_grad) {
        Tensor da = trans_a ? (trans_b ? matmul_raw(n.parents[1]->value, true, n.grad, true)
                                       : matmul_raw(n.parents[1]->value, false, n.grad, true))
                            : (trans_b ? matmul_raw(n.grad, false, n.parents[1]->value, false)
                                       : matmul_raw(n.grad, false, n.parents[1]->value, true));
        pa->accumulate(da);
      }
      if (pb->needs_grad) {
        Tensor db = trans_b ? (trans_a ? matmul_raw(n.grad, true, n.parents[0]->value, true)
                                       : matmul_raw(n.grad, true, n.parents[0]->value, false))
                            : (trans_a ? matmul_raw(n.parents[0]->value, false, n.grad, false)
                                       : matmul_raw(n.parents[0]->value, true, n.grad, false));
        pb->accumulate(db);
      }
    };
  return out;
}

/// mat {m,n} + row {1,n}, broadcast over rows.
inline Var add_row_broadcast(const Var& mat, const Var& row) {
  if (mat->value.rank() != 2 || row->value.rank() != 2 || row->value.dim(0) != 1 ||
      row->value.dim(1) != mat->value.dim(1))
    throw std::invalid_argument("add_row_broadcast: shape mismatch");
  Tensor v = mat->value;
  const int m = v.dim(0), n = v.dim(1);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) v(r, c) += row->value(0, c);
  Var out = detail::make_node(std::move(v), {mat, row});
  if (out->needs_grad)
    out->backward_fn = [pm = mat.get(), pr = row.get()](Node& nd) {
      const int m = nd.value.dim(0), n = nd.value.dim(1);
      if (pm->needs_grad) pm->accumulate(nd.grad);
      if (pr->needs_grad) {
        pr->ensure_grad();
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) pr->grad(0, c) += nd.grad(r, c);
      }
    };
  return out;
}

inline Var softmax_rows(const Var& a) {
  if (a->value.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 required");
  Tensor v = a->value;
  const int m = v.dim(0), n = v.dim(1);
  for (int r = 0; r < m; ++r) {
    double mx = v(r, 0);
    for (int c = 1; c < n; ++c) mx = std::max(mx, v(r, c));
    double z = 0.0;
    for (int c = 0; c < n; ++c) {
      v(r, c) = std::exp(v(r, c) - mx);
      z += v(r, c);
    }
    for (int c = 0; c < n; ++c) v(r, c) /= z;
  }
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get()](Node& nd) {
      pa->ensure_grad();
      const int m = nd.value.dim(0), n = nd.value.dim(1);
      for (int r = 0; r < m; ++r) {
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += nd.grad(r, c) * nd.value(r, c);
        for (int c = 0; c < n; ++c)
          pa->grad(r, c) += nd.value(r, c) * (nd.grad(r, c) - dot);
      }
    };
  return out;
}

/// Per-row layer normalization with learned gain/bias rows {1,n}.
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  if (x->value.rank() != 2 || gamma->value.dim(1) != x->value.dim(1) ||
      beta->value.dim(1) != x->value.dim(1))
    throw std::invalid_argument("layer_norm_rows: shape mismatch");
  const int m = x->value.dim(0), n = x->value.dim(1);
  Tensor v({m, n});
  auto xhat = std::make_shared<Tensor>(Tensor({m, n}));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
  for (int r = 0; r < m; ++r) {
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += x->value(r, c);
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      const double d = x->value(r, c) - mu;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    for (int c = 0; c < n; ++c) {
      const double h = (x->value(r, c) - mu) * is;
      (*xhat)(r, c) = h;
      v(r, c) = h * gamma->value(0, c) + beta->value(0, c);
    }
  }
  Var out = detail::make_node(std::move(v), {x, gamma, beta});
  if (out->needs_grad)
    out->backward_fn = [px = x.get(), pg = gamma.get(), pb = beta.get(), xhat, inv_std](Node& nd) {
      const int m = nd.value.dim(0), n = nd.value.dim(1);
      if (pg->needs_grad) pg->ensure_grad();
      if (pb->needs_grad) pb->ensure_grad();
      if (px->needs_grad) px->ensure_grad();
      for (int r = 0; r < m; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (int c = 0; c < n; ++c) {
          const double dy = nd.grad(r, c);
          const double h = (*xhat)(r, c);
          if (pg->needs_grad) pg->grad(0, c) += dy * h;
          if (pb->needs_grad) pb->grad(0, c) += dy;
          const double dh = dy * pg->value(0, c);
          mean_dh += dh;
          mean_dh_h += dh * h;
        }
        if (!px->needs_grad) continue;
        mean_dh /= n;
        mean_dh_h /= n;
        const double is = (*inv_std)[static_cast<size_t>(r)];
        for (int c = 0; c < n; ++c) {
          const double dh = nd.grad(r, c) * pg->value(0, c);
          px->grad(r, c) += is * (dh - mean_dh - (*xhat)(r, c) * mean_dh_h);
        }
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Map ops on {C,H,W} tensors
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const Tensor& x, int kh, int kw, int stride, int pad, Tensor& col, int oh,
                   int ow) {
  const int ic = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int c = 0; c < ic; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            col(row, oy * ow + ox) =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x(c, iy, ix) : 0.0;
          }
        }
      }
}

inline void col2im_add(const Tensor& col, int kh, int kw, int stride, int pad, Tensor& dx, int oh,
                       int ow) {
  const int ic = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  for (int c = 0; c < ic; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            dx(c, iy, ix) += col(row, oy * ow + ox);
          }
        }
      }
}

}  // namespace detail

/// 2D convolution. weight {out_c, in_c*kh*kw}, bias {1, out_c}.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int kh, int kw, int stride,
                  int pad) {
  if (x->value.rank() != 3) throw std::invalid_argument("conv2d: input must be {C,H,W}");
  const int ic = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int oc = weight->value.dim(0);
  if (weight->value.dim(1) != ic * kh * kw)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

  auto col = std::make_shared<Tensor>(Tensor({ic * kh * kw, oh * ow}));
  detail::im2col(x->value, kh, kw, stride, pad, *col, oh, ow);
  Tensor out_mat = matmul_raw(weight->value, false, *col, false);
  Tensor v({oc, oh, ow});
  for (int c = 0; c < oc; ++c) {
    const double b = bias->value(0, c);
    for (int p = 0; p < oh * ow; ++p) v.data[static_cast<size_t>(c * oh * ow + p)] = out_mat(c, p) + b;
  }
  Var out = detail::make_node(std::move(v), {x, weight, bias});
  if (out->needs_grad)
    out->backward_fn = [px = x.get(), pw = weight.get(), pb = bias.get(), col, kh, kw, stride,
                        pad, oh, ow](Node& nd) {
      const int oc = nd.value.dim(0);
      Tensor dout_mat({oc, oh * ow});
      dout_mat.data = nd.grad.data;
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (int c = 0; c < oc; ++c) {
          double acc = 0.0;
          for (int p = 0; p < oh * ow; ++p) acc += dout_mat(c, p);
          pb->grad(0, c) += acc;
        }
      }
      if (pw->needs_grad) pw->accumulate(matmul_raw(dout_mat, false, *col, true));
      if (px->needs_grad) {
        px->ensure_grad();
        Tensor dcol = matmul_raw(pw->value, true, dout_mat, false);
        detail::col2im_add(dcol, kh, kw, stride, pad, px->grad, oh, ow);
      }
    };
  return out;
}

inline Var max_pool2d(const Var& x, int k, int stride, int pad = 0) {
  if (x->value.rank() != 3) throw std::invalid_argument("max_pool2d: input must be {C,H,W}");
  const int ic = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("max_pool2d: empty output");
  Tensor v({ic, oh, ow});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(ic * oh * ow), -1);
  for (int c = 0; c < ic; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const double val = x->value(c, iy, ix);
            if (val > best) {
              best = val;
              best_idx = (c * h + iy) * w + ix;
            }
          }
        }
        v(c, oy, ox) = best_idx >= 0 ? best : 0.0;
        (*argmax)[static_cast<size_t>((c * oh + oy) * ow + ox)] = best_idx;
      }
  Var out = detail::make_node(std::move(v), {x});
  if (out->needs_grad)
    out->backward_fn = [px = x.get(), argmax](Node& nd) {
      px->ensure_grad();
      for (size_t i = 0; i < nd.grad.data.size(); ++i) {
        const int src = (*argmax)[i];
        if (src >= 0) px->grad.data[static_cast<size_t>(src)] += nd.grad.data[i];
      }
    };
  return out;
}

inline Var upsample2x(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("upsample2x: input must be {C,H,W}");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor v({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) v(ch, y, xx) = x->value(ch, y / 2, xx / 2);
  Var out = detail::make_node(std::move(v), {x});
  if (out->needs_grad)
    out->backward_fn = [px = x.get()](Node& nd) {
      px->ensure_grad();
      const int c = nd.value.dim(0), oh = nd.value.dim(1), ow = nd.value.dim(2);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) px->grad(ch, y / 2, xx / 2) += nd.grad(ch, y, xx);
    };
  return out;
}

inline Var concat_chw(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_chw: empty input");
  const int h = parts[0]->value.dim(1), w = parts[0]->value.dim(2);
  int ctot = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != 3 || p->value.dim(1) != h || p->value.dim(2) != w)
      throw std::invalid_argument("concat_chw: incompatible shapes");
    ctot += p->value.dim(0);
  }
  Tensor v({ctot, h, w});
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), v.data.begin() + static_cast<long>(off));
    off += p->value.data.size();
  }
  Var out = detail::make_node(std::move(v), parts);
  if (out->needs_grad)
    out->backward_fn = [](Node& nd) {
      size_t off = 0;
      for (const auto& p : nd.parents) {
        if (p->needs_grad) {
          p->ensure_grad();
          for (size_t i = 0; i < p->value.data.size(); ++i)
            p->grad.data[i] += nd.grad.data[off + i];
        }
        off += p->value.data.size();
      }
    };
  return out;
}

/// Global average pool {C,H,W} -> {1,C}.
inline Var gap(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("gap: input must be {C,H,W}");
  const int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  Tensor v({1, c});
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int p = 0; p < hw; ++p) acc += x->value.data[static_cast<size_t>(ch * hw + p)];
    v(0, ch) = acc / hw;
  }
  Var out = detail::make_node(std::move(v), {x});
  if (out->needs_grad)
    out->backward_fn = [px = x.get(), hw](Node& nd) {
      px->ensure_grad();
      const int c = nd.value.dim(1);
      for (int ch = 0; ch < c; ++ch) {
        const double g = nd.grad(0, ch) / hw;
        for (int p = 0; p < hw; ++p) px->grad.data[static_cast<size_t>(ch * hw + p)] += g;
      }
    };
  return out;
}

/// {C,H,W} -> {H*W, C} position-major rows (attention memory layout).
inline Var chw_to_rows(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("chw_to_rows: input must be {C,H,W}");
  const int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  Tensor v({hw, c});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p) v(p, ch) = x->value.data[static_cast<size_t>(ch * hw + p)];
  Var out = detail::make_node(std::move(v), {x});
  if (out->needs_grad)
    out->backward_fn = [px = x.get()](Node& nd) {
      px->ensure_grad();
      const int hw = nd.value.dim(0), c = nd.value.dim(1);
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p)
          px->grad.data[static_cast<size_t>(ch * hw + p)] += nd.grad(p, ch);
    };
  return out;
}

// ---------------------------------------------------------------------------
// ROI resize (bilinear region sampling, 2x2 samples per bin)
// ---------------------------------------------------------------------------

namespace detail {

struct RoiSampleGrad {
  // For one bilinear sample: four taps into the feature plane plus the
  // derivative of the sampled value w.r.t. the continuous coordinates.
  int y_low = 0, y_high = 0, x_low = 0, x_high = 0;
  double w1 = 0, w2 = 0, w3 = 0, w4 = 0;
  double dval_dx = 0, dval_dy = 0;  // zero when the coordinate is clamped
  bool valid = false;
};

inline RoiSampleGrad roi_bilinear_setup(int h, int w, double y, double x) {
  RoiSampleGrad s;
  if (y < -1.0 || y > h || x < -1.0 || x > w) return s;  // >1 px outside: contributes 0
  s.valid = true;
  bool x_clamped = false, y_clamped = false;
  if (y <= 0.0) {
    y = 0.0;
    y_clamped = true;
  }
  if (x <= 0.0) {
    x = 0.0;
    x_clamped = true;
  }
  s.y_low = static_cast<int>(y);
  s.x_low = static_cast<int>(x);
  if (s.y_low >= h - 1) {
    s.y_low = s.y_high = h - 1;
    y = s.y_low;
    y_clamped = true;
  } else {
    s.y_high = s.y_low + 1;
  }
  if (s.x_low >= w - 1) {
    s.x_low = s.x_high = w - 1;
    x = s.x_low;
    x_clamped = true;
  } else {
    s.x_high = s.x_low + 1;
  }
  const double ly = y - s.y_low, lx = x - s.x_low;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  s.w1 = hy * hx;
  s.w2 = hy * lx;
  s.w3 = ly * hx;
  s.w4 = ly * lx;
  s.dval_dx = x_clamped ? 0.0 : 1.0;  // scaled by tap differences at use site
  s.dval_dy = y_clamped ? 0.0 : 1.0;
  return s;
}

}  // namespace detail

/// Resamples the box region of a {C,H,W} map to {C,out_h,out_w}. The box is a
/// {1,4} tensor (x0,y0,x1,y1) in map pixel units with the origin at the map's
/// top-left corner. Each output bin averages a 2x2 grid of bilinear samples.
/// Differentiable w.r.t. both the map and the box. Samples more than one
/// pixel outside the map contribute zero; non-positive box extents are
/// clamped to 1e-6.
inline Var roi_align(const Var& x, const Var& box, int out_h, int out_w) {
  if (x->value.rank() != 3) throw std::invalid_argument("roi_align: input must be {C,H,W}");
  if (box->value.numel() != 4) throw std::invalid_argument("roi_align: box must hold 4 values");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const double x0 = box->value.data[0], y0 = box->value.data[1];
  const double x1 = box->value.data[2], y1 = box->value.data[3];
  constexpr double kEps = 1e-6;
  const bool w_clamped = (x1 - x0) < kEps;
  const bool h_clamped = (y1 - y0) < kEps;
  const double bw = std::max(x1 - x0, kEps) / out_w;
  const double bh = std::max(y1 - y0, kEps) / out_h;

  constexpr std::array<double, 2> kFrac = {0.25, 0.75};
  const int samples = out_h * out_w * 4;
  auto setups = std::make_shared<std::vector<detail::RoiSampleGrad>>(
      static_cast<size_t>(samples));
  auto fracs = std::make_shared<std::vector<std::array<double, 2>>>(
      static_cast<size_t>(samples));  // (oy+fy, ox+fx) in bin units

  Tensor v({c, out_h, out_w});
  int si = 0;
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      for (double fy : kFrac)
        for (double fx : kFrac) {
          const double sy = y0 + (oy + fy) * bh - 0.5;  // center-indexed
          const double sx = x0 + (ox + fx) * bw - 0.5;
          (*setups)[static_cast<size_t>(si)] = detail::roi_bilinear_setup(h, w, sy, sx);
          (*fracs)[static_cast<size_t>(si)] = {oy + fy, ox + fx};
          ++si;
        }
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          const auto& s = (*setups)[static_cast<size_t>((oy * out_w + ox) * 4 + k)];
          if (!s.valid) continue;
          acc += s.w1 * x->value(ch, s.y_low, s.x_low) + s.w2 * x->value(ch, s.y_low, s.x_high) +
                 s.w3 * x->value(ch, s.y_high, s.x_low) + s.w4 * x->value(ch, s.y_high, s.x_high);
        }
        v(ch, oy, ox) = 0.25 * acc;
      }
    }
  Var out = detail::make_node(std::move(v), {x, box});
  if (out->needs_grad)
    out->backward_fn = [px = x.get(), pbox = box.get(), setups, fracs, out_h, out_w, bw, bh,
                        w_clamped, h_clamped](Node& nd) {
      const int c = nd.value.dim(0);
      if (px->needs_grad) px->ensure_grad();
      if (pbox->needs_grad) pbox->ensure_grad();
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox)
          for (int k = 0; k < 4; ++k) {
            const size_t si = static_cast<size_t>((oy * out_w + ox) * 4 + k);
            const auto& s = (*setups)[si];
            if (!s.valid) continue;
            const double by = (*fracs)[si][0], bx = (*fracs)[si][1];
            for (int ch = 0; ch < c; ++ch) {
              const double g = 0.25 * nd.grad(ch, oy, ox);
              if (g == 0.0) continue;
              if (px->needs_grad) {
                px->grad(ch, s.y_low, s.x_low) += g * s.w1;
                px->grad(ch, s.y_low, s.x_high) += g * s.w2;
                px->grad(ch, s.y_high, s.x_low) += g * s.w3;
                px->grad(ch, s.y_high, s.x_high) += g * s.w4;
              }
              if (pbox->needs_grad) {
                const double v1 = px->value(ch, s.y_low, s.x_low);
                const double v2 = px->value(ch, s.y_low, s.x_high);
                const double v3 = px->value(ch, s.y_high, s.x_low);
                const double v4 = px->value(ch, s.y_high, s.x_high);
                const double ly = s.w3 + s.w4, hy = s.w1 + s.w2;
                const double lx = s.w2 + s.w4, hx = s.w1 + s.w3;
                const double dv_dx = s.dval_dx * (hy * (v2 - v1) + ly * (v4 - v3));
                const double dv_dy = s.dval_dy * (hx * (v3 - v1) + lx * (v4 - v2));
                // sx = x0 + bx*bw with bw = (x1-x0)/out_w unless clamped.
                const double dsx_dx1 = w_clamped ? 0.0 : bx / out_w;
                const double dsy_dy1 = h_clamped ? 0.0 : by / out_h;
                pbox->grad.data[0] += g * dv_dx * (1.0 - dsx_dx1);
                pbox->grad.data[2] += g * dv_dx * dsx_dx1;
                pbox->grad.data[1] += g * dv_dy * (1.0 - dsy_dy1);
                pbox->grad.data[3] += g * dv_dy * dsy_dy1;
              }
            }
          }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Pose normalization as a differentiable op
// ---------------------------------------------------------------------------

/// Maps a flat pose row {1,2M} (x0,y0,x1,y1,...) so its enclosing box becomes
/// the unit box: out = (v - min)/extent - 0.5 per axis, extent clamped to
/// 1e-6. Min/max use the first extremal index for the subgradient.
inline Var normalize_pose_row(const Var& a) {
  if (a->value.rank() != 2 || a->value.dim(0) != 1 || a->value.dim(1) % 2 != 0)
    throw std::invalid_argument("normalize_pose_row: expected {1,2M}");
  const int n = a->value.dim(1);
  constexpr double kEps = 1e-6;
  Tensor v({1, n});
  auto meta = std::make_shared<std::array<double, 6>>();  // per axis: argmin, argmax, extent
  for (int axis = 0; axis < 2; ++axis) {
    int imin = axis, imax = axis;
    for (int i = axis; i < n; i += 2) {
      if (a->value(0, i) < a->value(0, imin)) imin = i;
      if (a->value(0, i) > a->value(0, imax)) imax = i;
    }
    const double lo = a->value(0, imin);
    const double extent = std::max(a->value(0, imax) - lo, kEps);
    (*meta)[static_cast<size_t>(axis * 3)] = imin;
    (*meta)[static_cast<size_t>(axis * 3 + 1)] = imax;
    (*meta)[static_cast<size_t>(axis * 3 + 2)] = extent;
    for (int i = axis; i < n; i += 2) v(0, i) = (a->value(0, i) - lo) / extent - 0.5;
  }
  Var out = detail::make_node(std::move(v), {a});
  if (out->needs_grad)
    out->backward_fn = [pa = a.get(), meta](Node& nd) {
      pa->ensure_grad();
      const int n = nd.value.dim(1);
      for (int axis = 0; axis < 2; ++axis) {
        const int imin = static_cast<int>((*meta)[static_cast<size_t>(axis * 3)]);
        const int imax = static_cast<int>((*meta)[static_cast<size_t>(axis * 3 + 1)]);
        const double extent = (*meta)[static_cast<size_t>(axis * 3 + 2)];
        const bool clamped = (pa->value(0, imax) - pa->value(0, imin)) < 1e-6;
        double g_total = 0.0, weighted = 0.0;
        for (int i = axis; i < n; i += 2) {
          const double g = nd.grad(0, i);
          g_total += g;
          weighted += g * (pa->value(0, i) - pa->value(0, imin));
          pa->grad(0, i) += g / extent;
        }
        pa->grad(0, imin) -= g_total / extent;
        if (!clamped) {
          const double a_term = weighted / (extent * extent);
          pa->grad(0, imax) -= a_term;
          pa->grad(0, imin) += a_term;
        }
      }
    };
  return out;
}

}  // namespace scenepose

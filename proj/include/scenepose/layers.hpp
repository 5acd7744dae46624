#pragma once

// Trainable building blocks on top of the autodiff graph: a named parameter
// store plus linear, convolution, attention and transformer-decoder layers.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "scenepose/autodiff.hpp"
#include "scenepose/rng.hpp"
#include "scenepose/tensor.hpp"

namespace scenepose {

struct ParamEntry {
  std::string name;
  Var var;
  double lr_mult = 1.0;
};

/// Owns every trainable tensor of a model. Entries keep insertion order so
/// serialization and optimizer sweeps are deterministic.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, double lr_mult = 1.0) {
    if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    Var v = make_param(std::move(init));
    index_[name] = entries_.size();
    entries_.push_back({name, v, lr_mult});
    return v;
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }

  const ParamEntry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param store: unknown name " + name);
    return entries_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grads() {
    for (auto& e : entries_) e.var->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var->value.numel();
    return n;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

inline Tensor normal(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

/// He initialization for layers followed by ReLU.
inline Tensor he(Rng& rng, std::vector<int> shape, int fan_in) {
  return normal(rng, std::move(shape), std::sqrt(2.0 / fan_in));
}

/// Xavier initialization for linear maps without a fixed activation.
inline Tensor xavier(Rng& rng, std::vector<int> shape, int fan_in, int fan_out) {
  return normal(rng, std::move(shape), std::sqrt(2.0 / (fan_in + fan_out)));
}

}  // namespace init

struct Linear {
  Var w;  // {out, in}
  Var b;  // {1, out}

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
         bool relu_next = false, double lr_mult = 1.0) {
    Tensor wt = relu_next ? init::he(rng, {out, in}, in) : init::xavier(rng, {out, in}, in, out);
    w = ps.add(name + ".w", std::move(wt), lr_mult);
    b = ps.add(name + ".b", Tensor::zeros({1, out}), lr_mult);
  }

  Var forward(const Var& x) const { return add_row_broadcast(matmul(x, w, false, true), b); }
};

struct Conv2dLayer {
  Var w;  // {oc, ic*kh*kw}
  Var b;  // {1, oc}
  int kh = 0, kw = 0, stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& name, int ic, int oc, int k, int stride_,
              int pad_, Rng& rng, double lr_mult = 1.0)
      : kh(k), kw(k), stride(stride_), pad(pad_) {
    w = ps.add(name + ".w", init::he(rng, {oc, ic * k * k}, ic * k * k), lr_mult);
    b = ps.add(name + ".b", Tensor::zeros({1, oc}), lr_mult);
  }

  Var forward(const Var& x) const { return conv2d(x, w, b, kh, kw, stride, pad); }
};

struct LayerNormLayer {
  Var gamma;  // {1, d}
  Var beta;   // {1, d}

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& ps, const std::string& name, int d, double lr_mult = 1.0) {
    gamma = ps.add(name + ".g", Tensor::full({1, d}, 1.0), lr_mult);
    beta = ps.add(name + ".b", Tensor::zeros({1, d}), lr_mult);
  }

  Var forward(const Var& x) const { return layer_norm_rows(x, gamma, beta); }
};

/// Two hidden layers with ReLU, linear output. The heads that sit on top of
/// the transformers are all this shape.
struct MLPHead {
  Linear l1, l2, l3;

  MLPHead() = default;
  MLPHead(ParamStore& ps, const std::string& name, int in, int hidden, int out, Rng& rng,
          double lr_mult = 1.0)
      : l1(ps, name + ".l1", in, hidden, rng, true, lr_mult),
        l2(ps, name + ".l2", hidden, hidden, rng, true, lr_mult),
        l3(ps, name + ".l3", hidden, out, rng, false, lr_mult) {}

  Var forward(const Var& x) const {
    return l3.forward(relu(l2.forward(relu(l1.forward(x)))));
  }
};

struct MultiheadAttention {
  int dim = 0, heads = 1, head_dim = 0;
  Linear wq, wk, wv, wo;

  MultiheadAttention() = default;
  MultiheadAttention(ParamStore& ps, const std::string& name, int dim_, int heads_, Rng& rng,
                     double lr_mult = 1.0)
      : dim(dim_), heads(heads_), head_dim(dim_ / heads_) {
    if (dim_ % heads_ != 0) throw std::invalid_argument("attention: dim must divide by heads");
    wq = Linear(ps, name + ".q", dim_, dim_, rng, false, lr_mult);
    wk = Linear(ps, name + ".k", dim_, dim_, rng, false, lr_mult);
    wv = Linear(ps, name + ".v", dim_, dim_, rng, false, lr_mult);
    wo = Linear(ps, name + ".o", dim_, dim_, rng, false, lr_mult);
  }

  /// q_in {nq,d}, k_in/v_in {nk,d} -> {nq,d}.
  Var forward(const Var& q_in, const Var& k_in, const Var& v_in) const {
    Var q = wq.forward(q_in);
    Var k = wk.forward(k_in);
    Var v = wv.forward(v_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
      Var qh = col_slice(q, c0, c1);
      Var kh = col_slice(k, c0, c1);
      Var vh = col_slice(v, c0, c1);
      Var attn = softmax_rows(affine(matmul(qh, kh, false, true), scale, 0.0));
      outs.push_back(matmul(attn, vh));
    }
    return wo.forward(heads == 1 ? outs[0] : concat_cols(outs));
  }
};

/// Post-norm transformer decoder layer. Self-attention is optional; keys of
/// the cross-attention get a positional signal added while values stay raw.
struct DecoderLayer {
  bool with_self_attn = true;
  MultiheadAttention self_attn, cross_attn;
  LayerNormLayer ln1, ln2, ln3;
  Linear ffn1, ffn2;

  DecoderLayer() = default;
  DecoderLayer(ParamStore& ps, const std::string& name, int dim, int heads, int ffn_dim,
               bool with_self, Rng& rng, double lr_mult = 1.0)
      : with_self_attn(with_self) {
    if (with_self) {
      self_attn = MultiheadAttention(ps, name + ".self", dim, heads, rng, lr_mult);
      ln1 = LayerNormLayer(ps, name + ".ln1", dim, lr_mult);
    }
    cross_attn = MultiheadAttention(ps, name + ".cross", dim, heads, rng, lr_mult);
    ln2 = LayerNormLayer(ps, name + ".ln2", dim, lr_mult);
    ffn1 = Linear(ps, name + ".ffn1", dim, ffn_dim, rng, true, lr_mult);
    ffn2 = Linear(ps, name + ".ffn2", ffn_dim, dim, rng, false, lr_mult);
    ln3 = LayerNormLayer(ps, name + ".ln3", dim, lr_mult);
  }

  /// x {nq,d}; memory {nk,d}; mem_pos {nk,d} positional encoding for keys.
  Var forward(Var x, const Var& memory, const Var& mem_pos) const {
    if (with_self_attn) x = ln1.forward(add(x, self_attn.forward(x, x, x)));
    Var keys = add(memory, mem_pos);
    x = ln2.forward(add(x, cross_attn.forward(x, keys, memory)));
    Var f = ffn2.forward(relu(ffn1.forward(x)));
    return ln3.forward(add(x, f));
  }
};

/// Fixed 2D sinusoidal position encoding for an h*w token grid, row index
/// y*w + x. Half the channels encode y, half encode x.
inline Tensor positional_encoding_2d(int h, int w, int dim) {
  if (dim % 4 != 0) throw std::invalid_argument("positional encoding: dim must divide by 4");
  Tensor pe = Tensor::zeros({h * w, dim});
  const int quarter = dim / 4;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int row = y * w + x;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / (dim / 2.0));
        pe(row, 2 * i) = std::sin(y * freq);
        pe(row, 2 * i + 1) = std::cos(y * freq);
        pe(row, dim / 2 + 2 * i) = std::sin(x * freq);
        pe(row, dim / 2 + 2 * i + 1) = std::cos(x * freq);
      }
    }
  }
  return pe;
}

}  // namespace scenepose

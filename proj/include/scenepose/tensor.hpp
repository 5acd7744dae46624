#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef SCENEPOSE_USE_CBLAS
#include <cblas.h>
#endif

namespace scenepose {

/// Dense row-major tensor of doubles. Rank 1..3 in practice:
/// {n} vectors, {rows, cols} matrices, {channels, height, width} maps.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(checked_numel(shape), fill) {}

  static size_t checked_numel(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int numel() const { return static_cast<int>(data.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator()(int i) { return data[static_cast<size_t>(i)]; }
  double operator()(int i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int r, int c) {
    return data[static_cast<size_t>(r) * static_cast<size_t>(shape[1]) + static_cast<size_t>(c)];
  }
  double operator()(int r, int c) const {
    return data[static_cast<size_t>(r) * static_cast<size_t>(shape[1]) + static_cast<size_t>(c)];
  }
  double& operator()(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * static_cast<size_t>(shape[1]) + static_cast<size_t>(y)) *
                    static_cast<size_t>(shape[2]) +
                static_cast<size_t>(x)];
  }
  double operator()(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * static_cast<size_t>(shape[1]) + static_cast<size_t>(y)) *
                    static_cast<size_t>(shape[2]) +
                static_cast<size_t>(x)];
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }

  std::string shape_str() const {
    std::string out = "{";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(shape[i]);
    }
    return out + "}";
  }
};

/// C = op(A) * op(B), row-major. A is m×k after transposition, B is k×n.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
                 const double* b, int ldb, double* c, int ldc) {
#ifdef SCENEPOSE_USE_CBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b, ldb, 0.0, c, ldc);
#else
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) {
        const double av = trans_a ? a[t * lda + i] : a[i * lda + t];
        const double bv = trans_b ? b[j * ldb + t] : b[t * ldb + j];
        acc += av * bv;
      }
      c[i * ldc + j] = acc;
    }
#endif
}

/// Convenience product of two tensors interpreted as matrices.
inline Tensor matmul_raw(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 tensors required");
  const int m = trans_a ? a.dim(1) : a.dim(0);
  const int ka = trans_a ? a.dim(0) : a.dim(1);
  const int kb = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Tensor c({m, n});
  gemm(trans_a, trans_b, m, n, ka, a.data.data(), a.dim(1), b.data.data(), b.dim(1),
       c.data.data(), n);
  return c;
}

}  // namespace scenepose

#pragma once

// Training losses. Every loss exists twice: a plain scalar form used by tests
// and metrics, and a graph builder used by the optimizer. The two must agree,
// which the test suite checks directly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "scenepose/autodiff.hpp"
#include "scenepose/pose.hpp"
#include "scenepose/tensor.hpp"

namespace scenepose {

struct LossWeights {
  double lambda_offset = 10.0;
  double lambda_scale = 10.0;
  double lambda_adv = 10.0;
  double lambda_dis = 1.0;
  std::vector<double> class_weights;  // per template, on the positive BCE term

  void validate() const {
    if (lambda_offset < 0 || lambda_scale < 0 || lambda_adv < 0 || lambda_dis < 0)
      throw std::invalid_argument("loss weights: negative lambda");
    for (double w : class_weights)
      if (!(w >= 0)) throw std::invalid_argument("loss weights: negative class weight");
  }
};

/// Probabilities are clipped to this interval before any logarithm.
inline constexpr double kProbEps = 1e-7;

namespace detail {
inline double clip_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
}  // namespace detail

// ---------------------------------------------------------------------------
// Scalar forms
// ---------------------------------------------------------------------------

/// Mean weighted binary cross-entropy over the K templates. The weight
/// rebalances only the positive term.
inline double loss_cls(std::span<const double> c, std::span<const std::uint8_t> l,
                       std::span<const double> w) {
  if (c.empty() || c.size() != l.size() || c.size() != w.size())
    throw std::invalid_argument("loss_cls: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double p = detail::clip_prob(c[i]);
    total += l[i] ? -w[i] * std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(c.size());
}

/// Squared distance between the normalized offset-shifted template and the
/// normalized target pose.
inline double loss_offset(const Offsets& offsets, const Pose& tmpl, const Pose& gt) {
  Pose shifted = tmpl;
  for (int i = 0; i < kNumKeypoints; ++i) {
    shifted[i].x += offsets.values[static_cast<std::size_t>(2 * i)];
    shifted[i].y += offsets.values[static_cast<std::size_t>(2 * i + 1)];
  }
  const Pose a = normalize(shifted);
  const Pose b = normalize(gt);
  double total = 0.0;
  for (int i = 0; i < kNumKeypoints; ++i) {
    const double dx = a[i].x - b[i].x, dy = a[i].y - b[i].y;
    total += dx * dx + dy * dy;
  }
  return total;
}

inline double loss_scale(const Scale& s, const Scale& target) {
  const double dx = s.sx - target.sx, dy = s.sy - target.sy;
  return dx * dx + dy * dy;
}

/// Squared distance between the refined embedding and the teacher embedding.
inline double loss_dis(std::span<const double> u_prime, std::span<const double> v) {
  if (u_prime.size() != v.size() || u_prime.empty())
    throw std::invalid_argument("loss_dis: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < u_prime.size(); ++i) {
    const double d = u_prime[i] - v[i];
    total += d * d;
  }
  return total;
}

struct AdvTerms {
  double generator = 0.0;      // minimized by the generator
  double discriminator = 0.0;  // minimized by the discriminator
};

/// Adversarial value split into the two optimization targets. d_gt is the
/// discriminator's score on the ground-truth template's candidate, d_others
/// the scores on the remaining positive templates. The discriminator term is
/// the negated value it maximizes; the generator term is the non-saturating
/// form over the non-gt positives, zero when there are none.
inline AdvTerms loss_adv(double d_gt, std::span<const double> d_others) {
  AdvTerms out;
  double value = std::log(detail::clip_prob(d_gt));
  if (!d_others.empty()) {
    double mean_log_one_minus = 0.0, mean_log = 0.0;
    for (double p : d_others) {
      const double q = detail::clip_prob(p);
      mean_log_one_minus += std::log(1.0 - q);
      mean_log += std::log(q);
    }
    const double n = static_cast<double>(d_others.size());
    value += mean_log_one_minus / n;
    out.generator = -mean_log / n;
  }
  out.discriminator = -value;
  return out;
}

inline double total_loss(double cls, double offset, double scale, double adv, double dis,
                         const LossWeights& w) {
  return cls + w.lambda_offset * offset + w.lambda_scale * scale + w.lambda_adv * adv +
         w.lambda_dis * dis;
}

// ---------------------------------------------------------------------------
// Graph builders. Scalar outputs are {1,1} nodes.
// ---------------------------------------------------------------------------

inline Var loss_cls_graph(const Var& c, const std::vector<std::uint8_t>& l,
                          const std::vector<double>& w) {
  const int k = c->value.shape.back();
  if (c->value.numel() != k || static_cast<int>(l.size()) != k ||
      static_cast<int>(w.size()) != k)
    throw std::invalid_argument("loss_cls: size mismatch");
  Tensor pos_w = Tensor::zeros(c->value.shape);
  Tensor neg_w = Tensor::zeros(c->value.shape);
  for (int i = 0; i < k; ++i) {
    pos_w.data[static_cast<std::size_t>(i)] = l[static_cast<std::size_t>(i)] ? w[static_cast<std::size_t>(i)] : 0.0;
    neg_w.data[static_cast<std::size_t>(i)] = l[static_cast<std::size_t>(i)] ? 0.0 : 1.0;
  }
  Var p = clip(c, kProbEps, 1.0 - kProbEps);
  Var pos = mul(constant(pos_w), vlog(p));
  Var neg = mul(constant(neg_w), vlog(affine(p, -1.0, 1.0)));
  return affine(sum(add(pos, neg)), -1.0 / k, 0.0);
}

inline Var loss_offset_graph(const Var& offset_row, const Pose& tmpl, const Pose& gt) {
  const auto flat = tmpl.to_flat();
  Tensor t_row = Tensor::zeros({1, kPoseDim});
  std::copy(flat.begin(), flat.end(), t_row.data.begin());
  const auto gt_flat = normalize(gt).to_flat();
  Tensor gt_row = Tensor::zeros({1, kPoseDim});
  std::copy(gt_flat.begin(), gt_flat.end(), gt_row.data.begin());

  Var refined = normalize_pose_row(add_const(offset_row, t_row));
  Var diff = sub(refined, constant(gt_row));
  return sum(mul(diff, diff));
}

inline Var loss_scale_graph(const Var& scale_row, const Scale& target) {
  Tensor t = Tensor::zeros({1, 2});
  t(0, 0) = target.sx;
  t(0, 1) = target.sy;
  Var diff = sub(scale_row, constant(t));
  return sum(mul(diff, diff));
}

inline Var loss_dis_graph(const Var& u_row, const Tensor& v_row) {
  Var diff = sub(u_row, constant(v_row));
  return sum(mul(diff, diff));
}

struct AdvGraphTerms {
  Var generator;
  Var discriminator;
};

/// d_gt {1,1}; d_others {n,1} or an empty Var when no extra positives exist.
inline AdvGraphTerms loss_adv_graph(const Var& d_gt, const Var& d_others = nullptr) {
  AdvGraphTerms out;
  Var disc = affine(sum(vlog(clip(d_gt, kProbEps, 1.0 - kProbEps))), -1.0, 0.0);
  if (d_others) {
    Var p = clip(d_others, kProbEps, 1.0 - kProbEps);
    disc = sub(disc, mean(vlog(affine(p, -1.0, 1.0))));
    out.generator = affine(mean(vlog(p)), -1.0, 0.0);
  } else {
    out.generator = constant(Tensor::zeros({1, 1}));
  }
  out.discriminator = disc;
  return out;
}

/// Weighted sum of the five scalar loss nodes. Terms with zero weight are
/// dropped from the graph entirely.
inline Var total_loss_graph(const Var& cls, const Var& offset, const Var& scale,
                            const Var& adv, const Var& dis, const LossWeights& w) {
  Var total = cls;
  if (w.lambda_offset != 0.0) total = add(total, affine(offset, w.lambda_offset, 0.0));
  if (w.lambda_scale != 0.0) total = add(total, affine(scale, w.lambda_scale, 0.0));
  if (w.lambda_adv != 0.0) total = add(total, affine(adv, w.lambda_adv, 0.0));
  if (w.lambda_dis != 0.0) total = add(total, affine(dis, w.lambda_dis, 0.0));
  return total;
}

}  // namespace scenepose

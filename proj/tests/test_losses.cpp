#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "scenepose/losses.hpp"
#include "scenepose/rng.hpp"

using namespace scenepose;

namespace {

Pose pinned_normalized_pose() {
  // Corners pinned so the enclosing box is exactly the unit box and
  // normalization is a bit-exact identity.
  Pose p;
  p[0] = {-0.5, -0.5};
  p[1] = {0.5, 0.5};
  Rng rng(41);
  for (int i = 2; i < kNumKeypoints; ++i)
    p[i] = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
  return p;
}

Pose random_pose(Rng& rng, double lo = -1.0, double hi = 1.0) {
  Pose p;
  for (int i = 0; i < kNumKeypoints; ++i) p[i] = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return p;
}

}  // namespace

TEST_CASE("classification loss hits its pinned values") {
  const int k = 4;
  std::vector<double> w(k, 1.0);

  std::vector<double> perfect = {1.0, 0.0, 1.0, 0.0};
  std::vector<std::uint8_t> labels = {1, 0, 1, 0};
  CHECK(loss_cls(perfect, labels, w) < 1e-6);

  std::vector<double> half(k, 0.5);
  CHECK(loss_cls(half, labels, w) == Catch::Approx(std::log(2.0)).margin(1e-12));

  CHECK_THROWS_AS(loss_cls(std::vector<double>{0.5}, labels, w), std::invalid_argument);
}

TEST_CASE("classification loss weights only the positive term") {
  std::vector<double> c = {0.3, 0.3};
  std::vector<std::uint8_t> l = {1, 0};
  std::vector<double> w = {5.0, 5.0};
  // Positive term scaled by 5, negative term untouched.
  const double want = (-5.0 * std::log(0.3) - std::log(0.7)) / 2.0;
  CHECK(loss_cls(c, l, w) == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("classification loss scalar and graph agree, gradients check out") {
  Rng rng(42);
  const int k = 6;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> c(k), w(k);
    std::vector<std::uint8_t> l(k);
    for (int i = 0; i < k; ++i) {
      c[static_cast<size_t>(i)] = rng.uniform(0.15, 0.85);
      w[static_cast<size_t>(i)] = rng.uniform(0.5, 4.0);
      l[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
    }
    Tensor ct = Tensor::zeros({1, k});
    for (int i = 0; i < k; ++i) ct(0, i) = c[static_cast<size_t>(i)];
    Var cv = make_param(ct);
    Var lg = loss_cls_graph(cv, l, w);
    CHECK(lg->value.data[0] == Catch::Approx(loss_cls(c, l, w)).margin(1e-12));

    backward(lg);
    const double h = 1e-6;
    for (int i = 0; i < k; ++i) {
      auto lc = c;
      lc[static_cast<size_t>(i)] += h;
      const double up = loss_cls(lc, l, w);
      lc[static_cast<size_t>(i)] -= 2 * h;
      const double dn = loss_cls(lc, l, w);
      const double fd = (up - dn) / (2 * h);
      CHECK(cv->grad(0, i) == Catch::Approx(fd).margin(1e-5));
    }
  }
}

TEST_CASE("offset loss is zero when the shifted template matches") {
  Rng rng(43);
  const Pose tmpl = normalize(random_pose(rng));
  const Pose gt = random_pose(rng, -0.8, 0.8);
  Offsets d;
  for (int i = 0; i < kNumKeypoints; ++i) {
    d.values[static_cast<size_t>(2 * i)] = gt[i].x - tmpl[i].x;
    d.values[static_cast<size_t>(2 * i + 1)] = gt[i].y - tmpl[i].y;
  }
  CHECK(loss_offset(d, tmpl, gt) < 1e-15);
}

TEST_CASE("offset loss of a 0.1 single-coordinate gap is 0.01") {
  const Pose a = pinned_normalized_pose();
  Pose b = a;
  b[5].x += 0.1;  // interior keypoint, box unchanged
  CHECK(loss_offset(Offsets{}, a, b) == Catch::Approx(0.01).margin(1e-9));
}

TEST_CASE("offset loss scalar and graph agree with finite-difference gradients") {
  Rng rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose tmpl = normalize(random_pose(rng));
    const Pose gt = random_pose(rng, -0.7, 0.7);
    Offsets d;
    for (auto& v : d.values) v = rng.uniform(-0.3, 0.3);

    Tensor row = Tensor::zeros({1, kPoseDim});
    std::copy(d.values.begin(), d.values.end(), row.data.begin());
    Var rv = make_param(row);
    Var lg = loss_offset_graph(rv, tmpl, gt);
    CHECK(lg->value.data[0] == Catch::Approx(loss_offset(d, tmpl, gt)).margin(1e-12));

    backward(lg);
    const double h = 1e-6;
    for (int i = 0; i < kPoseDim; i += 5) {
      Offsets up = d, dn = d;
      up.values[static_cast<size_t>(i)] += h;
      dn.values[static_cast<size_t>(i)] -= h;
      const double fd = (loss_offset(up, tmpl, gt) - loss_offset(dn, tmpl, gt)) / (2 * h);
      CHECK(rv->grad.data[static_cast<size_t>(i)] == Catch::Approx(fd).margin(1e-4));
    }
  }
}

TEST_CASE("scale loss examples and graph parity") {
  CHECK(loss_scale(Scale{1, 1}, Scale{1, 1}) == 0.0);
  CHECK(loss_scale(Scale{1.5, 1}, Scale{1, 1}) == Catch::Approx(0.25).margin(1e-12));

  Rng rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    const Scale s{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
    const Scale t{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
    Tensor row = Tensor::zeros({1, 2});
    row(0, 0) = s.sx;
    row(0, 1) = s.sy;
    Var lg = loss_scale_graph(constant(row), t);
    CHECK(lg->value.data[0] == Catch::Approx(loss_scale(s, t)).margin(1e-12));
  }
}

TEST_CASE("distillation loss examples and graph parity") {
  std::vector<double> u = {0.2, -0.1, 0.4};
  CHECK(loss_dis(u, u) == 0.0);
  std::vector<double> v = {0.2, -0.1, 1.4};
  CHECK(loss_dis(u, v) == Catch::Approx(1.0).margin(1e-12));
  CHECK_THROWS_AS(loss_dis(u, std::vector<double>{1.0}), std::invalid_argument);

  Rng rng(46);
  const int d = 8;
  Tensor ur = Tensor::zeros({1, d}), vr = Tensor::zeros({1, d});
  std::vector<double> us(static_cast<size_t>(d)), vs(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) {
    us[static_cast<size_t>(i)] = ur(0, i) = rng.uniform(-1.0, 1.0);
    vs[static_cast<size_t>(i)] = vr(0, i) = rng.uniform(-1.0, 1.0);
  }
  Var uv = make_param(ur);
  Var lg = loss_dis_graph(uv, vr);
  CHECK(lg->value.data[0] == Catch::Approx(loss_dis(us, vs)).margin(1e-12));
  backward(lg);
  // d/du of sum (u-v)^2 is 2(u-v).
  for (int i = 0; i < d; ++i)
    CHECK(uv->grad(0, i) ==
          Catch::Approx(2.0 * (us[static_cast<size_t>(i)] - vs[static_cast<size_t>(i)]))
              .margin(1e-12));
}

TEST_CASE("adversarial terms with no extra positives reduce to the gt part") {
  const AdvTerms t = loss_adv(0.8, {});
  CHECK(t.generator == 0.0);
  CHECK(t.discriminator == Catch::Approx(-std::log(0.8)).margin(1e-12));

  AdvGraphTerms g = loss_adv_graph(make_param(Tensor::full({1, 1}, 0.8)));
  CHECK(g.generator->value.data[0] == 0.0);
  CHECK(g.discriminator->value.data[0] == Catch::Approx(-std::log(0.8)).margin(1e-12));
}

TEST_CASE("a perfect discriminator sits at the objective's maximum") {
  std::vector<double> others = {0.0, 0.0};
  const AdvTerms t = loss_adv(1.0, others);
  CHECK(std::abs(t.discriminator) < 1e-6);  // value 0 up to probability clipping
  CHECK(t.generator == Catch::Approx(-std::log(kProbEps)).margin(1e-9));
}

TEST_CASE("adversarial scalar and graph forms agree with finite differences") {
  Rng rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const double d_gt = rng.uniform(0.1, 0.9);
    const int n = 1 + rng.uniform_int(3);
    std::vector<double> others(static_cast<size_t>(n));
    Tensor ot = Tensor::zeros({n, 1});
    for (int i = 0; i < n; ++i) others[static_cast<size_t>(i)] = ot(i, 0) = rng.uniform(0.1, 0.9);

    Var gv = make_param(Tensor::full({1, 1}, d_gt));
    Var ov = make_param(ot);
    AdvGraphTerms g = loss_adv_graph(gv, ov);
    const AdvTerms s = loss_adv(d_gt, others);
    CHECK(g.generator->value.data[0] == Catch::Approx(s.generator).margin(1e-12));
    CHECK(g.discriminator->value.data[0] == Catch::Approx(s.discriminator).margin(1e-12));

    backward(g.discriminator);
    const double h = 1e-6;
    auto disc_at = [&](double gt_p, const std::vector<double>& op) {
      return loss_adv(gt_p, op).discriminator;
    };
    CHECK(gv->grad.data[0] ==
          Catch::Approx((disc_at(d_gt + h, others) - disc_at(d_gt - h, others)) / (2 * h))
              .margin(1e-5));
    auto up = others, dn = others;
    up[0] += h;
    dn[0] -= h;
    CHECK(ov->grad.data[0] ==
          Catch::Approx((disc_at(d_gt, up) - disc_at(d_gt, dn)) / (2 * h)).margin(1e-5));

    gv->zero_grad();
    ov->zero_grad();
    AdvGraphTerms g2 = loss_adv_graph(gv, ov);
    backward(g2.generator);
    auto gen_at = [&](const std::vector<double>& op) { return loss_adv(d_gt, op).generator; };
    CHECK(ov->grad.data[0] ==
          Catch::Approx((gen_at(up) - gen_at(dn)) / (2 * h)).margin(1e-5));
    CHECK(gv->grad.data[0] == 0.0);  // generator term ignores the gt branch
  }
}

TEST_CASE("total loss applies the documented weights") {
  LossWeights w;
  CHECK(total_loss(0, 0, 0, 0, 0, w) == 0.0);
  CHECK(total_loss(1, 1, 1, 1, 1, w) == 32.0);

  Rng rng(48);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform(),
                 e = rng.uniform();
    LossWeights rw;
    rw.lambda_offset = rng.uniform(0.0, 5.0);
    rw.lambda_scale = rng.uniform(0.0, 5.0);
    rw.lambda_adv = rng.uniform(0.0, 5.0);
    rw.lambda_dis = rng.uniform(0.0, 5.0);
    const double want = a + rw.lambda_offset * b + rw.lambda_scale * c + rw.lambda_adv * d +
                        rw.lambda_dis * e;
    CHECK(total_loss(a, b, c, d, e, rw) == Catch::Approx(want).margin(1e-12));

    auto scalar = [](double x) { return constant(Tensor::full({1, 1}, x)); };
    Var tg = total_loss_graph(scalar(a), scalar(b), scalar(c), scalar(d), scalar(e), rw);
    CHECK(tg->value.data[0] == Catch::Approx(want).margin(1e-12));
  }

  LossWeights zero;
  zero.lambda_offset = zero.lambda_scale = zero.lambda_adv = zero.lambda_dis = 0.0;
  auto scalar = [](double x) { return constant(Tensor::full({1, 1}, x)); };
  Var tg = total_loss_graph(scalar(0.7), scalar(9), scalar(9), scalar(9), scalar(9), zero);
  CHECK(tg->value.data[0] == Catch::Approx(0.7).margin(1e-12));

  LossWeights bad;
  bad.lambda_adv = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

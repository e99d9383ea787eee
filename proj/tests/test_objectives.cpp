#include "doctest.h"
#include "dyadfuse/errors.hpp"
#include "dyadfuse/objectives.hpp"
#include "test_util.hpp"

using namespace dyadfuse;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Central-difference gradient of f with respect to each entry of `at`.
template <class F>
Vector numeric_grad(F f, Vector at, double h = 1e-6) {
  Vector g(at.size());
  for (Index i = 0; i < at.size(); ++i) {
    const double s = at[i];
    at[i] = s + h;
    const double p = f(at);
    at[i] = s - h;
    const double m = f(at);
    at[i] = s;
    g[i] = (p - m) / (2 * h);
  }
  return g;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-8});
}

ForwardTrace trace_with(const EncodingQuad& q, double c, double w) {
  ForwardTrace t;
  t.quad = q;
  t.c_p = c;
  t.w_p = w;
  return t;
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("kd loss hand cases") {
  CHECK(kd_loss(vec({1, 2}), vec({1, 2})) == 0.0);
  CHECK(kd_loss(vec({1, 0}), vec({0, 0})) == doctest::Approx(1.0).epsilon(1e-15));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vector a = testutil::gaussian(rng, 9, 1), b = testutil::gaussian(rng, 9, 1);
    CHECK(kd_loss(a, b) == kd_loss(b, a));
    CHECK(kd_loss(a, b) == 2.0 * mse(a, b));
  }
  CHECK_THROWS_AS(kd_loss(vec({1}), vec({1, 2})), InputShapeError);
}

TEST_CASE("se loss hand cases") {
  const Vector same = vec({0.3, -0.2, 1.1});
  CHECK(se_loss(same, same, same, same) == 0.0);
  CHECK(se_loss(vec({1, 0}), vec({0, 0}), vec({2, 5}), vec({2, 5})) == doctest::Approx(0.11095).epsilon(1e-4));
  // Shifting logits leaves the softmax, and so the loss, unchanged.
  CHECK(se_loss(vec({1, 2}), vec({4, 5}), same, same) <= 1e-12);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vector a = 3 * testutil::gaussian(rng, 6, 1), b = 3 * testutil::gaussian(rng, 6, 1);
    CHECK(se_loss(a, b, b, a) >= 0.0);
  }
  CHECK_THROWS_AS(se_loss(vec({1}), vec({1, 2}), same, same), InputShapeError);
}

TEST_CASE("softmax is stable for large logits") {
  const Vector p = softmax(vec({1000, 1000, -1000}));
  CHECK(p.allFinite());
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[2] == 0.0);
  CHECK(kl_softmax(vec({800, 0}), vec({0, 800})) == doctest::Approx(800.0));
}

TEST_CASE("prediction loss") {
  CHECK(pred_loss(vec({1, 2}), vec({3, 4}), vec({1, 2}), vec({3, 4})) == 0.0);
  CHECK(pred_loss(vec({1}), vec({0}), vec({0}), vec({0})) == 1.0);
  const Vector cp = vec({1, -2, 0.5}), cg = vec({0, 1, 1}), wp = vec({2, 2, 2}), wg = vec({1, 0, 3});
  const Vector c2 = cg + 2 * (cp - cg), w2 = wg + 2 * (wp - wg);
  CHECK(pred_loss(c2, w2, cg, wg) == doctest::Approx(4 * pred_loss(cp, wp, cg, wg)));
  CHECK_THROWS_AS(pred_loss(Vector(0), Vector(0), Vector(0), Vector(0)), EmptyInputError);
}

TEST_CASE("pairwise loss gradients match finite differences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector a = testutil::gaussian(rng, 7, 1), b = testutil::gaussian(rng, 7, 1);
    const PairGrad m = mse_grad(a, b);
    CHECK(rel_err(m.da, numeric_grad([&](const Vector& x) { return mse(x, b); }, a)) <= 1e-6);
    CHECK(rel_err(m.db, numeric_grad([&](const Vector& x) { return mse(a, x); }, b)) <= 1e-6);
    const PairGrad k = kl_softmax_grad(a, b);
    CHECK(rel_err(k.da, numeric_grad([&](const Vector& x) { return kl_softmax(x, b); }, a)) <= 1e-6);
    CHECK(rel_err(k.db, numeric_grad([&](const Vector& x) { return kl_softmax(a, x); }, b)) <= 1e-6);
  }
}

TEST_CASE("total loss sums the active terms and averages regularizers") {
  std::mt19937_64 rng(4);
  auto rand_quad = [&] {
    return EncodingQuad{testutil::gaussian(rng, 4, 1), testutil::gaussian(rng, 4, 1),
                        testutil::gaussian(rng, 4, 1), testutil::gaussian(rng, 4, 1)};
  };
  const std::vector<ForwardTrace> batch{trace_with(rand_quad(), 0.5, 0.1), trace_with(rand_quad(), -0.3, 0.9)};
  const std::vector<WindowTarget> targets{{0.0, 0.0}, {1.0, 1.0}};
  const Toggles all;
  const LossReport r = total_loss(batch, targets, all);
  const double kd = 0.5 * (kd_loss(batch[0].quad.h_s, batch[0].quad.h_l) + kd_loss(batch[1].quad.h_s, batch[1].quad.h_l));
  CHECK(r.l_kd == doctest::Approx(kd));
  CHECK(r.l_pred == doctest::Approx((0.25 + 1.69) / 2 + (0.01 + 0.01) / 2));
  CHECK(std::abs(r.l_total - (r.l_pred + r.l_kd + r.l_se)) <= 1e-12);
  CHECK(r.l_se > 0.0);

  Toggles no_kd;
  no_kd.kd = false;
  const LossReport r2 = total_loss(batch, targets, no_kd);
  CHECK(r2.l_kd == r.l_kd);
  CHECK_FALSE(r2.kd_active);
  CHECK(std::abs(r2.l_total - (r2.l_pred + r2.l_se)) <= 1e-12);

  Toggles swapped;
  swapped.swap_kd_se = true;
  const LossReport r3 = total_loss(batch, targets, swapped);
  const auto& q = batch[0].quad;
  const RegTerms reg = regularizers(q, true);
  CHECK(reg.kd == doctest::Approx(kl_softmax(q.h_s, q.h_l) + kl_softmax(q.h_l, q.h_s)));
  CHECK(reg.se == doctest::Approx(mse(q.h_s_to_l, q.h_s) + mse(q.h_l_to_s, q.h_l)));
  CHECK(r3.swapped);

  CHECK_THROWS_AS(total_loss(std::span<const ForwardTrace>{}, std::span<const WindowTarget>{}, all), EmptyInputError);
}

TEST_CASE("loss gradient with respect to the encodings matches finite differences") {
  std::mt19937_64 rng(5);
  const EncodingQuad q{testutil::gaussian(rng, 5, 1), testutil::gaussian(rng, 5, 1),
                       testutil::gaussian(rng, 5, 1), testutil::gaussian(rng, 5, 1)};
  const WindowTarget target{0.2, -0.4};
  for (bool swap : {false, true}) {
    Toggles t;
    t.swap_kd_se = swap;
    const TraceGrad g = total_loss_grad(trace_with(q, 0.7, 0.3), target, t, 1);
    auto loss_at = [&](int member) {
      return [&, member](const Vector& x) {
        EncodingQuad m = q;
        (member == 0 ? m.h_s : member == 1 ? m.h_l : member == 2 ? m.h_s_to_l : m.h_l_to_s) = x;
        const ForwardTrace tr = trace_with(m, 0.7, 0.3);
        return total_loss(std::span<const ForwardTrace>(&tr, 1), std::span<const WindowTarget>(&target, 1), t).l_total;
      };
    };
    CHECK(rel_err(g.d_quad.h_s, numeric_grad(loss_at(0), q.h_s)) <= 1e-6);
    CHECK(rel_err(g.d_quad.h_l, numeric_grad(loss_at(1), q.h_l)) <= 1e-6);
    CHECK(rel_err(g.d_quad.h_s_to_l, numeric_grad(loss_at(2), q.h_s_to_l)) <= 1e-6);
    CHECK(rel_err(g.d_quad.h_l_to_s, numeric_grad(loss_at(3), q.h_l_to_s)) <= 1e-6);
    CHECK(g.d_c == doctest::Approx(2 * 0.5));
    CHECK(g.d_w == doctest::Approx(2 * 0.7));
  }
}

}  // TEST_SUITE

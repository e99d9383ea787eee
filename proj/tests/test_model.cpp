#include "doctest.h"
#include "dyadfuse/errors.hpp"
#include "dyadfuse/model.hpp"
#include "test_util.hpp"

using namespace dyadfuse;
using testutil::gaussian;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

AttentionParams identity_attention(Index d) {
  const Matrix eye = Matrix::Identity(d, d);
  return {eye, eye, eye, eye};
}

ModelConfig small_config() {
  ModelConfig c;
  c.speaker_dim = 5;
  c.listener_dim = 3;
  c.n_listeners = 3;
  c.blstm_hidden = 4;
  c.id_embed_dim = 6;
  c.d_model = 8;
  c.heads = 2;
  c.seed = 17;
  return c;
}

WindowInput random_window(std::mt19937_64& rng, const ModelConfig& c, Index frames, int id = 1) {
  return {gaussian(rng, frames, c.speaker_dim), gaussian(rng, frames, c.listener_dim), id};
}

}  // namespace

TEST_SUITE("fusion_model") {

TEST_CASE("one-hot encoding") {
  const Vector v = one_hot(3, 5);
  CHECK(v == (Vector(5) << 0, 0, 0, 1, 0).finished());
  CHECK(one_hot(0, 1) == Vector::Ones(1));
  CHECK_THROWS_AS(one_hot(40, 40), IndexError);
  CHECK_THROWS_AS(one_hot(-1, 40), IndexError);
}

TEST_CASE("initialization is seeded, bounded and shaped by the config") {
  const ModelConfig c = small_config();
  const ModelParams a = init_model(c), b = init_model(c);
  CHECK(a == b);
  ModelConfig other = c;
  other.seed = 18;
  CHECK_FALSE(init_model(other) == a);

  CHECK(a.fc_b.isZero(0.0));
  CHECK(a.speaker_fwd.b.isZero(0.0));
  const double bound = 1.0 / std::sqrt(static_cast<double>(c.speaker_dim + c.blstm_hidden));
  CHECK(a.speaker_fwd.w_x.cwiseAbs().maxCoeff() <= bound);
  CHECK(a.speaker_fwd.w_x.rows() == 4 * c.blstm_hidden);
  CHECK(a.fc_w.cols() == 4 * c.d_model);
  Toggles no_inter;
  no_inter.inter_attention = false;
  CHECK(init_model(c, no_inter).fc_w.cols() == 2 * c.d_model);

  ModelConfig defaults;
  CHECK(defaults.head_dim() == 4);
  defaults.d_model = 65;
  CHECK_THROWS_AS(init_model(defaults), ConfigError);
}

TEST_CASE("lstm matches a hand-unrolled single-unit cell") {
  LstmParams p;
  p.w_x = (Matrix(4, 1) << 0.5, -0.3, 0.8, 0.2).finished();
  p.w_h = (Matrix(4, 1) << 0.1, 0.4, -0.6, 0.7).finished();
  p.b = (Matrix(4, 1) << 0.05, 1.0, -0.1, 0.0).finished();
  const Matrix x = (Matrix(2, 1) << 0.7, -1.2).finished();

  auto step = [&](double xt, double& h, double& c) {
    const double i = sigmoid(0.5 * xt + 0.1 * h + 0.05);
    const double f = sigmoid(-0.3 * xt + 0.4 * h + 1.0);
    const double g = std::tanh(0.8 * xt - 0.6 * h - 0.1);
    const double o = sigmoid(0.2 * xt + 0.7 * h);
    c = f * c + i * g;
    h = o * std::tanh(c);
  };
  double h = 0, c = 0;
  step(0.7, h, c);
  const double f1 = h;
  step(-1.2, h, c);
  const double f2 = h;
  h = c = 0;
  step(-1.2, h, c);
  const double b2 = h;
  step(0.7, h, c);
  const double b1 = h;

  const Matrix out = blstm_forward(p, p, x);
  REQUIRE(out.rows() == 2);
  REQUIRE(out.cols() == 2);
  CHECK(out(0, 0) == doctest::Approx(f1).epsilon(1e-14));
  CHECK(out(1, 0) == doctest::Approx(f2).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(b1).epsilon(1e-14));
  CHECK(out(1, 1) == doctest::Approx(b2).epsilon(1e-14));

  // A single frame runs both directions from the same input.
  const Matrix one = blstm_forward(p, p, x.topRows(1));
  CHECK(one(0, 0) == one(0, 1));

  LstmParams zero{Matrix::Zero(8, 3), Matrix::Zero(8, 2), Matrix::Zero(8, 1)};
  CHECK(blstm_forward(zero, zero, Matrix::Zero(4, 3)).isZero(0.0));
  CHECK_THROWS_AS(blstm_forward(zero, zero, Matrix::Zero(4, 2)), InputShapeError);
}

TEST_CASE("attention over identical keys averages the values") {
  std::mt19937_64 rng(1);
  const Matrix q = gaussian(rng, 5, 4);
  const Matrix k = Matrix::Ones(7, 1) * gaussian(rng, 1, 4);
  const Matrix v = gaussian(rng, 7, 4);
  const Matrix out = multi_head_attention(identity_attention(4), 1, q, k, v);
  for (Index r = 0; r < 5; ++r) CHECK((out.row(r) - v.colwise().mean()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("single-head attention equals direct scaled dot-product attention") {
  std::mt19937_64 rng(2);
  AttentionParams p{gaussian(rng, 3, 4), gaussian(rng, 5, 4), gaussian(rng, 5, 4), gaussian(rng, 4, 4)};
  const Matrix q = gaussian(rng, 6, 3), kv = gaussian(rng, 9, 5);
  const Matrix qp = q * p.w_q, kp = kv * p.w_k, vp = kv * p.w_v;
  Matrix scores = qp * kp.transpose() / 2.0;  // sqrt(d_model / 1)
  for (Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - m).exp();
    scores.row(r) /= scores.row(r).sum();
  }
  const Matrix expected = scores * vp * p.w_o;
  CHECK((multi_head_attention(p, 1, q, kv, kv) - expected).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("attention is invariant to joint key/value permutation") {
  std::mt19937_64 rng(3);
  AttentionParams p{gaussian(rng, 6, 8), gaussian(rng, 6, 8), gaussian(rng, 6, 8), gaussian(rng, 8, 8)};
  const Matrix q = gaussian(rng, 7, 6), kv = gaussian(rng, 10, 6);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(10);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 10, rng);
  const Matrix kv_perm = perm * kv;
  AttentionCache cache;
  const Matrix a = multi_head_attention(p, 4, q, kv, kv, &cache);
  const Matrix b = multi_head_attention(p, 4, q, kv_perm, kv_perm);
  CHECK(a.rows() == 7);
  CHECK(a.cols() == 8);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE(cache.probs.size() == 4);
  for (const Matrix& pr : cache.probs) {
    CHECK(pr.minCoeff() >= 0.0);
    CHECK((pr.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
  }
  CHECK_THROWS_AS(multi_head_attention(p, 4, gaussian(rng, 7, 5), kv, kv), InputShapeError);
}

TEST_CASE("constant values pin the pre-projection attention output") {
  std::mt19937_64 rng(4);
  AttentionParams p{gaussian(rng, 3, 4), gaussian(rng, 5, 4), gaussian(rng, 5, 4), gaussian(rng, 4, 4)};
  const RowVector c = gaussian(rng, 1, 5);
  const Matrix kv = Matrix::Ones(6, 1) * c;
  AttentionCache cache;
  multi_head_attention(p, 2, gaussian(rng, 8, 3), kv, kv, &cache);
  const RowVector projected = c * p.w_v;
  for (Index r = 0; r < 8; ++r) CHECK((cache.concat.row(r) - projected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("forward pass shapes and eval determinism") {
  std::mt19937_64 rng(5);
  ModelConfig c;  // default-sized head
  c.speaker_dim = 6;
  c.listener_dim = 4;
  c.seed = 3;
  const Toggles t;
  const ModelParams p = init_model(c, t);
  const WindowInput w = random_window(rng, c, 100);
  const ForwardTrace a = forward(p, c, t, w);
  const ForwardTrace b = forward(p, c, t, w);
  CHECK(a.c_p == b.c_p);
  CHECK(a.w_p == b.w_p);
  CHECK(a.quad.h_s.size() == 64);
  CHECK(a.quad.h_l_to_s.size() == 64);
  CHECK(a.head_in.size() == 256);
  CHECK(a.dropout_mask.size() == 0);
  for (const auto& att : a.attention)
    for (const Matrix& pr : att.probs) CHECK((pr.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);

  Rng dropout = make_rng(1, "dropout");
  const ForwardTrace e = forward(p, c, t, w, Mode::eval, dropout);
  CHECK(e.c_p == a.c_p);
  const ForwardTrace tr = forward(p, c, t, w, Mode::train, dropout);
  CHECK(tr.dropout_mask.size() == 16);
  for (Index i = 0; i < 16; ++i) CHECK((tr.dropout_mask[i] == 0.0 || tr.dropout_mask[i] == 2.0));

  Toggles intra_only;
  intra_only.inter_attention = false;
  const ForwardTrace half = forward(init_model(c, intra_only), c, intra_only, w);
  CHECK(half.head_in.size() == 128);

  WindowInput bad = w;
  bad.listener_id = 4;
  CHECK_THROWS_AS(forward(p, c, t, bad), IndexError);
  bad = w;
  bad.listener = bad.listener.topRows(99);
  CHECK_THROWS_AS(forward(p, c, t, bad), InputShapeError);
  CHECK_THROWS_AS(forward(p, c, intra_only, w), InputShapeError);
}

TEST_CASE("listener id only changes the appended embedding columns") {
  std::mt19937_64 rng(6);
  const ModelConfig c = small_config();
  const Toggles t;
  const ModelParams p = init_model(c, t);
  WindowInput w = random_window(rng, c, 12, 0);
  const ForwardTrace a = forward(p, c, t, w);
  w.listener_id = 2;
  const ForwardTrace b = forward(p, c, t, w);
  const Index h2 = 2 * c.blstm_hidden;
  CHECK(a.listener_seq.leftCols(h2) == b.listener_seq.leftCols(h2));
  CHECK(a.listener_seq.rightCols(c.id_embed_dim) != b.listener_seq.rightCols(c.id_embed_dim));
  for (Index r = 0; r < 12; ++r)
    CHECK(b.listener_seq.row(r).tail(c.id_embed_dim).transpose() == p.id_embed.row(2).transpose());
  CHECK(a.speaker_seq == b.speaker_seq);

  Toggles no_id;
  no_id.listener_id = false;
  const ForwardTrace z = forward(p, c, no_id, w);
  CHECK(z.listener_seq.rightCols(c.id_embed_dim).isZero(0.0));
}

TEST_CASE("parameter container bookkeeping") {
  const ModelConfig c = small_config();
  ModelParams p = init_model(c);
  const auto names = p.names();
  CHECK(names.size() == p.blocks().size());
  CHECK(names.front() == "id_embed");
  CHECK(names.back() == "out_warmth.b");
  Index total = 0;
  for (const Matrix* m : p.blocks()) total += m->size();
  CHECK(total == p.size());

  const ModelParams zero = p.zeros_like();
  for (const Matrix* m : zero.blocks()) CHECK(m->isZero(0.0));
  ModelParams twice = p;
  twice.add_scaled(p, 1.0);
  CHECK(twice.fc_w == 2.0 * p.fc_w);
}

}  // TEST_SUITE

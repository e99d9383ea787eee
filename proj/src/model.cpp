#include "dyadfuse/model.hpp"

#include <cmath>

#include "dyadfuse/errors.hpp"

namespace dyadfuse {

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_cols(const Matrix& x, Index expected, const char* what) {
  if (x.cols() != expected)
    throw InputShapeError(std::string(what) + ": expected " + std::to_string(expected) + " columns, got " +
                          std::to_string(x.cols()));
}

void fill_uniform(Matrix& m, Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  m.resize(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
}

LstmParams init_lstm(Index input_dim, Index hidden, Rng& rng) {
  LstmParams p;
  fill_uniform(p.w_x, 4 * hidden, input_dim, input_dim + hidden, rng);
  fill_uniform(p.w_h, 4 * hidden, hidden, input_dim + hidden, rng);
  p.b = Matrix::Zero(4 * hidden, 1);
  return p;
}

AttentionParams init_attention(Index q_dim, Index kv_dim, Index d_model, Rng& rng) {
  AttentionParams p;
  fill_uniform(p.w_q, q_dim, d_model, q_dim, rng);
  fill_uniform(p.w_k, kv_dim, d_model, kv_dim, rng);
  fill_uniform(p.w_v, kv_dim, d_model, kv_dim, rng);
  fill_uniform(p.w_o, d_model, d_model, d_model, rng);
  return p;
}

Vector pool_rows(const Matrix& m) { return m.colwise().mean().transpose(); }

Vector or_zero(const Vector& v, Index n) { return v.size() == 0 ? Vector::Zero(n) : v; }

}  // namespace

void ModelConfig::validate() const {
  if (speaker_dim < 1 || listener_dim < 1) throw ConfigError("feature dims must be >= 1");
  if (n_listeners < 1) throw ConfigError("n_listeners must be >= 1");
  if (blstm_hidden < 1 || id_embed_dim < 1 || d_model < 1 || fc_hidden < 1)
    throw ConfigError("layer sizes must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (d_model % heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
}

std::vector<Matrix*> ModelParams::blocks() {
  std::vector<Matrix*> out;
  for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> ModelParams::blocks() const {
  std::vector<const Matrix*> out;
  for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for_each([&](const std::string& n, const Matrix&) { out.push_back(n); });
  return out;
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  auto dst = blocks();
  auto src = other.blocks();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->rows() != src[i]->rows() || dst[i]->cols() != src[i]->cols())
      throw InputShapeError("add_scaled: parameter shapes differ");
    if (scale == 1.0)
      *dst[i] += *src[i];
    else
      *dst[i] += scale * *src[i];
  }
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

Index ModelParams::size() const {
  Index n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  const auto pa = a.blocks();
  const auto pb = b.blocks();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->rows() != pb[i]->rows() || pa[i]->cols() != pb[i]->cols()) return false;
    if (*pa[i] != *pb[i]) return false;
  }
  return true;
}

Vector one_hot(int id, int n) {
  if (id < 0 || id >= n) throw IndexError("listener id " + std::to_string(id) + " outside [0, " + std::to_string(n) + ")");
  Vector v = Vector::Zero(n);
  v[id] = 1.0;
  return v;
}

ModelParams init_model(const ModelConfig& cfg, const Toggles& toggles) {
  cfg.validate();
  const int branches = toggles.active_branches();
  if (branches == 0) throw ConfigError("at least one of intra/inter attention must be active");
  Rng rng = make_rng(cfg.seed, "init");
  const Index h2 = 2 * cfg.blstm_hidden;
  const Index lis = h2 + cfg.id_embed_dim;
  ModelParams p;
  fill_uniform(p.id_embed, cfg.n_listeners, cfg.id_embed_dim, cfg.n_listeners, rng);
  p.speaker_fwd = init_lstm(cfg.speaker_dim, cfg.blstm_hidden, rng);
  p.speaker_bwd = init_lstm(cfg.speaker_dim, cfg.blstm_hidden, rng);
  p.listener_fwd = init_lstm(cfg.listener_dim, cfg.blstm_hidden, rng);
  p.listener_bwd = init_lstm(cfg.listener_dim, cfg.blstm_hidden, rng);
  p.intra_speaker = init_attention(h2, h2, cfg.d_model, rng);
  p.intra_listener = init_attention(lis, lis, cfg.d_model, rng);
  p.inter_s_to_l = init_attention(lis, h2, cfg.d_model, rng);
  p.inter_l_to_s = init_attention(h2, lis, cfg.d_model, rng);
  const Index head_in = branches * cfg.d_model;
  fill_uniform(p.fc_w, cfg.fc_hidden, head_in, head_in, rng);
  p.fc_b = Matrix::Zero(cfg.fc_hidden, 1);
  fill_uniform(p.out_c_w, 1, cfg.fc_hidden, cfg.fc_hidden, rng);
  p.out_c_b = Matrix::Zero(1, 1);
  fill_uniform(p.out_w_w, 1, cfg.fc_hidden, cfg.fc_hidden, rng);
  p.out_w_b = Matrix::Zero(1, 1);
  return p;
}

// ---------------------------------------------------------------------------

Matrix lstm_forward(const LstmParams& p, const Matrix& x, bool reverse, LstmCache* cache) {
  check_cols(x, p.w_x.cols(), "lstm input");
  const Index t_len = x.rows();
  const Index h = p.w_h.cols();
  if (t_len < 1) throw EmptyInputError("lstm: empty sequence");
  Matrix xin = x * p.w_x.transpose();
  xin.rowwise() += p.b.col(0).transpose();

  Matrix out(t_len, h);
  Matrix gates(t_len, 4 * h), cell(t_len, h), hidden(t_len, h);
  RowVector hs = RowVector::Zero(h), cs = RowVector::Zero(h);
  RowVector z(4 * h);
  for (Index k = 0; k < t_len; ++k) {
    const Index t = reverse ? t_len - 1 - k : k;
    z.noalias() = xin.row(t);
    z.noalias() += hs * p.w_h.transpose();
    for (Index j = 0; j < h; ++j) {
      const double ig = sigmoid(z[j]);
      const double fg = sigmoid(z[h + j]);
      const double gg = std::tanh(z[2 * h + j]);
      const double og = sigmoid(z[3 * h + j]);
      cs[j] = fg * cs[j] + ig * gg;
      hs[j] = og * std::tanh(cs[j]);
      gates(k, j) = ig;
      gates(k, h + j) = fg;
      gates(k, 2 * h + j) = gg;
      gates(k, 3 * h + j) = og;
    }
    cell.row(k) = cs;
    hidden.row(k) = hs;
    out.row(t) = hs;
  }
  if (cache) {
    cache->gates = std::move(gates);
    cache->cell = std::move(cell);
    cache->hidden = std::move(hidden);
  }
  return out;
}

void lstm_backward(const LstmParams& p, const Matrix& x, bool reverse, const LstmCache& cache,
                   const Matrix& d_out, LstmParams& grad) {
  const Index t_len = x.rows();
  const Index h = p.w_h.cols();
  Matrix dz(t_len, 4 * h);
  RowVector dh_next = RowVector::Zero(h), dc_next = RowVector::Zero(h);
  for (Index k = t_len - 1; k >= 0; --k) {
    const Index t = reverse ? t_len - 1 - k : k;
    for (Index j = 0; j < h; ++j) {
      const double ig = cache.gates(k, j);
      const double fg = cache.gates(k, h + j);
      const double gg = cache.gates(k, 2 * h + j);
      const double og = cache.gates(k, 3 * h + j);
      const double tc = std::tanh(cache.cell(k, j));
      const double c_prev = k > 0 ? cache.cell(k - 1, j) : 0.0;
      const double dh = d_out(t, j) + dh_next[j];
      const double d_o = dh * tc;
      const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
      dz(k, j) = dc * gg * ig * (1.0 - ig);
      dz(k, h + j) = dc * c_prev * fg * (1.0 - fg);
      dz(k, 2 * h + j) = dc * ig * (1.0 - gg * gg);
      dz(k, 3 * h + j) = d_o * og * (1.0 - og);
      dc_next[j] = dc * fg;
    }
    dh_next.noalias() = dz.row(k) * p.w_h;
  }
  Matrix h_prev = Matrix::Zero(t_len, h);
  if (t_len > 1) h_prev.bottomRows(t_len - 1) = cache.hidden.topRows(t_len - 1);
  if (reverse) {
    grad.w_x.noalias() += dz.transpose() * x.colwise().reverse();
  } else {
    grad.w_x.noalias() += dz.transpose() * x;
  }
  grad.w_h.noalias() += dz.transpose() * h_prev;
  grad.b += dz.colwise().sum().transpose();
}

Matrix blstm_forward(const LstmParams& fwd, const LstmParams& bwd, const Matrix& x, BlstmCache* cache) {
  const Index h = fwd.w_h.cols();
  Matrix out(x.rows(), 2 * h);
  out.leftCols(h) = lstm_forward(fwd, x, false, cache ? &cache->fwd : nullptr);
  out.rightCols(h) = lstm_forward(bwd, x, true, cache ? &cache->bwd : nullptr);
  return out;
}

// ---------------------------------------------------------------------------

Matrix multi_head_attention(const AttentionParams& p, Index heads, const Matrix& q, const Matrix& k, const Matrix& v,
                            AttentionCache* cache) {
  check_cols(q, p.w_q.rows(), "attention query");
  check_cols(k, p.w_k.rows(), "attention key");
  check_cols(v, p.w_v.rows(), "attention value");
  if (k.rows() != v.rows()) throw InputShapeError("attention: key and value lengths differ");
  if (q.rows() < 1 || k.rows() < 1) throw EmptyInputError("attention: empty sequence");
  const Index d = p.w_q.cols();
  if (heads < 1 || d % heads != 0) throw ConfigError("attention: d_model not divisible by heads");
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionCache local;
  AttentionCache& c = cache ? *cache : local;
  c.q_proj.noalias() = q * p.w_q;
  c.k_proj.noalias() = k * p.w_k;
  c.v_proj.noalias() = v * p.w_v;
  c.concat.resize(q.rows(), d);
  c.probs.resize(static_cast<std::size_t>(heads));
  for (Index i = 0; i < heads; ++i) {
    Matrix& prob = c.probs[static_cast<std::size_t>(i)];
    prob.noalias() = c.q_proj.middleCols(i * dh, dh) * c.k_proj.middleCols(i * dh, dh).transpose();
    prob *= scale;
    prob.colwise() -= prob.rowwise().maxCoeff();
    prob = prob.array().exp();
    prob.array().colwise() /= prob.rowwise().sum().array();
    c.concat.middleCols(i * dh, dh).noalias() = prob * c.v_proj.middleCols(i * dh, dh);
  }
  c.out.noalias() = c.concat * p.w_o;
  return c.out;
}

void multi_head_attention_backward(const AttentionParams& p, Index heads, const Matrix& q, const Matrix& k,
                                   const Matrix& v, const AttentionCache& c, const Matrix& d_out,
                                   AttentionParams& grad, Matrix& d_q, Matrix& d_k, Matrix& d_v) {
  const Index d = p.w_q.cols();
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  grad.w_o.noalias() += c.concat.transpose() * d_out;
  const Matrix d_concat = d_out * p.w_o.transpose();
  Matrix dq_proj(q.rows(), d), dk_proj(k.rows(), d), dv_proj(k.rows(), d);
  for (Index i = 0; i < heads; ++i) {
    const Matrix& prob = c.probs[static_cast<std::size_t>(i)];
    const auto d_head = d_concat.middleCols(i * dh, dh);
    Matrix d_prob = d_head * c.v_proj.middleCols(i * dh, dh).transpose();
    dv_proj.middleCols(i * dh, dh).noalias() = prob.transpose() * d_head;
    const Vector row_dot = d_prob.cwiseProduct(prob).rowwise().sum();
    Matrix d_score = prob.cwiseProduct(d_prob.colwise() - row_dot);
    d_score *= scale;
    dq_proj.middleCols(i * dh, dh).noalias() = d_score * c.k_proj.middleCols(i * dh, dh);
    dk_proj.middleCols(i * dh, dh).noalias() = d_score.transpose() * c.q_proj.middleCols(i * dh, dh);
  }
  grad.w_q.noalias() += q.transpose() * dq_proj;
  grad.w_k.noalias() += k.transpose() * dk_proj;
  grad.w_v.noalias() += v.transpose() * dv_proj;
  d_q.noalias() += dq_proj * p.w_q.transpose();
  d_k.noalias() += dk_proj * p.w_k.transpose();
  d_v.noalias() += dv_proj * p.w_v.transpose();
}

// ---------------------------------------------------------------------------

Vector draw_dropout_mask(Rng& rng, Index n, double p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector mask(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < n; ++i) mask[i] = u(rng) < p ? 0.0 : keep_scale;
  return mask;
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& cfg, const Toggles& toggles,
                     const WindowInput& window, const Vector* dropout_mask) {
  if (window.speaker.rows() != window.listener.rows())
    throw InputShapeError("forward: speaker window has " + std::to_string(window.speaker.rows()) +
                          " frames, listener window " + std::to_string(window.listener.rows()));
  check_cols(window.speaker, cfg.speaker_dim, "speaker window");
  check_cols(window.listener, cfg.listener_dim, "listener window");
  const Vector id = one_hot(window.listener_id, cfg.n_listeners);
  if (params.fc_w.cols() != toggles.active_branches() * cfg.d_model)
    throw InputShapeError("forward: head input width does not match the active attention branches");

  ForwardTrace tr;
  const Index h2 = 2 * cfg.blstm_hidden;
  const Index t_len = window.speaker.rows();
  tr.speaker_seq = blstm_forward(params.speaker_fwd, params.speaker_bwd, window.speaker, &tr.speaker_cache);
  const Matrix b = blstm_forward(params.listener_fwd, params.listener_bwd, window.listener, &tr.listener_cache);
  tr.listener_seq.resize(t_len, h2 + cfg.id_embed_dim);
  tr.listener_seq.leftCols(h2) = b;
  if (toggles.listener_id) {
    const Vector emb = params.id_embed.transpose() * id;
    tr.listener_seq.rightCols(cfg.id_embed_dim).rowwise() = emb.transpose();
  } else {
    tr.listener_seq.rightCols(cfg.id_embed_dim).setZero();
  }
  const Matrix& a = tr.speaker_seq;
  const Matrix& bp = tr.listener_seq;
  tr.quad.h_s = pool_rows(multi_head_attention(params.intra_speaker, cfg.heads, a, a, a, &tr.attention[0]));
  tr.quad.h_l = pool_rows(multi_head_attention(params.intra_listener, cfg.heads, bp, bp, bp, &tr.attention[1]));
  tr.quad.h_s_to_l = pool_rows(multi_head_attention(params.inter_s_to_l, cfg.heads, bp, a, a, &tr.attention[2]));
  tr.quad.h_l_to_s = pool_rows(multi_head_attention(params.inter_l_to_s, cfg.heads, a, bp, bp, &tr.attention[3]));

  const Index d = cfg.d_model;
  tr.head_in.resize(toggles.active_branches() * d);
  Index off = 0;
  if (toggles.intra_attention) {
    tr.head_in.segment(off, d) = tr.quad.h_s;
    tr.head_in.segment(off + d, d) = tr.quad.h_l;
    off += 2 * d;
  }
  if (toggles.inter_attention) {
    tr.head_in.segment(off, d) = tr.quad.h_s_to_l;
    tr.head_in.segment(off + d, d) = tr.quad.h_l_to_s;
  }
  tr.fc_pre = params.fc_w * tr.head_in + params.fc_b.col(0);
  tr.fc_post = tr.fc_pre.cwiseMax(0.0);
  if (dropout_mask) {
    if (dropout_mask->size() != cfg.fc_hidden) throw InputShapeError("dropout mask size mismatch");
    tr.dropout_mask = *dropout_mask;
    tr.fc_post = tr.fc_post.cwiseProduct(*dropout_mask);
  }
  tr.c_p = (params.out_c_w * tr.fc_post)(0, 0) + params.out_c_b(0, 0);
  tr.w_p = (params.out_w_w * tr.fc_post)(0, 0) + params.out_w_b(0, 0);
  return tr;
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& cfg, const Toggles& toggles,
                     const WindowInput& window, Mode mode, Rng& dropout_rng) {
  if (mode == Mode::eval) return forward(params, cfg, toggles, window, nullptr);
  const Vector mask = draw_dropout_mask(dropout_rng, cfg.fc_hidden, cfg.dropout_p);
  return forward(params, cfg, toggles, window, &mask);
}

void backward(const ModelParams& params, const ModelConfig& cfg, const Toggles& toggles, const WindowInput& window,
              const ForwardTrace& tr, const TraceGrad& up, ModelParams& grad) {
  const Index d = cfg.d_model;
  const Index h = cfg.blstm_hidden;
  const Index h2 = 2 * h;

  // Prediction head.
  grad.out_c_w += up.d_c * tr.fc_post.transpose();
  grad.out_c_b(0, 0) += up.d_c;
  grad.out_w_w += up.d_w * tr.fc_post.transpose();
  grad.out_w_b(0, 0) += up.d_w;
  Vector d_fc = up.d_c * params.out_c_w.row(0).transpose() + up.d_w * params.out_w_w.row(0).transpose();
  if (tr.dropout_mask.size() != 0) d_fc = d_fc.cwiseProduct(tr.dropout_mask);
  for (Index i = 0; i < d_fc.size(); ++i)
    if (tr.fc_pre[i] <= 0.0) d_fc[i] = 0.0;
  grad.fc_w.noalias() += d_fc * tr.head_in.transpose();
  grad.fc_b.col(0) += d_fc;
  const Vector d_head_in = params.fc_w.transpose() * d_fc;

  std::array<Vector, 4> d_enc = {or_zero(up.d_quad.h_s, d), or_zero(up.d_quad.h_l, d),
                                 or_zero(up.d_quad.h_s_to_l, d), or_zero(up.d_quad.h_l_to_s, d)};
  Index off = 0;
  if (toggles.intra_attention) {
    d_enc[0] += d_head_in.segment(off, d);
    d_enc[1] += d_head_in.segment(off + d, d);
    off += 2 * d;
  }
  if (toggles.inter_attention) {
    d_enc[2] += d_head_in.segment(off, d);
    d_enc[3] += d_head_in.segment(off + d, d);
  }

  // Attention blocks; mean pooling spreads each encoding gradient evenly over query rows.
  const Matrix& a = tr.speaker_seq;
  const Matrix& bp = tr.listener_seq;
  Matrix d_a = Matrix::Zero(a.rows(), a.cols());
  Matrix d_bp = Matrix::Zero(bp.rows(), bp.cols());
  auto pooled_grad = [](const Vector& g, Index rows) {
    Matrix m(rows, g.size());
    m.rowwise() = g.transpose() / static_cast<double>(rows);
    return m;
  };
  const Index t_len = a.rows();
  multi_head_attention_backward(params.intra_speaker, cfg.heads, a, a, a, tr.attention[0],
                                pooled_grad(d_enc[0], t_len), grad.intra_speaker, d_a, d_a, d_a);
  multi_head_attention_backward(params.intra_listener, cfg.heads, bp, bp, bp, tr.attention[1],
                                pooled_grad(d_enc[1], t_len), grad.intra_listener, d_bp, d_bp, d_bp);
  multi_head_attention_backward(params.inter_s_to_l, cfg.heads, bp, a, a, tr.attention[2],
                                pooled_grad(d_enc[2], t_len), grad.inter_s_to_l, d_bp, d_a, d_a);
  multi_head_attention_backward(params.inter_l_to_s, cfg.heads, a, bp, bp, tr.attention[3],
                                pooled_grad(d_enc[3], t_len), grad.inter_l_to_s, d_a, d_bp, d_bp);

  if (toggles.listener_id) {
    const Vector d_emb = d_bp.rightCols(cfg.id_embed_dim).colwise().sum().transpose();
    grad.id_embed.noalias() += one_hot(window.listener_id, cfg.n_listeners) * d_emb.transpose();
  }

  lstm_backward(params.speaker_fwd, window.speaker, false, tr.speaker_cache.fwd, d_a.leftCols(h), grad.speaker_fwd);
  lstm_backward(params.speaker_bwd, window.speaker, true, tr.speaker_cache.bwd, d_a.rightCols(h), grad.speaker_bwd);
  const Matrix d_b = d_bp.leftCols(h2);
  lstm_backward(params.listener_fwd, window.listener, false, tr.listener_cache.fwd, d_b.leftCols(h),
                grad.listener_fwd);
  lstm_backward(params.listener_bwd, window.listener, true, tr.listener_cache.bwd, d_b.rightCols(h),
                grad.listener_bwd);
}

}  // namespace dyadfuse

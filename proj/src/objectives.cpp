#include "dyadfuse/objectives.hpp"

#include <cmath>

#include "dyadfuse/errors.hpp"

namespace dyadfuse {

namespace {

void same_length(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size())
    throw InputShapeError(std::string(what) + ": length " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
}

Vector log_softmax(const Vector& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

}  // namespace

double mse(const Vector& a, const Vector& b) {
  same_length(a, b, "mse");
  if (a.size() == 0) throw EmptyInputError("mse: empty vectors");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

PairGrad mse_grad(const Vector& a, const Vector& b) {
  same_length(a, b, "mse");
  const Vector g = 2.0 * (a - b) / static_cast<double>(a.size());
  return {g, -g};
}

double kd_loss(const Vector& h_s, const Vector& h_l) {
  same_length(h_s, h_l, "kd_loss");
  return mse(h_s, h_l) + mse(h_l, h_s);
}

Vector softmax(const Vector& logits) { return log_softmax(logits).array().exp(); }

double kl_softmax(const Vector& p_logits, const Vector& q_logits) {
  same_length(p_logits, q_logits, "kl");
  const Vector log_p = log_softmax(p_logits);
  const Vector log_q = log_softmax(q_logits);
  const double kl = (log_p.array().exp() * (log_p - log_q).array()).sum();
  return std::max(kl, 0.0);
}

PairGrad kl_softmax_grad(const Vector& p_logits, const Vector& q_logits) {
  same_length(p_logits, q_logits, "kl");
  const Vector log_p = log_softmax(p_logits);
  const Vector log_q = log_softmax(q_logits);
  const Vector p = log_p.array().exp();
  const Vector q = log_q.array().exp();
  const Vector g = log_p - log_q;
  PairGrad out;
  out.da = p.cwiseProduct((g.array() - p.dot(g)).matrix());
  out.db = q - p;
  return out;
}

double se_loss(const Vector& h_s_to_l, const Vector& h_s, const Vector& h_l_to_s, const Vector& h_l) {
  same_length(h_s_to_l, h_s, "se_loss");
  same_length(h_l_to_s, h_l, "se_loss");
  return kl_softmax(h_s_to_l, h_s) + kl_softmax(h_l_to_s, h_l);
}

double pred_loss(const Vector& c_p, const Vector& w_p, const Vector& c_g, const Vector& w_g) {
  if (c_p.size() == 0) throw EmptyInputError("pred_loss: empty batch");
  same_length(c_p, c_g, "pred_loss");
  same_length(w_p, w_g, "pred_loss");
  same_length(c_p, w_p, "pred_loss");
  return mse(c_p, c_g) + mse(w_p, w_g);
}

RegTerms regularizers(const EncodingQuad& q, bool swap_kd_se) {
  if (!swap_kd_se) return {kd_loss(q.h_s, q.h_l), se_loss(q.h_s_to_l, q.h_s, q.h_l_to_s, q.h_l)};
  return {kl_softmax(q.h_s, q.h_l) + kl_softmax(q.h_l, q.h_s), mse(q.h_s_to_l, q.h_s) + mse(q.h_l_to_s, q.h_l)};
}

LossReport total_loss(std::span<const ForwardTrace> batch, std::span<const WindowTarget> targets,
                      const Toggles& toggles) {
  if (batch.empty()) throw EmptyInputError("total_loss: empty batch");
  if (batch.size() != targets.size()) throw InputShapeError("total_loss: batch and target counts differ");
  const Index n = static_cast<Index>(batch.size());
  Vector c_p(n), w_p(n), c_g(n), w_g(n);
  LossReport r;
  r.kd_active = toggles.kd;
  r.se_active = toggles.se;
  r.swapped = toggles.swap_kd_se;
  for (Index i = 0; i < n; ++i) {
    const auto& tr = batch[static_cast<std::size_t>(i)];
    c_p[i] = tr.c_p;
    w_p[i] = tr.w_p;
    c_g[i] = targets[static_cast<std::size_t>(i)].competence;
    w_g[i] = targets[static_cast<std::size_t>(i)].warmth;
    const RegTerms reg = regularizers(tr.quad, toggles.swap_kd_se);
    r.l_kd += reg.kd;
    r.l_se += reg.se;
  }
  r.l_kd /= static_cast<double>(n);
  r.l_se /= static_cast<double>(n);
  r.l_pred = pred_loss(c_p, w_p, c_g, w_g);
  r.l_total = r.l_pred + (toggles.kd ? r.l_kd : 0.0) + (toggles.se ? r.l_se : 0.0);
  return r;
}

TraceGrad total_loss_grad(const ForwardTrace& tr, const WindowTarget& target, const Toggles& toggles,
                          std::size_t batch_size) {
  const double inv_n = 1.0 / static_cast<double>(batch_size);
  TraceGrad g;
  g.d_c = 2.0 * (tr.c_p - target.competence) * inv_n;
  g.d_w = 2.0 * (tr.w_p - target.warmth) * inv_n;
  const EncodingQuad& q = tr.quad;
  const Index d = q.h_s.size();
  g.d_quad = {Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), Vector::Zero(d)};
  if (toggles.kd) {
    if (!toggles.swap_kd_se) {
      // Both MSE orderings contribute identical gradients.
      const PairGrad m = mse_grad(q.h_s, q.h_l);
      g.d_quad.h_s += 2.0 * inv_n * m.da;
      g.d_quad.h_l += 2.0 * inv_n * m.db;
    } else {
      const PairGrad a = kl_softmax_grad(q.h_s, q.h_l);
      const PairGrad b = kl_softmax_grad(q.h_l, q.h_s);
      g.d_quad.h_s += inv_n * (a.da + b.db);
      g.d_quad.h_l += inv_n * (a.db + b.da);
    }
  }
  if (toggles.se) {
    const PairGrad a = toggles.swap_kd_se ? mse_grad(q.h_s_to_l, q.h_s) : kl_softmax_grad(q.h_s_to_l, q.h_s);
    const PairGrad b = toggles.swap_kd_se ? mse_grad(q.h_l_to_s, q.h_l) : kl_softmax_grad(q.h_l_to_s, q.h_l);
    g.d_quad.h_s_to_l += inv_n * a.da;
    g.d_quad.h_s += inv_n * a.db;
    g.d_quad.h_l_to_s += inv_n * b.da;
    g.d_quad.h_l += inv_n * b.db;
  }
  return g;
}

}  // namespace dyadfuse

#pragma once

#include <span>

#include "dyadfuse/model.hpp"

namespace dyadfuse {

double mse(const Vector& a, const Vector& b);

/// MSE(h_s, h_l) + MSE(h_l, h_s).
double kd_loss(const Vector& h_s, const Vector& h_l);

Vector softmax(const Vector& logits);

/// KL(softmax(p_logits) || softmax(q_logits)), natural log.
double kl_softmax(const Vector& p_logits, const Vector& q_logits);

/// KL(s->l || s) + KL(l->s || l), each operand passed through softmax first.
double se_loss(const Vector& h_s_to_l, const Vector& h_s, const Vector& h_l_to_s, const Vector& h_l);

/// MSE(c_p, c_g) + MSE(w_p, w_g) over a batch of window predictions.
double pred_loss(const Vector& c_p, const Vector& w_p, const Vector& c_g, const Vector& w_g);

// Gradients of the pieces above with respect to their vector arguments.
struct PairGrad {
  Vector da, db;
};
PairGrad mse_grad(const Vector& a, const Vector& b);
PairGrad kl_softmax_grad(const Vector& p_logits, const Vector& q_logits);

struct LossReport {
  double l_pred = 0.0;
  double l_kd = 0.0;
  double l_se = 0.0;
  double l_total = 0.0;
  bool kd_active = true;
  bool se_active = true;
  bool swapped = false;
};

struct WindowTarget {
  double competence = 0.0;
  double warmth = 0.0;
};

/// Regularizer values for one window, honoring the KD/SE swap.
struct RegTerms {
  double kd = 0.0;
  double se = 0.0;
};
RegTerms regularizers(const EncodingQuad& quad, bool swap_kd_se);

/// L = L_pred + [kd] L_kd + [se] L_se with KD/SE averaged over the batch.
/// Inactive terms are still evaluated and reported.
LossReport total_loss(std::span<const ForwardTrace> batch, std::span<const WindowTarget> targets,
                      const Toggles& toggles);

/// Per-window upstream gradient of total_loss for a batch of `batch_size`.
TraceGrad total_loss_grad(const ForwardTrace& trace, const WindowTarget& target, const Toggles& toggles,
                          std::size_t batch_size);

}  // namespace dyadfuse

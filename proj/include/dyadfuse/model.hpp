#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dyadfuse/data.hpp"
#include "dyadfuse/rng.hpp"

namespace dyadfuse {

struct ModelConfig {
  Index speaker_dim = 24;
  Index listener_dim = 12;
  int n_listeners = 4;
  Index blstm_hidden = 32;  // per direction
  Index id_embed_dim = 64;
  Index d_model = 64;
  Index heads = 16;
  Index fc_hidden = 16;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;

  Index head_dim() const { return d_model / heads; }
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
};

/// Component switches. The first four shape the forward pass, the rest only
/// the objective.
struct Toggles {
  bool causality = true;
  bool listener_id = true;
  bool intra_attention = true;
  bool inter_attention = true;
  bool kd = true;
  bool se = true;
  bool swap_kd_se = false;

  int active_branches() const { return (intra_attention ? 2 : 0) + (inter_attention ? 2 : 0); }
  friend bool operator==(const Toggles&, const Toggles&) = default;
};

/// One direction of an LSTM. Gate rows are ordered input, forget, cell, output.
struct LstmParams {
  Matrix w_x;  // 4H x D
  Matrix w_h;  // 4H x H
  Matrix b;    // 4H x 1
};

/// Projections for one multi-head attention block. Head i uses columns
/// [i*dh, (i+1)*dh) of the Q/K/V projections.
struct AttentionParams {
  Matrix w_q;  // Dq x d_model
  Matrix w_k;  // Dk x d_model
  Matrix w_v;  // Dk x d_model
  Matrix w_o;  // d_model x d_model
};

struct ModelParams {
  Matrix id_embed;  // n_listeners x id_embed_dim
  LstmParams speaker_fwd, speaker_bwd;
  LstmParams listener_fwd, listener_bwd;
  AttentionParams intra_speaker, intra_listener;
  AttentionParams inter_s_to_l, inter_l_to_s;
  Matrix fc_w, fc_b;          // fc_hidden x head_in, fc_hidden x 1
  Matrix out_c_w, out_c_b;    // 1 x fc_hidden, 1 x 1
  Matrix out_w_w, out_w_b;

  /// Visits every block in a fixed order as f(name, matrix).
  template <class F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }

  std::vector<Matrix*> blocks();
  std::vector<const Matrix*> blocks() const;
  std::vector<std::string> names() const;

  ModelParams zeros_like() const;
  /// this += scale * other, block by block.
  void add_scaled(const ModelParams& other, double scale = 1.0);
  Index size() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  template <class Self, class F>
  static void for_each_impl(Self& p, F& f) {
    f("id_embed", p.id_embed);
    lstm(p.speaker_fwd, "speaker_lstm.fwd", f);
    lstm(p.speaker_bwd, "speaker_lstm.bwd", f);
    lstm(p.listener_fwd, "listener_lstm.fwd", f);
    lstm(p.listener_bwd, "listener_lstm.bwd", f);
    attention(p.intra_speaker, "intra_speaker", f);
    attention(p.intra_listener, "intra_listener", f);
    attention(p.inter_s_to_l, "inter_s_to_l", f);
    attention(p.inter_l_to_s, "inter_l_to_s", f);
    f("fc.w", p.fc_w);
    f("fc.b", p.fc_b);
    f("out_competence.w", p.out_c_w);
    f("out_competence.b", p.out_c_b);
    f("out_warmth.w", p.out_w_w);
    f("out_warmth.b", p.out_w_b);
  }
  template <class L, class F>
  static void lstm(L& l, const std::string& n, F& f) {
    f(n + ".w_x", l.w_x);
    f(n + ".w_h", l.w_h);
    f(n + ".b", l.b);
  }
  template <class A, class F>
  static void attention(A& a, const std::string& n, F& f) {
    f(n + ".w_q", a.w_q);
    f(n + ".w_k", a.w_k);
    f(n + ".w_v", a.w_v);
    f(n + ".w_o", a.w_o);
  }
};

Vector one_hot(int id, int n);

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases. The
/// head input width follows the active attention branches in `toggles`.
ModelParams init_model(const ModelConfig& cfg, const Toggles& toggles = {});

// ---------------------------------------------------------------------------
// Layer kernels with caches for the backward pass.

struct LstmCache {
  Matrix gates;   // T x 4H, activated (i, f, g, o)
  Matrix cell;    // T x H
  Matrix hidden;  // T x H, in processing order
};

/// Runs one LSTM direction. `reverse` walks frames T-1..0; output rows stay
/// aligned with input frames.
Matrix lstm_forward(const LstmParams& p, const Matrix& x, bool reverse, LstmCache* cache = nullptr);
void lstm_backward(const LstmParams& p, const Matrix& x, bool reverse, const LstmCache& cache,
                   const Matrix& d_out, LstmParams& grad);

struct BlstmCache {
  LstmCache fwd, bwd;
};

/// T x 2H: forward-time hidden states, then backward-time hidden states.
Matrix blstm_forward(const LstmParams& fwd, const LstmParams& bwd, const Matrix& x, BlstmCache* cache = nullptr);

struct AttentionCache {
  Matrix q_proj, k_proj, v_proj;  // T x d_model
  std::vector<Matrix> probs;      // per head, Tq x Tk, rows sum to 1
  Matrix concat;                  // Tq x d_model, heads before W^O
  Matrix out;                     // Tq x d_model
};

/// Concat_i softmax((Q Wq_i)(K Wk_i)^T / sqrt(dh)) (V Wv_i), times W^O.
Matrix multi_head_attention(const AttentionParams& p, Index heads, const Matrix& q, const Matrix& k,
                            const Matrix& v, AttentionCache* cache = nullptr);
/// Backward through attention given d(out). Accumulates parameter grads and
/// adds input grads into d_q / d_k / d_v (which must be pre-sized).
void multi_head_attention_backward(const AttentionParams& p, Index heads, const Matrix& q, const Matrix& k,
                                   const Matrix& v, const AttentionCache& cache, const Matrix& d_out,
                                   AttentionParams& grad, Matrix& d_q, Matrix& d_k, Matrix& d_v);

// ---------------------------------------------------------------------------
// Whole-window forward/backward.

struct WindowInput {
  Matrix speaker;   // gated, normalized; T_w x speaker_dim
  Matrix listener;  // normalized; T_w x listener_dim
  int listener_id = 0;
};

struct EncodingQuad {
  Vector h_s, h_l, h_s_to_l, h_l_to_s;
};

struct ForwardTrace {
  EncodingQuad quad;
  double c_p = 0.0;
  double w_p = 0.0;

  // Retained for the backward pass and for inspection.
  Matrix speaker_seq;   // A: speaker BLSTM output
  Matrix listener_seq;  // B': listener BLSTM output with the id embedding appended
  BlstmCache speaker_cache, listener_cache;
  std::array<AttentionCache, 4> attention;  // intra_s, intra_l, inter s->l, inter l->s
  Vector head_in, fc_pre, fc_post;          // fc_post is after ReLU and dropout
  Vector dropout_mask;                      // empty in eval mode
};

/// Inverted-dropout mask: each unit kept with probability 1-p and scaled by 1/(1-p).
Vector draw_dropout_mask(Rng& rng, Index n, double p);

enum class Mode { train, eval };

/// `dropout_mask` == nullptr runs in eval mode (dropout is the identity).
ForwardTrace forward(const ModelParams& params, const ModelConfig& cfg, const Toggles& toggles,
                     const WindowInput& window, const Vector* dropout_mask = nullptr);
ForwardTrace forward(const ModelParams& params, const ModelConfig& cfg, const Toggles& toggles,
                     const WindowInput& window, Mode mode, Rng& dropout_rng);

/// Upstream gradient for one window.
struct TraceGrad {
  EncodingQuad d_quad;  // zero-size vectors are treated as zero
  double d_c = 0.0;
  double d_w = 0.0;
};

/// Accumulates d(loss)/d(params) for one window into `grad`.
void backward(const ModelParams& params, const ModelConfig& cfg, const Toggles& toggles,
              const WindowInput& window, const ForwardTrace& trace, const TraceGrad& upstream,
              ModelParams& grad);

}  // namespace dyadfuse

#include "dyadfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>

#include "dyadfuse/errors.hpp"
#include "dyadfuse/evaluation.hpp"

namespace dyadfuse {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (halving_period < 1) throw ConfigError("halving_period must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (segment_length < 2) throw ConfigError("segment_length must be >= 2");
  if (!(variance_keep > 0.0 && variance_keep <= 1.0)) throw ConfigError("variance_keep must lie in (0, 1]");
  if (toggles.active_branches() == 0) throw ConfigError("intra and inter attention cannot both be off");
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  return cfg.lr0 * std::pow(0.5, epoch / cfg.halving_period);
}

AdamState adam_init(const ModelParams& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
  const auto names = grads.names();
  const auto g = grads.blocks();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!g[i]->allFinite()) throw NumericalError("non-finite gradient in parameter block '" + names[i] + "'");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto p = params.blocks();
  auto m = state.m.blocks();
  auto v = state.v.blocks();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i]->array() = state.beta1 * m[i]->array() + (1.0 - state.beta1) * g[i]->array();
    v[i]->array() = state.beta2 * v[i]->array() + (1.0 - state.beta2) * g[i]->array().square();
    p[i]->array() -= lr * (m[i]->array() / bc1) / ((v[i]->array() / bc2).sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------

namespace {

struct Normalized {
  std::vector<FeatureMatrix> speaker, listener;
};

Normalized normalize(const DyadDataset& ds, const NormStats& s, const NormStats& l) {
  Normalized n;
  for (const auto& d : ds.dyads) {
    n.speaker.push_back(zscore_apply(s, d.speaker));
    n.listener.push_back(zscore_apply(l, d.listener));
  }
  return n;
}

void slice_windows(const DyadDataset& ds, const std::vector<FeatureMatrix>& gated, const Normalized& n,
                   PreparedData& out) {
  out.inputs.clear();
  out.targets.clear();
  for (const Window& w : out.windows.windows) {
    WindowInput in;
    in.speaker = gated[w.dyad].data().middleRows(w.start, w.length());
    in.listener = n.listener[w.dyad].data().middleRows(w.start, w.length());
    in.listener_id = ds.dyads[w.dyad].listener_id;
    out.inputs.push_back(std::move(in));
    out.targets.push_back({w.competence, w.warmth});
  }
}

SegmentWeights unit_weights(Index frames, Index segment_length) {
  SegmentPlan plan = make_segment_plan(frames, segment_length);
  return {Vector::Ones(plan.count()), std::move(plan)};
}

}  // namespace

PreparedData prepare_data(const DyadDataset& ds, const TrainConfig& cfg, Exec exec) {
  ds.validate();
  PreparedData out;
  out.windows = build_windows(ds.dyads, cfg.segment_length, cfg.ratios, cfg.seed);

  std::vector<const FeatureMatrix*> spk, lis;
  std::vector<std::vector<Index>> rows(ds.dyads.size());
  for (const auto& d : ds.dyads) {
    spk.push_back(&d.speaker);
    lis.push_back(&d.listener);
  }
  for (const Window& w : out.windows.windows)
    if (w.split == Split::train)
      for (Index t = w.start; t < w.end; ++t) rows[w.dyad].push_back(t);
  out.speaker_stats = zscore_fit(spk, rows);
  out.listener_stats = zscore_fit(lis, rows);

  const Normalized n = normalize(ds, out.speaker_stats, out.listener_stats);
  std::vector<FeatureMatrix> gated;
  for (std::size_t d = 0; d < ds.dyads.size(); ++d) {
    if (cfg.toggles.causality) {
      const SegmentPlan plan = make_segment_plan(n.speaker[d].frames(), cfg.segment_length);
      out.weights.push_back(segmental_weights(n.speaker[d], n.listener[d], plan, cfg.variance_keep, exec));
    } else {
      out.weights.push_back(unit_weights(n.speaker[d].frames(), cfg.segment_length));
    }
    gated.push_back(gate(n.speaker[d], out.weights.back()));
  }
  slice_windows(ds, gated, n, out);
  return out;
}

PreparedData prepare_data(const DyadDataset& ds, const TrainConfig& cfg, const NormStats& speaker_stats,
                          const NormStats& listener_stats, const std::vector<SegmentWeights>& weights) {
  ds.validate();
  if (weights.size() != ds.dyads.size())
    throw InputShapeError("checkpoint holds weights for " + std::to_string(weights.size()) + " dyads, dataset has " +
                          std::to_string(ds.dyads.size()));
  PreparedData out;
  out.windows = build_windows(ds.dyads, cfg.segment_length, cfg.ratios, cfg.seed);
  out.speaker_stats = speaker_stats;
  out.listener_stats = listener_stats;
  out.weights = weights;
  const Normalized n = normalize(ds, speaker_stats, listener_stats);
  std::vector<FeatureMatrix> gated;
  for (std::size_t d = 0; d < ds.dyads.size(); ++d) gated.push_back(gate(n.speaker[d], weights[d]));
  slice_windows(ds, gated, n, out);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Keeps what total_loss reads and drops the layer caches.
ForwardTrace slim(ForwardTrace&& tr) {
  ForwardTrace s;
  s.quad = std::move(tr.quad);
  s.c_p = tr.c_p;
  s.w_p = tr.w_p;
  return s;
}

template <class Body>
void run_windows(std::size_t n, Exec exec, Body&& body) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (exec == Exec::parallel) {
    const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < count; ++i) guarded(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<WindowTarget> gather_targets(const PreparedData& data, std::span<const std::size_t> batch) {
  std::vector<WindowTarget> t;
  for (std::size_t i : batch) t.push_back(data.targets.at(i));
  return t;
}

}  // namespace

BatchResult batch_gradient(const ModelParams& params, const ModelConfig& mcfg, const Toggles& toggles,
                           const PreparedData& data, std::span<const std::size_t> batch, std::span<const Vector> masks,
                           Exec exec) {
  const std::size_t n = batch.size();
  if (n == 0) throw EmptyInputError("batch_gradient: empty batch");
  if (!masks.empty() && masks.size() != n) throw InputShapeError("batch_gradient: one dropout mask per window");
  std::vector<ForwardTrace> traces(n);
  std::vector<ModelParams> grads(n);
  run_windows(n, exec, [&](std::size_t i) {
    const WindowInput& in = data.inputs.at(batch[i]);
    ForwardTrace tr = forward(params, mcfg, toggles, in, masks.empty() ? nullptr : &masks[i]);
    grads[i] = params.zeros_like();
    backward(params, mcfg, toggles, in, tr, total_loss_grad(tr, data.targets.at(batch[i]), toggles, n), grads[i]);
    traces[i] = slim(std::move(tr));
  });
  BatchResult r;
  r.grad = std::move(grads[0]);
  for (std::size_t i = 1; i < n; ++i) r.grad.add_scaled(grads[i]);
  const auto targets = gather_targets(data, batch);
  r.loss = total_loss(traces, targets, toggles);
  return r;
}

LossReport batch_loss(const ModelParams& params, const ModelConfig& mcfg, const Toggles& toggles,
                      const PreparedData& data, std::span<const std::size_t> batch, std::span<const Vector> masks,
                      Exec exec) {
  const std::size_t n = batch.size();
  if (n == 0) throw EmptyInputError("batch_loss: empty batch");
  if (!masks.empty() && masks.size() != n) throw InputShapeError("batch_loss: one dropout mask per window");
  std::vector<ForwardTrace> traces(n);
  run_windows(n, exec, [&](std::size_t i) {
    traces[i] = slim(forward(params, mcfg, toggles, data.inputs.at(batch[i]), masks.empty() ? nullptr : &masks[i]));
  });
  const auto targets = gather_targets(data, batch);
  return total_loss(traces, targets, toggles);
}

// ---------------------------------------------------------------------------

namespace {

std::string rng_state(const Rng& a, const Rng& b) {
  std::ostringstream os;
  os << a << ' ' << b;
  return os.str();
}

double nan_mean(double a, double b) { return 0.5 * (a + b); }

}  // namespace

TrainResult train(const DyadDataset& ds, ModelConfig mcfg, const TrainConfig& tcfg, Exec exec) {
  tcfg.validate();
  ds.validate();
  mcfg.speaker_dim = ds.speaker_dim();
  mcfg.listener_dim = ds.listener_dim();
  mcfg.n_listeners = ds.n_listeners;
  mcfg.seed = tcfg.seed;
  mcfg.validate();

  const PreparedData data = prepare_data(ds, tcfg, exec);
  const auto train_idx = data.windows.indices(Split::train);
  const auto val_idx = data.windows.indices(Split::val);
  if (train_idx.empty()) throw InsufficientDataError("train split is empty");

  ModelParams params = init_model(mcfg, tcfg.toggles);
  AdamState adam = adam_init(params);
  Rng shuffle_rng = make_rng(tcfg.seed, "shuffle");
  Rng dropout_rng = make_rng(tcfg.seed, "dropout");

  auto snapshot = [&](int epoch) {
    Checkpoint c;
    c.model = mcfg;
    c.train = tcfg;
    c.params = params;
    c.speaker_stats = data.speaker_stats;
    c.listener_stats = data.listener_stats;
    c.weights = data.weights;
    c.epoch = epoch;
    c.rng_state = rng_state(shuffle_rng, dropout_rng);
    return c;
  };

  TrainResult result;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = train_idx;
  const std::size_t bs = static_cast<std::size_t>(tcfg.batch_size);
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tcfg);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_no) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(bs, order.size() - start));
      std::vector<Vector> masks;
      for (std::size_t i = 0; i < batch.size(); ++i)
        masks.push_back(draw_dropout_mask(dropout_rng, mcfg.fc_hidden, mcfg.dropout_p));
      BatchResult r = batch_gradient(params, mcfg, tcfg.toggles, data, batch, masks, exec);
      try {
        if (!std::isfinite(r.loss.l_total)) throw NumericalError("non-finite loss");
        adam_step(params, r.grad, adam, lr);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch_no) + ": " +
                             e.what());
      }
      const double w = static_cast<double>(batch.size());
      rec.l_pred += w * r.loss.l_pred;
      rec.l_kd += w * r.loss.l_kd;
      rec.l_se += w * r.loss.l_se;
      rec.l_total += w * r.loss.l_total;
    }
    const double total = static_cast<double>(order.size());
    rec.l_pred /= total;
    rec.l_kd /= total;
    rec.l_se /= total;
    rec.l_total /= total;

    rec.val_ccc_c = rec.val_ccc_w = std::numeric_limits<double>::quiet_NaN();
    if (val_idx.size() >= 2) {  // CCC needs two windows
      const Predictions p = predict(params, mcfg, tcfg.toggles, data, val_idx, exec);
      try {
        rec.val_ccc_c = ccc(p.competence, p.target_competence);
      } catch (const UndefinedMetricError&) {
      }
      try {
        rec.val_ccc_w = ccc(p.warmth, p.target_warmth);
      } catch (const UndefinedMetricError&) {
      }
    }
    result.history.push_back(rec);
    const double score = nan_mean(rec.val_ccc_c, rec.val_ccc_w);
    if (std::isfinite(score) && score > best_score) {
      best_score = score;
      result.best_ckpt = snapshot(epoch + 1);
      result.best_epoch = epoch + 1;
    }
  }
  result.final_ckpt = snapshot(tcfg.epochs);
  if (result.best_epoch == 0) {
    result.best_ckpt = result.final_ckpt;
    result.best_epoch = tcfg.epochs;
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,l_pred,l_kd,l_se,l_total,val_ccc_c,val_ccc_w\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_double(r.l_pred) << ',' << format_double(r.l_kd) << ',' << format_double(r.l_se)
        << ',' << format_double(r.l_total) << ',' << format_double(r.val_ccc_c) << ',' << format_double(r.val_ccc_w)
        << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.speaker_dim = 3;
  c.listener_dim = 2;
  c.n_listeners = 3;
  c.blstm_hidden = 2;
  c.id_embed_dim = 4;
  c.d_model = 4;
  c.heads = 2;
  c.fc_hidden = 16;
  c.dropout_p = 0.5;
  return c;
}

GradcheckReport gradcheck(const GradcheckOptions& opts) {
  // Below ~1e-5 central differences at h=1e-5 are dominated by roundoff in the loss.
  constexpr double kGradcheckFloor = 1e-5;
  ModelConfig cfg = gradcheck_model_config();
  cfg.seed = opts.seed;
  ModelParams params = init_model(cfg, opts.toggles);

  constexpr Index kFrames = 5;
  constexpr std::size_t kWindows = 3;
  Rng rng = make_rng(opts.seed, "gradcheck");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
  };
  PreparedData data;
  std::vector<std::size_t> batch;
  std::vector<Vector> masks;
  for (std::size_t w = 0; w < kWindows; ++w) {
    WindowInput in;
    in.speaker = gaussian(kFrames, cfg.speaker_dim);
    in.listener = gaussian(kFrames, cfg.listener_dim);
    in.listener_id = static_cast<int>(w) % cfg.n_listeners;
    data.inputs.push_back(std::move(in));
    data.targets.push_back({normal(rng), normal(rng)});
    batch.push_back(w);
    masks.push_back(draw_dropout_mask(rng, cfg.fc_hidden, cfg.dropout_p));
  }

  const ModelParams analytic =
      batch_gradient(params, cfg, opts.toggles, data, batch, masks, Exec::serial).grad;
  const auto names = params.names();
  auto blocks = params.blocks();
  const auto grads = analytic.blocks();

  GradcheckReport report;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockError be;
    be.name = names[b];
    be.entries = blocks[b]->size();
    for (Index k = 0; k < blocks[b]->size(); ++k) {
      double& x = blocks[b]->data()[k];
      const double saved = x;
      x = saved + opts.step;
      const double lp = batch_loss(params, cfg, opts.toggles, data, batch, masks, Exec::serial).l_total;
      x = saved - opts.step;
      const double lm = batch_loss(params, cfg, opts.toggles, data, batch, masks, Exec::serial).l_total;
      x = saved;
      const double numeric = (lp - lm) / (2.0 * opts.step);
      const double a = grads[b]->data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
      be.max_rel_error = std::max(be.max_rel_error, std::abs(a - numeric) / denom);
      be.max_abs_grad = std::max(be.max_abs_grad, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, be.max_rel_error);
    report.blocks.push_back(be);
  }
  report.pass = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace dyadfuse

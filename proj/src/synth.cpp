#include "dyadfuse/synth.hpp"

#include <cmath>
#include <string>

#include "dyadfuse/errors.hpp"
#include "dyadfuse/rng.hpp"

namespace dyadfuse {

namespace {

Matrix gaussian(Rng& rng, Index rows, Index cols, double std) {
  std::normal_distribution<double> n(0.0, std);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Trailing moving average over `window` rows of `raw`, which carries
// window - 1 rows of warm-up before the first output frame.
Matrix moving_average(const Matrix& raw, Index window) {
  const Index t_len = raw.rows() - (window - 1);
  Matrix out(t_len, raw.cols());
  for (Index t = 0; t < t_len; ++t) out.row(t) = raw.middleRows(t, window).colwise().mean();
  return out;
}

Vector moving_average(const Vector& v, Index window) {
  Vector out(v.size());
  double acc = 0.0;
  for (Index t = 0; t < v.size(); ++t) {
    acc += v[t];
    if (t >= window) acc -= v[t - window];
    out[t] = acc / static_cast<double>(std::min(t + 1, window));
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_listeners < 1) throw ConfigError("synth: n_listeners must be >= 1");
  if (frames < 1) throw ConfigError("synth: frames must be >= 1");
  if (speaker_dim < 2 || listener_dim < 2) throw ConfigError("synth: dims must be >= 2");
  if (salient_dims < 1 || salient_dims > speaker_dim) throw ConfigError("synth: salient_dims must lie in [1, speaker_dim]");
  if (segment_length < 2) throw ConfigError("synth: segment_length must be >= 2");
  if (lag < 0) throw ConfigError("synth: lag must be >= 0");
  if (speaker_smoothing < 1 || label_smoothing < 1) throw ConfigError("synth: smoothing windows must be >= 1");
  if (coupling_profile.empty()) throw ConfigError("synth: coupling profile is empty");
  for (double c : coupling_profile)
    if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("synth: coupling value " + std::to_string(c) + " outside [0, 1]");
  if (feature_noise_std < 0.0 || listener_bias_scale < 0.0 || label_noise_std < 0.0)
    throw ConfigError("synth: scales must be non-negative");
}

std::vector<double> expand_profile(const std::vector<double>& profile, Index segments) {
  std::vector<double> out(static_cast<std::size_t>(segments));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = profile[i % profile.size()];
  return out;
}

DyadDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const SegmentPlan plan = make_segment_plan(cfg.frames, cfg.segment_length);
  const std::vector<double> coupling = expand_profile(cfg.coupling_profile, plan.count());
  const Index k = cfg.salient_dims;

  // Shared across dyads: the listener response map and the label functionals.
  Rng shared = make_rng(cfg.seed, "synth.shared");
  const Matrix response = gaussian(shared, cfg.listener_dim, k, 1.0 / std::sqrt(static_cast<double>(k)));
  Vector comp_dir = gaussian(shared, k, 1, 1.0).col(0);
  Vector warm_dir = gaussian(shared, k, 1, 1.0).col(0);
  comp_dir *= cfg.label_gain / comp_dir.norm();
  warm_dir *= cfg.label_gain / warm_dir.norm();

  DyadDataset ds;
  ds.n_listeners = cfg.n_listeners;
  ds.segment_length = cfg.segment_length;
  ds.coupling_profile = coupling;
  for (int id = 0; id < cfg.n_listeners; ++id) {
    Rng lrng = make_rng(cfg.seed, "synth.listener." + std::to_string(id));
    const Vector feature_bias = gaussian(lrng, cfg.listener_dim, 1, cfg.listener_bias_scale).col(0);
    const Vector label_bias = gaussian(lrng, 2, 1, cfg.listener_bias_scale).col(0);

    Rng drng = make_rng(cfg.seed, "synth.dyad." + std::to_string(id));
    const Matrix raw = gaussian(drng, cfg.frames + cfg.speaker_smoothing - 1, cfg.speaker_dim, 1.0);
    const Matrix speaker = moving_average(raw, cfg.speaker_smoothing) *
                           std::sqrt(static_cast<double>(cfg.speaker_smoothing));
    Matrix listener = gaussian(drng, cfg.frames, cfg.listener_dim, cfg.feature_noise_std);
    Vector comp(cfg.frames), warm(cfg.frames);
    for (Index s = 0; s < plan.count(); ++s) {
      const double c = coupling[static_cast<std::size_t>(s)];
      for (Index t = plan.boundaries[s].first; t < plan.boundaries[s].second; ++t) {
        listener.row(t) += feature_bias.transpose();
        if (t >= cfg.lag) listener.row(t) += c * (response * speaker.row(t - cfg.lag).head(k).transpose()).transpose();
        comp[t] = c * speaker.row(t).head(k).dot(comp_dir) + label_bias[0];
        warm[t] = c * speaker.row(t).head(k).dot(warm_dir) + label_bias[1];
      }
    }
    const Matrix label_noise = gaussian(drng, cfg.frames, 2, cfg.label_noise_std);
    DyadRecord d;
    d.speaker = FeatureMatrix(speaker);
    d.listener = FeatureMatrix(std::move(listener));
    d.listener_id = id;
    d.labels.competence = moving_average(comp, cfg.label_smoothing) + label_noise.col(0);
    d.labels.warmth = moving_average(warm, cfg.label_smoothing) + label_noise.col(1);
    ds.dyads.push_back(std::move(d));
  }
  return ds;
}

}  // namespace dyadfuse

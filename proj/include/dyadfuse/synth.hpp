#pragma once

#include <cstdint>
#include <vector>

#include "dyadfuse/data.hpp"

namespace dyadfuse {

/// Synthetic dyads with planted speaker -> listener coupling.
///
/// Speaker features are moving-average smoothed Gaussian noise. In segment i
/// the listener responds with c_i times a lagged linear map of the first
/// `salient_dims` speaker features, plus a per-listener constant offset and
/// noise. Labels are fixed functionals of the same coupled subspace (scaled by
/// c_i) plus per-listener biases, smoothed and lightly noised.
struct SynthConfig {
  int n_listeners = 4;
  Index frames = 3000;
  Index speaker_dim = 24;
  Index listener_dim = 12;
  Index segment_length = 100;
  std::vector<double> coupling_profile = {1.0, 0.25, 0.75, 0.0, 0.5};  // cycled over segments
  Index lag = 2;
  Index salient_dims = 6;
  Index speaker_smoothing = 5;
  Index label_smoothing = 9;
  double feature_noise_std = 0.5;
  double listener_bias_scale = 1.0;
  double label_gain = 1.0;
  double label_noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-segment coupling strengths: the configured profile repeated to cover
/// `segments` entries.
std::vector<double> expand_profile(const std::vector<double>& profile, Index segments);

/// One dyad per listener (listener_id == dyad index). The dataset's
/// coupling_profile is the expanded per-segment profile.
DyadDataset generate(const SynthConfig& cfg);

}  // namespace dyadfuse

#pragma once

#include "dyadfuse/synth.hpp"
#include "dyadfuse/train.hpp"

namespace testutil {

// A few hundred frames of small-dimensional synthetic dyads: fast enough to train in unit tests.
inline dyadfuse::SynthConfig tiny_synth(std::uint64_t seed = 1) {
  dyadfuse::SynthConfig s;
  s.n_listeners = 2;
  s.frames = 500;
  s.speaker_dim = 6;
  s.listener_dim = 4;
  s.segment_length = 50;
  s.salient_dims = 3;
  s.seed = seed;
  return s;
}

inline dyadfuse::ModelConfig tiny_model() {
  dyadfuse::ModelConfig m;
  m.blstm_hidden = 4;
  m.id_embed_dim = 8;
  m.d_model = 8;
  m.heads = 2;
  return m;
}

inline dyadfuse::TrainConfig tiny_train(std::uint64_t seed = 1, int epochs = 3) {
  dyadfuse::TrainConfig t;
  t.seed = seed;
  t.epochs = epochs;
  t.batch_size = 4;
  t.segment_length = 50;
  return t;
}

}  // namespace testutil

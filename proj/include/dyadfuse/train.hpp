#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dyadfuse/cca.hpp"
#include "dyadfuse/data.hpp"
#include "dyadfuse/model.hpp"
#include "dyadfuse/objectives.hpp"

namespace dyadfuse {

struct TrainConfig {
  double lr0 = 1e-3;
  int halving_period = 20;
  int epochs = 40;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Toggles toggles;
  SplitRatios ratios;
  Index segment_length = 100;
  double variance_keep = kDefaultVarianceKeep;

  void validate() const;
};

/// lr0 * 0.5^floor(epoch / halving_period); `epoch` is zero-based.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(const ModelParams& params);

/// Bias-corrected Adam update. Throws NumericalError naming the first
/// parameter block with a non-finite gradient; nothing is updated then.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr);

/// Normalized, gated, windowed view of a dataset ready for the network.
struct PreparedData {
  WindowSet windows;
  std::vector<WindowInput> inputs;
  std::vector<WindowTarget> targets;
  NormStats speaker_stats;
  NormStats listener_stats;
  std::vector<SegmentWeights> weights;  // one per dyad; all ones when gating is off
};

/// Splits windows, fits z-score stats on training frames, then computes and
/// applies causality weights on the normalized features.
PreparedData prepare_data(const DyadDataset& dataset, const TrainConfig& cfg, Exec exec = Exec::parallel);

/// Re-applies stored normalization and weights (evaluation of a checkpoint).
PreparedData prepare_data(const DyadDataset& dataset, const TrainConfig& cfg, const NormStats& speaker_stats,
                          const NormStats& listener_stats, const std::vector<SegmentWeights>& weights);

struct BatchResult {
  LossReport loss;
  ModelParams grad;
};

/// Loss and gradient over `batch` (indices into data.inputs). `masks` holds one
/// dropout mask per batch entry, or is empty for eval-mode dropout.
/// Per-window gradients are summed in batch order, so both execution
/// policies return bit-identical results.
BatchResult batch_gradient(const ModelParams& params, const ModelConfig& mcfg, const Toggles& toggles,
                           const PreparedData& data, std::span<const std::size_t> batch,
                           std::span<const Vector> masks, Exec exec = Exec::parallel);

/// Loss only; same conventions as batch_gradient.
LossReport batch_loss(const ModelParams& params, const ModelConfig& mcfg, const Toggles& toggles,
                      const PreparedData& data, std::span<const std::size_t> batch, std::span<const Vector> masks,
                      Exec exec = Exec::parallel);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig model;
  TrainConfig train;
  ModelParams params;
  NormStats speaker_stats;
  NormStats listener_stats;
  std::vector<SegmentWeights> weights;
  int epoch = 0;
  std::string rng_state;
  std::string manifest;  // informational; evaluate may override
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double l_pred = 0.0;
  double l_kd = 0.0;
  double l_se = 0.0;
  double l_total = 0.0;
  double val_ccc_c = 0.0;
  double val_ccc_w = 0.0;
};

struct TrainResult {
  Checkpoint final_ckpt;
  Checkpoint best_ckpt;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

/// Model dims are taken from the dataset; the model is initialized from
/// `tcfg.seed`. Dropout and shuffling use separate derived streams.
TrainResult train(const DyadDataset& dataset, ModelConfig mcfg, const TrainConfig& tcfg,
                  Exec exec = Exec::parallel);

/// `epoch,l_pred,l_kd,l_se,l_total,val_ccc_c,val_ccc_w`.
void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

struct GradcheckOptions {
  std::uint64_t seed = 1;
  Toggles toggles;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct BlockError {
  std::string name;
  Index entries = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradcheckReport {
  std::vector<BlockError> blocks;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// blstm_hidden=2, d_model=4, heads=2, 5-frame windows.
ModelConfig gradcheck_model_config();

/// Central differences on every parameter of the tiny model against the
/// analytic gradient of l_total on a random micro-batch with fixed dropout masks.
/// Entry error is |a - n| / max(|a|, |n|, 1e-5).
GradcheckReport gradcheck(const GradcheckOptions& opts);

}  // namespace dyadfuse

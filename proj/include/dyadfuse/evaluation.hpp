#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dyadfuse/train.hpp"

namespace dyadfuse {

/// Lin's concordance correlation coefficient with population moments.
/// Returns 0 when exactly one side is constant; throws UndefinedMetricError
/// when both are.
double ccc(const Vector& x, const Vector& y);

struct Predictions {
  Vector competence, warmth;
  Vector target_competence, target_warmth;
};

/// Eval-mode forward over the given windows.
Predictions predict(const ModelParams& params, const ModelConfig& mcfg, const Toggles& toggles,
                    const PreparedData& data, std::span<const std::size_t> windows, Exec exec = Exec::parallel);

struct EvalResult {
  double ccc_competence = 0.0;
  double ccc_warmth = 0.0;
  std::size_t windows = 0;
  Toggles toggles;
};

EvalResult evaluate(const Checkpoint& ckpt, const DyadDataset& dataset, Split split, Exec exec = Exec::parallel);

enum class Component { causality, listener_id, inter_attn, intra_attn, kd, se };

Component parse_component(const std::string& name);
const char* component_name(Component c);
/// Toggles with `c` removed.
Toggles ablate(Toggles t, Component c);
/// Causality gating and listener-ID modeling both off.
Toggles without_listener_adaptation(Toggles t);

struct AblationRow {
  std::string run;  // "full" | "ablated"
  std::string component;
  std::string seed;  // decimal seed or "mean"
  double ccc_c = 0.0;
  double ccc_w = 0.0;
  double delta_c = 0.0;  // ablated - full, same seed
  double delta_w = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  double mean_full_c = 0.0, mean_full_w = 0.0;
  double mean_ablated_c = 0.0, mean_ablated_w = 0.0;
  double mean_delta_c = 0.0, mean_delta_w = 0.0;
};

/// Paired full-vs-ablated training per seed, scored on the test split of the
/// best-validation checkpoint. `no_listener_adaptation` runs both arms with
/// causality gating and listener IDs off.
AblationTable ablation_run(const DyadDataset& dataset, const ModelConfig& mcfg, const TrainConfig& base,
                           Component component, std::span<const std::uint64_t> seeds,
                           bool no_listener_adaptation = false, Exec exec = Exec::parallel);

/// `run,component,seed,ccc_c,ccc_w,delta_c,delta_w` with CCC x 100 to one decimal.
void write_results_csv(const std::filesystem::path& path, const AblationTable& table);

}  // namespace dyadfuse

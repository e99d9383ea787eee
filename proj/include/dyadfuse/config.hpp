#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "dyadfuse/model.hpp"
#include "dyadfuse/synth.hpp"
#include "dyadfuse/train.hpp"

namespace dyadfuse {

/// Everything a CLI run needs. Serialized as JSON with one object per section;
/// unknown keys anywhere are a ConfigError.
struct RunConfig {
  std::string manifest;
  std::string out_dir;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SynthConfig& c);
nlohmann::json to_json(const Toggles& t);
nlohmann::json to_json(const RunConfig& c);

/// Each reader starts from `base` and overrides the keys present in `j`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});
Toggles toggles_from_json(const nlohmann::json& j, Toggles base = {});
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace dyadfuse

#include "dyadfuse/config.hpp"

#include <fstream>
#include <set>

#include "dyadfuse/errors.hpp"

namespace dyadfuse {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in section '" + section + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const Toggles& t) {
  return {{"causality", t.causality}, {"listener_id", t.listener_id}, {"intra_attention", t.intra_attention},
          {"inter_attention", t.inter_attention}, {"kd", t.kd}, {"se", t.se}, {"swap_kd_se", t.swap_kd_se}};
}

json to_json(const ModelConfig& c) {
  return {{"speaker_dim", c.speaker_dim}, {"listener_dim", c.listener_dim}, {"n_listeners", c.n_listeners},
          {"blstm_hidden", c.blstm_hidden}, {"id_embed_dim", c.id_embed_dim}, {"d_model", c.d_model},
          {"heads", c.heads}, {"fc_hidden", c.fc_hidden}, {"dropout_p", c.dropout_p}, {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"halving_period", c.halving_period},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"toggles", to_json(c.toggles)},
          {"split_ratios", json::array({c.ratios.train, c.ratios.val, c.ratios.test})},
          {"segment_length", c.segment_length},
          {"variance_keep", c.variance_keep}};
}

json to_json(const SynthConfig& c) {
  return {{"n_listeners", c.n_listeners},
          {"frames", c.frames},
          {"speaker_dim", c.speaker_dim},
          {"listener_dim", c.listener_dim},
          {"segment_length", c.segment_length},
          {"coupling_profile", c.coupling_profile},
          {"lag", c.lag},
          {"salient_dims", c.salient_dims},
          {"speaker_smoothing", c.speaker_smoothing},
          {"label_smoothing", c.label_smoothing},
          {"feature_noise_std", c.feature_noise_std},
          {"listener_bias_scale", c.listener_bias_scale},
          {"label_gain", c.label_gain},
          {"label_noise_std", c.label_noise_std},
          {"seed", c.seed}};
}

json to_json(const RunConfig& c) {
  return {{"manifest", c.manifest},
          {"out_dir", c.out_dir},
          {"ModelConfig", to_json(c.model)},
          {"TrainConfig", to_json(c.train)},
          {"SynthConfig", to_json(c.synth)}};
}

Toggles toggles_from_json(const json& j, Toggles t) {
  const std::string s = "toggles";
  reject_unknown(j, {"causality", "listener_id", "intra_attention", "inter_attention", "kd", "se", "swap_kd_se"}, s);
  read(j, "causality", t.causality, s);
  read(j, "listener_id", t.listener_id, s);
  read(j, "intra_attention", t.intra_attention, s);
  read(j, "inter_attention", t.inter_attention, s);
  read(j, "kd", t.kd, s);
  read(j, "se", t.se, s);
  read(j, "swap_kd_se", t.swap_kd_se, s);
  return t;
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  const std::string s = "ModelConfig";
  reject_unknown(j, {"speaker_dim", "listener_dim", "n_listeners", "blstm_hidden", "id_embed_dim", "d_model", "heads",
                     "fc_hidden", "dropout_p", "seed"},
                 s);
  read(j, "speaker_dim", c.speaker_dim, s);
  read(j, "listener_dim", c.listener_dim, s);
  read(j, "n_listeners", c.n_listeners, s);
  read(j, "blstm_hidden", c.blstm_hidden, s);
  read(j, "id_embed_dim", c.id_embed_dim, s);
  read(j, "d_model", c.d_model, s);
  read(j, "heads", c.heads, s);
  read(j, "fc_hidden", c.fc_hidden, s);
  read(j, "dropout_p", c.dropout_p, s);
  read(j, "seed", c.seed, s);
  return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const std::string s = "TrainConfig";
  reject_unknown(j, {"lr0", "halving_period", "epochs", "batch_size", "seed", "toggles", "split_ratios",
                     "segment_length", "variance_keep"},
                 s);
  read(j, "lr0", c.lr0, s);
  read(j, "halving_period", c.halving_period, s);
  read(j, "epochs", c.epochs, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "seed", c.seed, s);
  read(j, "segment_length", c.segment_length, s);
  read(j, "variance_keep", c.variance_keep, s);
  if (j.contains("toggles")) c.toggles = toggles_from_json(j["toggles"], c.toggles);
  if (j.contains("split_ratios")) {
    std::vector<double> r;
    read(j, "split_ratios", r, s);
    if (r.size() != 3) throw ConfigError("TrainConfig.split_ratios must have three entries");
    c.ratios = {r[0], r[1], r[2]};
  }
  return c;
}

SynthConfig synth_config_from_json(const json& j, SynthConfig c) {
  const std::string s = "SynthConfig";
  reject_unknown(j, {"n_listeners", "frames", "speaker_dim", "listener_dim", "segment_length", "coupling_profile", "lag",
                     "salient_dims", "speaker_smoothing", "label_smoothing", "feature_noise_std",
                     "listener_bias_scale", "label_gain", "label_noise_std", "seed"},
                 s);
  read(j, "n_listeners", c.n_listeners, s);
  read(j, "frames", c.frames, s);
  read(j, "speaker_dim", c.speaker_dim, s);
  read(j, "listener_dim", c.listener_dim, s);
  read(j, "segment_length", c.segment_length, s);
  read(j, "coupling_profile", c.coupling_profile, s);
  read(j, "lag", c.lag, s);
  read(j, "salient_dims", c.salient_dims, s);
  read(j, "speaker_smoothing", c.speaker_smoothing, s);
  read(j, "label_smoothing", c.label_smoothing, s);
  read(j, "feature_noise_std", c.feature_noise_std, s);
  read(j, "listener_bias_scale", c.listener_bias_scale, s);
  read(j, "label_gain", c.label_gain, s);
  read(j, "label_noise_std", c.label_noise_std, s);
  read(j, "seed", c.seed, s);
  return c;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"manifest", "out_dir", "ModelConfig", "TrainConfig", "SynthConfig"}, "<root>");
  RunConfig c;
  read(j, "manifest", c.manifest, "<root>");
  read(j, "out_dir", c.out_dir, "<root>");
  if (j.contains("ModelConfig")) c.model = model_config_from_json(j["ModelConfig"]);
  if (j.contains("TrainConfig")) c.train = train_config_from_json(j["TrainConfig"]);
  if (j.contains("SynthConfig")) c.synth = synth_config_from_json(j["SynthConfig"]);
  c.model.validate();
  c.train.validate();
  c.synth.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dyadfuse

#include "dyadfuse/evaluation.hpp"

#include <cstdio>
#include <exception>
#include <fstream>

#include "dyadfuse/errors.hpp"

namespace dyadfuse {

double ccc(const Vector& x, const Vector& y) {
  if (x.size() != y.size())
    throw InputShapeError("ccc: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  if (x.size() < 2) throw EmptyInputError("ccc: need at least two values");
  const bool x_const = (x.array() == x[0]).all();
  const bool y_const = (y.array() == y[0]).all();
  if (x_const && y_const) throw UndefinedMetricError("ccc: both inputs are constant");
  const double n = static_cast<double>(x.size());
  const double mx = x.mean();
  const double my = y.mean();
  const Vector dx = x.array() - mx;
  const Vector dy = y.array() - my;
  const double vx = x_const ? 0.0 : dx.squaredNorm() / n;
  const double vy = y_const ? 0.0 : dy.squaredNorm() / n;
  const double cov = (x_const || y_const) ? 0.0 : dx.dot(dy) / n;
  return 2.0 * cov / (vx + vy + (mx - my) * (mx - my));
}

Predictions predict(const ModelParams& params, const ModelConfig& mcfg, const Toggles& toggles,
                    const PreparedData& data, std::span<const std::size_t> windows, Exec exec) {
  const Index n = static_cast<Index>(windows.size());
  Predictions p;
  p.competence.resize(n);
  p.warmth.resize(n);
  p.target_competence.resize(n);
  p.target_warmth.resize(n);
  std::vector<std::exception_ptr> errors(windows.size());
  auto one = [&](Index i) {
    try {
      const std::size_t w = windows[static_cast<std::size_t>(i)];
      const ForwardTrace tr = forward(params, mcfg, toggles, data.inputs.at(w));
      p.competence[i] = tr.c_p;
      p.warmth[i] = tr.w_p;
      p.target_competence[i] = data.targets.at(w).competence;
      p.target_warmth[i] = data.targets.at(w).warmth;
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (Index i = 0; i < n; ++i) one(i);
  } else {
    for (Index i = 0; i < n; ++i) one(i);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return p;
}

EvalResult evaluate(const Checkpoint& ckpt, const DyadDataset& dataset, Split split, Exec exec) {
  const PreparedData data =
      prepare_data(dataset, ckpt.train, ckpt.speaker_stats, ckpt.listener_stats, ckpt.weights);
  const auto idx = data.windows.indices(split);
  if (idx.empty()) throw InsufficientDataError(std::string("split '") + split_name(split) + "' has no windows");
  const Predictions p = predict(ckpt.params, ckpt.model, ckpt.train.toggles, data, idx, exec);
  EvalResult r;
  r.ccc_competence = ccc(p.competence, p.target_competence);
  r.ccc_warmth = ccc(p.warmth, p.target_warmth);
  r.windows = idx.size();
  r.toggles = ckpt.train.toggles;
  return r;
}

Component parse_component(const std::string& name) {
  if (name == "causality") return Component::causality;
  if (name == "listener-id") return Component::listener_id;
  if (name == "inter-attn") return Component::inter_attn;
  if (name == "intra-attn") return Component::intra_attn;
  if (name == "kd") return Component::kd;
  if (name == "se") return Component::se;
  throw ConfigError("unknown component '" + name + "' (causality|listener-id|inter-attn|intra-attn|kd|se)");
}

const char* component_name(Component c) {
  switch (c) {
    case Component::causality: return "causality";
    case Component::listener_id: return "listener-id";
    case Component::inter_attn: return "inter-attn";
    case Component::intra_attn: return "intra-attn";
    case Component::kd: return "kd";
    case Component::se: return "se";
  }
  return "?";
}

Toggles ablate(Toggles t, Component c) {
  switch (c) {
    case Component::causality: t.causality = false; break;
    case Component::listener_id: t.listener_id = false; break;
    case Component::inter_attn: t.inter_attention = false; break;
    case Component::intra_attn: t.intra_attention = false; break;
    case Component::kd: t.kd = false; break;
    case Component::se: t.se = false; break;
  }
  return t;
}

Toggles without_listener_adaptation(Toggles t) {
  t.causality = false;
  t.listener_id = false;
  return t;
}

AblationTable ablation_run(const DyadDataset& dataset, const ModelConfig& mcfg, const TrainConfig& base,
                           Component component, std::span<const std::uint64_t> seeds, bool no_listener_adaptation,
                           Exec exec) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationTable table;
  const std::string name = component_name(component);
  for (std::uint64_t seed : seeds) {
    TrainConfig full_cfg = base;
    full_cfg.seed = seed;
    if (no_listener_adaptation) full_cfg.toggles = without_listener_adaptation(full_cfg.toggles);
    TrainConfig ablated_cfg = full_cfg;
    ablated_cfg.toggles = ablate(full_cfg.toggles, component);

    const EvalResult full = evaluate(train(dataset, mcfg, full_cfg, exec).best_ckpt, dataset, Split::test, exec);
    const EvalResult abl = evaluate(train(dataset, mcfg, ablated_cfg, exec).best_ckpt, dataset, Split::test, exec);
    const std::string s = std::to_string(seed);
    table.rows.push_back({"full", name, s, full.ccc_competence, full.ccc_warmth, 0.0, 0.0});
    table.rows.push_back({"ablated", name, s, abl.ccc_competence, abl.ccc_warmth,
                          abl.ccc_competence - full.ccc_competence, abl.ccc_warmth - full.ccc_warmth});
    table.mean_full_c += full.ccc_competence;
    table.mean_full_w += full.ccc_warmth;
    table.mean_ablated_c += abl.ccc_competence;
    table.mean_ablated_w += abl.ccc_warmth;
  }
  const double n = static_cast<double>(seeds.size());
  table.mean_full_c /= n;
  table.mean_full_w /= n;
  table.mean_ablated_c /= n;
  table.mean_ablated_w /= n;
  table.mean_delta_c = table.mean_ablated_c - table.mean_full_c;
  table.mean_delta_w = table.mean_ablated_w - table.mean_full_w;
  table.rows.push_back({"full", name, "mean", table.mean_full_c, table.mean_full_w, 0.0, 0.0});
  table.rows.push_back({"ablated", name, "mean", table.mean_ablated_c, table.mean_ablated_w, table.mean_delta_c,
                        table.mean_delta_w});
  return table;
}

void write_results_csv(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return std::string(buf);
  };
  out << "run,component,seed,ccc_c,ccc_w,delta_c,delta_w\n";
  for (const auto& r : table.rows)
    out << r.run << ',' << r.component << ',' << r.seed << ',' << pct(r.ccc_c) << ',' << pct(r.ccc_w) << ','
        << pct(r.delta_c) << ',' << pct(r.delta_w) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dyadfuse

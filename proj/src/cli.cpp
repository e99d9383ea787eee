#include "dyadfuse/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"

#include "dyadfuse/config.hpp"
#include "dyadfuse/errors.hpp"
#include "dyadfuse/evaluation.hpp"

namespace fs = std::filesystem;

namespace dyadfuse {

namespace {

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError(flag + ": empty list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double v : parse_double_list(text, "--seeds")) {
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v)))
      throw ConfigError("--seeds: '" + std::to_string(v) + "' is not a non-negative integer");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Flags shared by train and ablate that override config values when given.
struct TrainOverrides {
  std::string config;
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  int epochs = 40;
  int batch_size = 32;
  std::vector<std::string> without;
  bool swap_kd_se = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;

  void attach(CLI::App* app, bool with_seed) {
    app->add_option("--config", config, "JSON run config (see `config print-default`)");
    app->add_option("--manifest", manifest, "dataset manifest; overrides the config's manifest");
    app->add_option("--out", out, "output directory; overrides the config's out_dir");
    if (with_seed) seed_opt = app->add_option("--seed", seed, "run seed; overrides TrainConfig.seed");
    epochs_opt = app->add_option("--epochs", epochs, "overrides TrainConfig.epochs")->check(CLI::PositiveNumber);
    batch_opt = app->add_option("--batch-size", batch_size, "overrides TrainConfig.batch_size")->check(CLI::PositiveNumber);
    app->add_option("--without", without, "components to disable: causality|listener-id|inter-attn|intra-attn|kd|se");
    app->add_flag("--swap-kd-se", swap_kd_se, "KD uses KL divergence and SE uses MSE");
  }

  RunConfig resolve() const {
    RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
    if (!manifest.empty()) rc.manifest = manifest;
    if (!out.empty()) rc.out_dir = out;
    if (seed_opt && seed_opt->count()) rc.train.seed = seed;
    if (epochs_opt->count()) rc.train.epochs = epochs;
    if (batch_opt->count()) rc.train.batch_size = batch_size;
    for (const auto& c : without) rc.train.toggles = ablate(rc.train.toggles, parse_component(c));
    if (swap_kd_se) rc.train.toggles.swap_kd_se = true;
    if (rc.manifest.empty()) throw ConfigError("no dataset manifest (use --manifest or the config's manifest key)");
    if (rc.out_dir.empty()) throw ConfigError("no output directory (use --out or the config's out_dir)");
    rc.train.validate();
    return rc;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Listener-adaptive cross-domain fusion for dyadic impression regression", "dyadfuse"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // synth-gen
  SynthConfig synth;
  std::string synth_out, coupling_text;
  auto* synth_cmd = app.add_subcommand("synth-gen", "Generate a synthetic dyad dataset with planted coupling");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--listeners", synth.n_listeners, "number of listeners (one dyad each)")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--frames", synth.frames, "frames per dyad")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--coupling", coupling_text, "comma-separated per-segment coupling in [0,1], cycled");
  synth_cmd->add_option("--speaker-dim", synth.speaker_dim, "speaker feature dimension");
  synth_cmd->add_option("--listener-dim", synth.listener_dim, "listener feature dimension");
  synth_cmd->add_option("--segment-len", synth.segment_length, "segment length in frames")->check(CLI::Range(2, 1 << 30));
  synth_cmd->add_option("--lag", synth.lag, "listener response lag in frames");
  synth_cmd->add_option("--listener-bias-scale", synth.listener_bias_scale, "scale of per-listener offsets");
  synth_cmd->add_option("--label-noise", synth.label_noise_std, "label noise standard deviation");

  // causality
  std::string spk_path, lis_path, weights_out;
  Index segment_len = 100;
  double variance_keep = kDefaultVarianceKeep;
  auto* caus_cmd = app.add_subcommand("causality", "Segmental PWCCA weights between speaker and listener features");
  caus_cmd->add_option("--speaker", spk_path, "speaker feature CSV")->required();
  caus_cmd->add_option("--listener", lis_path, "listener feature CSV")->required();
  caus_cmd->add_option("--segment-len", segment_len, "segment length in frames (>= 2)")->check(CLI::Range(2, 1 << 30));
  caus_cmd->add_option("--variance-keep", variance_keep, "fraction of variance kept before CCA")
      ->check(CLI::Range(1e-12, 1.0));
  caus_cmd->add_option("--out", weights_out, "weights CSV to write")->required();

  // train
  TrainOverrides train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train the fusion model");
  train_flags.attach(train_cmd, true);

  // evaluate
  std::string ckpt_path, eval_manifest, split_text = "test";
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on one split");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--split", split_text, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest; defaults to the one used for training");

  // ablate
  TrainOverrides ablate_flags;
  std::string component_text, seeds_text = "1,2,3";
  bool no_la = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "Paired full-vs-ablated training per seed");
  ablate_flags.attach(ablate_cmd, false);
  ablate_cmd->add_option("--component", component_text, "causality|listener-id|inter-attn|intra-attn|kd|se")
      ->required();
  ablate_cmd->add_option("--seeds", seeds_text, "comma-separated seeds");
  ablate_cmd->add_flag("--no-la", no_la, "run both arms without listener adaptation (causality and listener id off)");

  // gradcheck
  GradcheckOptions gc;
  std::string gc_out;
  bool gc_pred_only = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of analytic gradients on a tiny model");
  gc_cmd->add_option("--seed", gc.seed, "seed for parameters and micro-batch");
  gc_cmd->add_option("--tolerance", gc.tolerance, "maximum allowed relative error");
  gc_cmd->add_flag("--pred-only", gc_pred_only, "check the prediction loss alone (KD and SE off)");
  gc_cmd->add_option("--out", gc_out, "optional per-block report CSV");

  // config
  auto* config_cmd = app.add_subcommand("config", "Configuration helpers");
  config_cmd->require_subcommand(1);
  auto* print_default = config_cmd->add_subcommand("print-default", "Print the default run config as JSON");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    std::ostringstream os;
    os << app.help("", CLI::AppFormatMode::Normal);
    // CLI11 routes --help to the deepest parsed subcommand.
    for (auto* sub : app.get_subcommands()) {
      os.str("");
      os << sub->help();
      for (auto* subsub : sub->get_subcommands()) {
        os.str("");
        os << subsub->help();
      }
    }
    out << os.str();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::usage);
  }

  try {
    if (*synth_cmd) {
      if (!coupling_text.empty()) synth.coupling_profile = parse_double_list(coupling_text, "--coupling");
      try {
        synth.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(coupling_text.empty() ? "" : "--coupling: ") + e.what());
      }
      const DyadDataset ds = generate(synth);
      const fs::path manifest = export_dataset(ds, synth_out);
      RunConfig rc;
      rc.synth = synth;
      save_run_config(fs::path(synth_out) / "synth_config.json", rc);
      out << "synth-gen status=ok dyads=" << ds.dyads.size() << " frames=" << synth.frames
          << " segments=" << ds.coupling_profile.size() << " manifest=" << manifest.string() << '\n';
    } else if (*caus_cmd) {
      const FeatureMatrix s = load_feature_csv(spk_path);
      const FeatureMatrix l = load_feature_csv(lis_path);
      if (s.frames() != l.frames())
        throw InputShapeError("speaker has " + std::to_string(s.frames()) + " frames, listener " +
                              std::to_string(l.frames()));
      std::vector<Index> all(static_cast<std::size_t>(s.frames()));
      for (Index t = 0; t < s.frames(); ++t) all[static_cast<std::size_t>(t)] = t;
      const FeatureMatrix sn = zscore_apply(zscore_fit(s, all), s);
      const FeatureMatrix ln = zscore_apply(zscore_fit(l, all), l);
      const SegmentPlan plan = make_segment_plan(s.frames(), segment_len);
      const SegmentWeights w = segmental_weights(sn, ln, plan, variance_keep);
      write_weights_csv(weights_out, w);
      out << "causality status=ok segments=" << plan.count() << " last_len=" << plan.length(plan.count() - 1)
          << " mean_weight=" << fixed(w.weights.mean()) << " out=" << weights_out << '\n';
    } else if (*train_cmd) {
      const RunConfig rc = train_flags.resolve();
      const DyadDataset ds = load_manifest(rc.manifest);
      ensure_dir(rc.out_dir);
      save_run_config(fs::path(rc.out_dir) / "effective_config.json", rc);
      TrainResult r = train(ds, rc.model, rc.train);
      r.best_ckpt.manifest = r.final_ckpt.manifest = fs::absolute(rc.manifest).string();
      save_checkpoint(fs::path(rc.out_dir) / "best.ckpt", r.best_ckpt);
      save_checkpoint(fs::path(rc.out_dir) / "final.ckpt", r.final_ckpt);
      write_history_csv(fs::path(rc.out_dir) / "history.csv", r.history);
      for (std::size_t d = 0; d < r.final_ckpt.weights.size(); ++d)
        write_weights_csv(fs::path(rc.out_dir) / ("weights_dyad" + std::to_string(d) + ".csv"),
                          r.final_ckpt.weights[d]);
      const EvalResult test = evaluate(r.best_ckpt, ds, Split::test);
      const auto& last = r.history.back();
      out << "train status=ok epochs=" << rc.train.epochs << " best_epoch=" << r.best_epoch
          << " l_total=" << fixed(last.l_total) << " test_ccc_c=" << fixed(test.ccc_competence)
          << " test_ccc_w=" << fixed(test.ccc_warmth) << '\n';
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const std::string manifest = eval_manifest.empty() ? ckpt.manifest : eval_manifest;
      if (manifest.empty()) throw ConfigError("checkpoint names no manifest; pass --manifest");
      const DyadDataset ds = load_manifest(manifest);
      const EvalResult r = evaluate(ckpt, ds, parse_split(split_text));
      out << "evaluate split=" << split_text << " windows=" << r.windows << " ccc_c=" << fixed(r.ccc_competence)
          << " ccc_w=" << fixed(r.ccc_warmth) << '\n';
    } else if (*ablate_cmd) {
      const Component component = parse_component(component_text);
      const auto seeds = parse_seed_list(seeds_text);
      const RunConfig rc = ablate_flags.resolve();
      const DyadDataset ds = load_manifest(rc.manifest);
      ensure_dir(rc.out_dir);
      save_run_config(fs::path(rc.out_dir) / "effective_config.json", rc);
      const AblationTable t = ablation_run(ds, rc.model, rc.train, component, seeds, no_la);
      write_results_csv(fs::path(rc.out_dir) / "results.csv", t);
      out << "ablate status=ok component=" << component_text << " seeds=" << seeds.size()
          << " runs=" << 2 * seeds.size() << " mean_delta_c=" << fixed(t.mean_delta_c)
          << " mean_delta_w=" << fixed(t.mean_delta_w) << '\n';
    } else if (*gc_cmd) {
      if (gc_pred_only) gc.toggles.kd = gc.toggles.se = false;
      const GradcheckReport r = gradcheck(gc);
      if (!gc_out.empty()) {
        std::ofstream f(gc_out);
        if (!f) throw IoError("cannot write " + gc_out);
        f << "block,entries,max_rel_error,max_abs_grad\n";
        for (const auto& b : r.blocks)
          f << b.name << ',' << b.entries << ',' << format_sig(b.max_rel_error, 6) << ','
            << format_sig(b.max_abs_grad, 6) << '\n';
      }
      out << "gradcheck seed=" << gc.seed << " blocks=" << r.blocks.size()
          << " max_rel_error=" << format_sig(r.max_rel_error, 6) << " pass=" << (r.pass ? 1 : 0) << '\n';
      return r.pass ? 0 : static_cast<int>(ExitCode::numerical);
    } else if (*print_default) {
      out << to_json(RunConfig{}).dump(2) << '\n';
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::io);
  }
  return 0;
}

}  // namespace dyadfuse

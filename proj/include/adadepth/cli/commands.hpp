#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adadepth/cli/config.hpp"
#include "adadepth/cli/viz.hpp"
#include "adadepth/evalkit/evaluate.hpp"
#include "adadepth/scenegen/dataset.hpp"
#include "adadepth/trainkit/adapt.hpp"
#include "adadepth/trainkit/checkpoint.hpp"
#include "adadepth/trainkit/pretrain.hpp"
#include "adadepth/trainkit/sweep.hpp"
#include "adadepth/trainkit/train_log.hpp"

namespace adadepth::cli {

/// Flags shared by every subcommand.
struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string checkpoint;
  bool force = false;
  bool semi = false;
  std::optional<double> labeled_frac;
  std::vector<int> depths{1, 2, 3, 4};
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DatasetError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  return 1;
}

inline std::string error_line(const std::exception& e) {
  const auto* ae = dynamic_cast<const Error*>(&e);
  std::string msg = e.what();
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  return std::string("error: ") + (ae ? ae->kind() : "error") + ": " + msg;
}

namespace detail {

inline RunConfig resolve_config(const Options& o) {
  json j = o.config.empty() ? json::object() : json();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot open config " + o.config);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + o.config + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
  }
  if (o.seed) {
    j["seed"] = *o.seed;
    for (const char* block : {"pretrain", "adapt"})
      if (j.contains(block) && j[block].is_object()) j[block].erase("seed");
  }
  if (o.labeled_frac) j["adapt"]["semi"]["labeled_frac"] = *o.labeled_frac;
  return run_config_from_json(j);
}

inline void require_flag(const std::string& value, const char* flag, const char* cmd) {
  if (value.empty()) throw ConfigError(std::string(cmd) + " needs " + flag);
}

/// Refuses to reuse a non-empty directory unless forced. Called only after
/// every input has been validated.
inline fs::path prepare_out(const Options& o, const RunConfig& cfg) {
  const fs::path out(o.out);
  std::error_code ec;
  if (fs::exists(out) && !fs::is_empty(out, ec)) {
    if (!o.force) throw ConfigError("output directory " + out.string() + " exists; pass --force to replace it");
    fs::remove_all(out, ec);
    if (ec) throw IoError("cannot clear " + out.string() + ": " + ec.message());
  }
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  std::ofstream echo(out / "config.json");
  echo << to_json(cfg).dump(2) << "\n";
  if (!echo) throw IoError("cannot write config echo in " + out.string());
  return out;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
  if (!f) throw IoError("cannot write " + p.string());
}

inline scenegen::DatasetManifest split_manifest(const std::string& data, scenegen::Split s, const RunConfig& cfg) {
  auto m = scenegen::load_manifest(fs::path(data) / scenegen::to_string(s));
  if (m.height != cfg.arch.height || m.width != cfg.arch.width)
    throw DatasetError("split " + std::string(scenegen::to_string(s)) + " has image size " + std::to_string(m.height) +
                       "x" + std::to_string(m.width) + ", the architecture expects " +
                       std::to_string(cfg.arch.height) + "x" + std::to_string(cfg.arch.width));
  return m;
}

inline trainkit::Checkpoint model_checkpoint(const trainkit::Net& net) {
  trainkit::Checkpoint ck;
  ck.config = {{"kind", "model"}, {"arch", trainkit::AdaptSession::arch_to_json(net.arch())}};
  ck.put("net.", net.params());
  return ck;
}

/// A predictor from either a pretrain checkpoint or an adapt checkpoint.
inline trainkit::DepthModel load_model(const std::string& dir) {
  const trainkit::Checkpoint ck = trainkit::load_checkpoint(dir);
  if (!ck.config.contains("arch")) throw CheckpointError("checkpoint " + dir + " carries no architecture");
  const depthnet::ArchConfig arch = trainkit::AdaptSession::arch_from_json(ck.config.at("arch"));
  trainkit::Net net(arch, 0);
  std::optional<congruency::ResidualBranch<float>> dm;
  if (ck.config.contains("adapt")) {
    const trainkit::AdaptConfig a = trainkit::adapt_config_from_json(ck.config.at("adapt"));
    net.apply_partition(a.partition);
    if (a.regularizer == trainkit::Regularizer::rtf) {
      dm.emplace(arch, 0);
      ck.take("delta_m.", dm->params());
    }
  }
  ck.take("net.", net.params());
  return trainkit::DepthModel{std::move(net), std::move(dm)};
}

inline void check_arch(const trainkit::Net& net, const RunConfig& cfg) {
  if (trainkit::AdaptSession::arch_to_json(net.arch()) != trainkit::AdaptSession::arch_to_json(cfg.arch))
    throw ConfigError("checkpoint architecture differs from the config's arch block");
}

inline nlohmann::ordered_json pretrain_json(const trainkit::PretrainResult& r) {
  nlohmann::ordered_json j;
  j["val_rel"] = r.val_rel;
  j["best_epoch"] = r.best_epoch;
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"loss_start", e.loss_start},
                      {"loss_end", e.loss_end},
                      {"loss_mean", e.loss_mean},
                      {"val_rel", e.val_rel}});
  j["epochs"] = epochs;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_gen(const Options& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o);
  require_flag(o.out, "--out", "gen");
  const fs::path out = prepare_out(o, cfg);
  auto built = scenegen::build_dataset(cfg.corpus.n_train, cfg.corpus.n_eval, cfg.scene, cfg.shift, out,
                                       cfg.corpus.base_seed, cfg.n_labeled());
  log << "gen: " << built.source_train.size() << " source, " << built.target_train.size() << " target, "
      << built.target_eval.size() << " eval, " << (built.target_labeled ? built.target_labeled->size() : 0)
      << " labeled target images under " << out.string() << "\n";
}

inline void cmd_pretrain(const Options& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o);
  require_flag(o.out, "--out", "pretrain");
  require_flag(o.data, "--data", "pretrain");
  const auto source = split_manifest(o.data, scenegen::Split::source_train, cfg);
  const fs::path out = prepare_out(o, cfg);
  auto res = trainkit::pretrain_source(trainkit::Net(cfg.arch, cfg.pretrain.seed), source, cfg.pretrain,
                                       [&](const trainkit::PretrainEpoch& e) {
                                         log << "pretrain: epoch " << e.epoch << " loss " << e.loss_mean
                                             << " val rel " << e.val_rel << "\n";
                                       });
  trainkit::save_checkpoint(model_checkpoint(res.net), out / "checkpoint");
  write_text(out / "pretrain.json", pretrain_json(res).dump(2) + "\n");
  log << "pretrain: best epoch " << res.best_epoch << ", val rel " << res.val_rel << "\n";
}

inline void cmd_adapt(const Options& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o);
  require_flag(o.out, "--out", "adapt");
  require_flag(o.data, "--data", "adapt");
  require_flag(o.checkpoint, "--checkpoint", "adapt");
  const trainkit::DepthModel init = load_model(o.checkpoint);
  if (init.delta_m) throw ConfigError("adapt starts from a pretrain checkpoint, not an adapted one");
  check_arch(init.net, cfg);
  const auto source_m = split_manifest(o.data, scenegen::Split::source_train, cfg);
  const auto target_m = split_manifest(o.data, scenegen::Split::target_train, cfg);
  std::optional<scenegen::DatasetManifest> labeled_m;
  std::size_t n_labeled = 0;
  if (o.semi) {
    labeled_m = split_manifest(o.data, scenegen::Split::target_labeled, cfg);
    n_labeled = std::size_t(std::llround(cfg.adapt.semi.labeled_frac * double(target_m.size())));
    if (n_labeled == 0) throw ConfigError("labeled fraction selects no labeled target images");
    if (n_labeled > labeled_m->size())
      throw DatasetError("labeled fraction needs " + std::to_string(n_labeled) + " labeled images, the split has " +
                         std::to_string(labeled_m->size()));
  }
  const fs::path out = prepare_out(o, cfg);

  const scenegen::LabeledSet source = scenegen::load_labeled(source_m);
  const scenegen::ImageSet target = scenegen::load_images(target_m);
  trainkit::AdaptSession s(init.net, trainkit::AdaptData{&source, &target}, cfg.adapt);
  const int every = std::max(1, cfg.adapt.k_outer / 10);
  for (int k = 0; k < cfg.adapt.k_outer; ++k) {
    s.step();
    if ((k + 1) % every == 0) {
      const auto& r = s.log().records.back();
      log << "adapt: iter " << r.iter << " L_final " << r.l_final << " content " << r.l_content << "\n";
    }
  }
  if (o.semi) {
    s.attach_labeled(scenegen::load_labeled(*labeled_m, n_labeled));
    s.run_semi(cfg.adapt.semi.k_outer);
  }
  trainkit::save_checkpoint(s.checkpoint(), out / "checkpoint");
  trainkit::write_ndjson(s.log(), (out / "train_log.ndjson").string());
  nlohmann::ordered_json summary;
  summary["iterations"] = s.iteration();
  summary["semi"] = o.semi;
  summary["labeled_images"] = n_labeled;
  summary["warnings"] = s.log().warnings();
  if (s.ct_pretrain()) {
    summary["ct_pretrain"] = {{"initial_holdout_loss", s.ct_pretrain()->initial_holdout_loss},
                              {"final_holdout_loss", s.ct_pretrain()->final_holdout_loss},
                              {"warning", s.ct_pretrain()->warning}};
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  log << "adapt: " << s.iteration() << " iterations, " << s.log().warnings() << " warnings\n";
}

inline void cmd_eval(const Options& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o);
  require_flag(o.out, "--out", "eval");
  require_flag(o.data, "--data", "eval");
  require_flag(o.checkpoint, "--checkpoint", "eval");
  const trainkit::DepthModel model = load_model(o.checkpoint);
  check_arch(model.net, cfg);
  const auto eval_m = split_manifest(o.data, scenegen::Split::target_eval, cfg);
  const fs::path out = prepare_out(o, cfg);

  const auto report = evalkit::evaluate_dataset(model, eval_m, cfg.eval);
  write_text(out / "metrics.json", evalkit::to_json(report, cfg.eval).dump(2) + "\n");
  write_text(out / "metrics.txt", evalkit::to_text(report.aggregate));
  if (cfg.viz_count > 0) {
    fs::create_directories(out / "viz");
    const DepthRange range{cfg.scene.near, cfg.scene.far};
    const std::size_t n = std::min(eval_m.size(), std::size_t(cfg.viz_count));
    for (std::size_t i = 0; i < n; ++i) {
      auto s = scenegen::load_sample(eval_m, i);
      char name[32];
      std::snprintf(name, sizeof name, "%03zu", i);
      export_viz(model.predict(s.image), (out / "viz" / (std::string("pred_") + name + ".png")).string(), range);
      export_viz(*s.depth, (out / "viz" / (std::string("gt_") + name + ".png")).string(), range);
    }
  }
  log << evalkit::to_text(report.aggregate);
}

inline void cmd_sweep(const Options& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o);
  require_flag(o.out, "--out", "sweep");
  require_flag(o.data, "--data", "sweep");
  require_flag(o.checkpoint, "--checkpoint", "sweep");
  if (o.depths.empty()) throw ConfigError("sweep needs at least one adapt depth");
  for (int d : o.depths)
    if (d < 1 || d > depthnet::n_stages) throw ConfigError("adapt depth " + std::to_string(d) + " is out of range");
  const trainkit::DepthModel init = load_model(o.checkpoint);
  if (init.delta_m) throw ConfigError("sweep starts from a pretrain checkpoint, not an adapted one");
  check_arch(init.net, cfg);
  const auto source_m = split_manifest(o.data, scenegen::Split::source_train, cfg);
  const auto target_m = split_manifest(o.data, scenegen::Split::target_train, cfg);
  const auto eval_m = split_manifest(o.data, scenegen::Split::target_eval, cfg);
  const fs::path out = prepare_out(o, cfg);

  const scenegen::LabeledSet source = scenegen::load_labeled(source_m);
  const scenegen::ImageSet target = scenegen::load_images(target_m);
  trainkit::AdaptData data{&source, &target};
  trainkit::FeatureCachePool pool(init.net, data);
  // Evaluation labels are read only after every adaptation run has finished.
  std::vector<trainkit::DepthModel> models;
  std::vector<std::size_t> trainable;
  trainkit::AdaptConfig a = cfg.adapt;
  a.regularizer = trainkit::Regularizer::dcr;
  for (int d : o.depths) {
    a.partition.adapt_depth = d;
    trainkit::AdaptSession s(init.net, data, a, pool.get(trainkit::AdaptSession::first_adaptable_stage(a)));
    s.run(a.k_outer);
    models.push_back(s.model());
    trainable.push_back(s.trainable_scalars());
    log << "sweep: adapt_depth " << d << " done\n";
  }
  const scenegen::LabeledSet eval = scenegen::load_labeled(eval_m);
  std::vector<trainkit::SweepRow> rows;
  for (std::size_t i = 0; i < models.size(); ++i)
    rows.push_back({o.depths[i], trainable[i], evalkit::evaluate_labeled(models[i], eval, cfg.eval).aggregate});
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["adapt_depth"] = r.adapt_depth;
    row["trainable_params"] = r.trainable_params;
    row["metrics"] = evalkit::to_json(r.metrics, false);
    j.push_back(row);
  }
  write_text(out / "sweep.json", j.dump(2) + "\n");
  const std::string table = trainkit::sweep_table(rows);
  write_text(out / "sweep.txt", table);
  log << table;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns the process exit code; on
/// failure exactly one `error: <class>: <message>` line goes to `err`.
inline int run_command(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"AdaDepth: adversarial domain adaptation of a monocular depth network"};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* c, bool needs_data, bool needs_ck) {
    c->add_option("--config", o.config, "JSON run config (defaults apply to absent keys)");
    c->add_option("--seed", o.seed, "overrides the config seed");
    c->add_option("--out", o.out, "output directory")->required();
    c->add_flag("--force", o.force, "replace an existing output directory");
    if (needs_data) c->add_option("--data", o.data, "directory written by gen")->required();
    if (needs_ck) c->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  };
  auto* gen = app.add_subcommand("gen", "build the source/target corpus");
  common(gen, false, false);
  auto* pre = app.add_subcommand("pretrain", "supervised training on the source split");
  common(pre, true, false);
  auto* ad = app.add_subcommand("adapt", "unsupervised adaptation to the target split");
  common(ad, true, true);
  ad->add_flag("--semi", o.semi, "continue with the semi-supervised phase");
  ad->add_option("--labeled-frac", o.labeled_frac, "fraction of target images with labels (semi)");
  auto* ev = app.add_subcommand("eval", "metrics on the target-eval split");
  common(ev, true, true);
  auto* sw = app.add_subcommand("sweep", "DCR adaptation over several adapt depths");
  common(sw, true, true);
  sw->add_option("--depths", o.depths, "adapt depths to compare")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, log, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    err << "error: config_error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) detail::cmd_gen(o, log);
    else if (*pre) detail::cmd_pretrain(o, log);
    else if (*ad) detail::cmd_adapt(o, log);
    else if (*ev) detail::cmd_eval(o, log);
    else if (*sw) detail::cmd_sweep(o, log);
  } catch (const std::exception& e) {
    err << error_line(e) << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace adadepth::cli

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "adadepth/core/json_util.hpp"
#include "adadepth/evalkit/metrics.hpp"
#include "adadepth/scenegen/dataset.hpp"
#include "adadepth/trainkit/adapt.hpp"
#include "adadepth/trainkit/config.hpp"

namespace adadepth::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int run_config_version = 1;

/// Corpus sizes for `gen`. The labeled target split is sized from
/// adapt.semi.labeled_frac times n_train.
struct CorpusConfig {
  std::size_t n_train = 2000;
  std::size_t n_eval = 200;
  std::uint64_t base_seed = 0;
};

/// Everything one experiment depends on. Missing keys keep these defaults;
/// unknown keys are rejected.
struct RunConfig {
  int version = run_config_version;
  std::uint64_t seed = 0;
  scenegen::SceneSpec scene;
  scenegen::ShiftConfig shift = default_shift();
  CorpusConfig corpus;
  depthnet::ArchConfig arch;
  trainkit::PretrainConfig pretrain;
  trainkit::AdaptConfig adapt;
  evalkit::EvalConfig eval;
  int viz_count = 4;  // eval writes this many colormapped predictions

  /// The reference toy shift: additive sensor noise only.
  static scenegen::ShiftConfig default_shift() {
    scenegen::ShiftConfig s;
    s.noise_sigma = 0.05;
    s.seed = 5;
    return s;
  }

  std::size_t n_labeled() const {
    return std::size_t(std::llround(adapt.semi.labeled_frac * double(corpus.n_train)));
  }

  void validate() const {
    if (version != run_config_version)
      throw ConfigError("unsupported config version " + std::to_string(version));
    scene.validate();
    shift.validate();
    arch.validate();
    if (arch.height != scene.height || arch.width != scene.width)
      throw ConfigError("arch input size must equal the scene image size");
    if (corpus.n_train == 0 || corpus.n_eval == 0) throw ConfigError("corpus sizes must be positive");
    if (viz_count < 0) throw ConfigError("viz_count must be non-negative");
    pretrain.validate();
    adapt.validate();
    eval.validate();
  }
};

namespace detail {

inline json scene_json(const scenegen::SceneSpec& s) {
  return {{"height", s.height}, {"width", s.width}, {"min_objects", s.min_objects},
          {"max_objects", s.max_objects}, {"near", s.near}, {"far", s.far}};
}

inline void read_scene(const json& j, scenegen::SceneSpec& s) {
  jsonu::require_keys(j, {"height", "width", "min_objects", "max_objects", "near", "far"}, "scene");
  jsonu::read(j, "height", s.height, "scene");
  jsonu::read(j, "width", s.width, "scene");
  jsonu::read(j, "min_objects", s.min_objects, "scene");
  jsonu::read(j, "max_objects", s.max_objects, "scene");
  jsonu::read(j, "near", s.near, "scene");
  jsonu::read(j, "far", s.far, "scene");
}

inline json shift_json(const scenegen::ShiftConfig& s) {
  return {{"gamma", s.gamma},       {"noise_sigma", s.noise_sigma}, {"blur_radius", s.blur_radius},
          {"contrast", s.contrast}, {"overlay", s.overlay},         {"seed", s.seed}};
}

inline void read_shift(const json& j, scenegen::ShiftConfig& s) {
  jsonu::require_keys(j, {"gamma", "noise_sigma", "blur_radius", "contrast", "overlay", "seed"}, "shift");
  jsonu::read(j, "gamma", s.gamma, "shift");
  jsonu::read(j, "noise_sigma", s.noise_sigma, "shift");
  jsonu::read(j, "blur_radius", s.blur_radius, "shift");
  jsonu::read(j, "contrast", s.contrast, "shift");
  jsonu::read(j, "overlay", s.overlay, "shift");
  jsonu::read(j, "seed", s.seed, "shift");
}

inline json eval_json(const evalkit::EvalConfig& e) {
  return {{"scaling", evalkit::to_string(e.scaling)},
          {"cap_meters", e.cap_meters ? json(*e.cap_meters) : json(nullptr)},
          {"upsample_to_gt", e.upsample_to_gt}};
}

inline void read_eval(const json& j, evalkit::EvalConfig& e) {
  jsonu::require_keys(j, {"scaling", "cap_meters", "upsample_to_gt"}, "eval");
  if (j.contains("scaling")) {
    std::string s;
    jsonu::read(j, "scaling", s, "eval");
    e.scaling = evalkit::scale_mode_from_string(s);
  }
  if (j.contains("cap_meters")) {
    if (j["cap_meters"].is_null()) {
      e.cap_meters.reset();
    } else {
      double cap = 0;
      jsonu::read(j, "cap_meters", cap, "eval");
      e.cap_meters = cap;
    }
  }
  jsonu::read(j, "upsample_to_gt", e.upsample_to_gt, "eval");
}

/// The arch block, with the default filled in for every absent key.
inline depthnet::ArchConfig read_arch(const json& j) {
  json full = trainkit::AdaptSession::arch_to_json(depthnet::ArchConfig{});
  jsonu::require_keys(j,
                      {"height", "width", "stem_channels", "channels", "decoder_channels", "init_depth", "min_depth",
                       "max_depth"},
                      "arch");
  full.update(j);
  return trainkit::AdaptSession::arch_from_json(full);
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  return {{"version", c.version},
          {"seed", c.seed},
          {"scene", detail::scene_json(c.scene)},
          {"shift", detail::shift_json(c.shift)},
          {"corpus", {{"n_train", c.corpus.n_train}, {"n_eval", c.corpus.n_eval}, {"base_seed", c.corpus.base_seed}}},
          {"arch", trainkit::AdaptSession::arch_to_json(c.arch)},
          {"pretrain", trainkit::to_json(c.pretrain)},
          {"adapt", trainkit::to_json(c.adapt)},
          {"eval", detail::eval_json(c.eval)},
          {"viz_count", c.viz_count}};
}

/// Parses and validates a run config. `seed` propagates to the pretrain and
/// adapt seeds unless those blocks set their own.
inline RunConfig run_config_from_json(const json& j) {
  jsonu::require_keys(j, {"version", "seed", "scene", "shift", "corpus", "arch", "pretrain", "adapt", "eval", "viz_count"},
                      "config");
  RunConfig c;
  jsonu::read(j, "version", c.version, "config");
  jsonu::read(j, "seed", c.seed, "config");
  c.pretrain.seed = c.seed;
  c.adapt.seed = c.seed;
  if (j.contains("scene")) detail::read_scene(j["scene"], c.scene);
  if (j.contains("shift")) detail::read_shift(j["shift"], c.shift);
  if (j.contains("corpus")) {
    const auto& k = j["corpus"];
    jsonu::require_keys(k, {"n_train", "n_eval", "base_seed"}, "corpus");
    jsonu::read(k, "n_train", c.corpus.n_train, "corpus");
    jsonu::read(k, "n_eval", c.corpus.n_eval, "corpus");
    jsonu::read(k, "base_seed", c.corpus.base_seed, "corpus");
  }
  if (j.contains("arch")) c.arch = detail::read_arch(j["arch"]);
  if (j.contains("pretrain")) c.pretrain = trainkit::pretrain_config_from_json(j["pretrain"], c.pretrain);
  if (j.contains("adapt")) c.adapt = trainkit::adapt_config_from_json(j["adapt"], c.adapt);
  if (j.contains("eval")) detail::read_eval(j["eval"], c.eval);
  jsonu::read(j, "viz_count", c.viz_count, "config");
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace adadepth::cli

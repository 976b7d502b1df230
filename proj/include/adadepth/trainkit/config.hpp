#pragma once

#include <string>

#include "adadepth/adversary/gan_loss.hpp"
#include "adadepth/congruency/branches.hpp"
#include "adadepth/core/json_util.hpp"
#include "adadepth/depthnet/network.hpp"

namespace adadepth::trainkit {

using json = nlohmann::json;

enum class Regularizer { dcr, rtf, fcf };

inline const char* to_string(Regularizer r) {
  switch (r) {
    case Regularizer::dcr: return "DCR";
    case Regularizer::rtf: return "RTF";
    case Regularizer::fcf: return "FCF";
  }
  return "?";
}

inline Regularizer regularizer_from_string(const std::string& s) {
  if (s == "DCR" || s == "dcr") return Regularizer::dcr;
  if (s == "RTF" || s == "rtf") return Regularizer::rtf;
  if (s == "FCF" || s == "fcf") return Regularizer::fcf;
  throw ConfigError("regularizer must be one of DCR, RTF, FCF; got '" + s + "'");
}

struct OptimizerConfig {
  double lr = 1e-4;
  double momentum = 0.9;

  void validate(const char* who) const {
    if (!(lr > 0) || !(momentum >= 0 && momentum < 1))
      throw ConfigError(std::string(who) + ": need lr > 0 and momentum in [0, 1)");
  }
};

/// Semi-supervised continuation: labeled target batches replace the content
/// term with BerHu against ground truth.
struct SemiConfig {
  int k_outer = 100;
  int unlabeled_per_labeled = 1;  // 0: every batch is labeled
  double labeled_frac = 0.05;

  void validate() const {
    if (k_outer < 0) throw ConfigError("semi k_outer must be >= 0");
    if (unlabeled_per_labeled < 0) throw ConfigError("semi unlabeled_per_labeled must be >= 0");
    if (!(labeled_frac > 0 && labeled_frac <= 1)) throw ConfigError("labeled_frac must lie in (0, 1]");
  }
};

struct AdaptConfig {
  Regularizer regularizer = Regularizer::fcf;
  double lambda = 10;
  adversary::GanForm gan_form = adversary::GanForm::lsq;
  bool use_dy = true;
  int k_outer = 300;
  int m_inner = 1;
  int batch_size = 8;
  OptimizerConfig generator;
  OptimizerConfig discriminator;
  double clip_norm = 0;  // global gradient-norm clip per party; 0 disables
  bool freeze_bn_stats = false;  // head batch-norm uses its running statistics and never updates them
  depthnet::PartitionSpec partition;
  std::uint64_t seed = 0;
  congruency::CtPretrainConfig ct_pretrain;
  int collapse_window = 25;
  double collapse_ratio = 0.01;
  SemiConfig semi;

  void validate() const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
    if (k_outer < 0) throw ConfigError("k_outer must be >= 0");
    if (m_inner < 1) throw ConfigError("m_inner must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
    if (collapse_window < 1 || !(collapse_ratio > 0 && collapse_ratio < 1))
      throw ConfigError("collapse diagnostic needs window >= 1 and ratio in (0, 1)");
    if (ct_pretrain.steps < 0 || ct_pretrain.batch_size < 2 || !(ct_pretrain.lr > 0) ||
        !(ct_pretrain.holdout_frac > 0 && ct_pretrain.holdout_frac < 1))
      throw ConfigError("invalid ct_pretrain settings");
    generator.validate("generator optimizer");
    discriminator.validate("discriminator optimizer");
    partition.validate();
    semi.validate();
  }
};

struct PretrainConfig {
  int epochs = 6;
  int batch_size = 10;
  double lr = 0.002;
  double lr_decay = 0.1;
  int plateau_patience = 1;
  double val_frac = 0.1;
  bool hflip = true;
  double clip_norm = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("pretrain epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("pretrain batch_size must be >= 2");
    if (!(lr > 0) || !(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("invalid pretrain learning rate schedule");
    if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
    if (!(val_frac > 0 && val_frac < 1)) throw ConfigError("val_frac must lie in (0, 1)");
    if (clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const OptimizerConfig& o) { return {{"kind", "momentum"}, {"lr", o.lr}, {"momentum", o.momentum}}; }

inline void from_json_checked(const json& j, OptimizerConfig& o, const std::string& where) {
  jsonu::require_keys(j, {"kind", "lr", "momentum"}, where);
  std::string kind = "momentum";
  jsonu::read(j, "kind", kind, where);
  if (kind != "momentum") throw ConfigError(where + ": only the momentum optimizer is supported");
  jsonu::read(j, "lr", o.lr, where);
  jsonu::read(j, "momentum", o.momentum, where);
}

inline json to_json(const AdaptConfig& c) {
  return {{"regularizer", to_string(c.regularizer)},
          {"lambda", c.lambda},
          {"gan_form", adversary::to_string(c.gan_form)},
          {"use_DY", c.use_dy},
          {"k_outer", c.k_outer},
          {"m_inner", c.m_inner},
          {"batch_size", c.batch_size},
          {"optimizer", to_json(c.generator)},
          {"disc_optimizer", to_json(c.discriminator)},
          {"clip_norm", c.clip_norm},
          {"freeze_bn_stats", c.freeze_bn_stats},
          {"adapt_depth", c.partition.adapt_depth},
          {"seed", c.seed},
          {"ct_pretrain",
           {{"steps", c.ct_pretrain.steps},
            {"batch_size", c.ct_pretrain.batch_size},
            {"lr", c.ct_pretrain.lr},
            {"holdout_frac", c.ct_pretrain.holdout_frac}}},
          {"collapse_window", c.collapse_window},
          {"collapse_ratio", c.collapse_ratio},
          {"semi",
           {{"k_outer", c.semi.k_outer},
            {"unlabeled_per_labeled", c.semi.unlabeled_per_labeled},
            {"labeled_frac", c.semi.labeled_frac}}}};
}

inline AdaptConfig adapt_config_from_json(const json& j, AdaptConfig c = {}) {
  const std::string w = "adapt";
  jsonu::require_keys(j,
                      {"regularizer", "lambda", "gan_form", "use_DY", "k_outer", "m_inner", "batch_size", "optimizer",
                       "disc_optimizer", "clip_norm", "freeze_bn_stats", "adapt_depth", "seed", "ct_pretrain", "collapse_window",
                       "collapse_ratio", "semi"},
                      w);
  std::string s;
  if (j.contains("regularizer")) {
    jsonu::read(j, "regularizer", s, w);
    c.regularizer = regularizer_from_string(s);
  }
  if (j.contains("gan_form")) {
    jsonu::read(j, "gan_form", s, w);
    c.gan_form = adversary::gan_form_from_string(s);
  }
  jsonu::read(j, "lambda", c.lambda, w);
  jsonu::read(j, "use_DY", c.use_dy, w);
  jsonu::read(j, "k_outer", c.k_outer, w);
  jsonu::read(j, "m_inner", c.m_inner, w);
  jsonu::read(j, "batch_size", c.batch_size, w);
  if (j.contains("optimizer")) from_json_checked(j["optimizer"], c.generator, "adapt.optimizer");
  if (j.contains("disc_optimizer")) from_json_checked(j["disc_optimizer"], c.discriminator, "adapt.disc_optimizer");
  jsonu::read(j, "clip_norm", c.clip_norm, w);
  jsonu::read(j, "freeze_bn_stats", c.freeze_bn_stats, w);
  jsonu::read(j, "adapt_depth", c.partition.adapt_depth, w);
  jsonu::read(j, "seed", c.seed, w);
  if (j.contains("ct_pretrain")) {
    const auto& p = j["ct_pretrain"];
    jsonu::require_keys(p, {"steps", "batch_size", "lr", "holdout_frac"}, "adapt.ct_pretrain");
    jsonu::read(p, "steps", c.ct_pretrain.steps, "adapt.ct_pretrain");
    jsonu::read(p, "batch_size", c.ct_pretrain.batch_size, "adapt.ct_pretrain");
    jsonu::read(p, "lr", c.ct_pretrain.lr, "adapt.ct_pretrain");
    jsonu::read(p, "holdout_frac", c.ct_pretrain.holdout_frac, "adapt.ct_pretrain");
  }
  jsonu::read(j, "collapse_window", c.collapse_window, w);
  jsonu::read(j, "collapse_ratio", c.collapse_ratio, w);
  if (j.contains("semi")) {
    const auto& p = j["semi"];
    jsonu::require_keys(p, {"k_outer", "unlabeled_per_labeled", "labeled_frac"}, "adapt.semi");
    jsonu::read(p, "k_outer", c.semi.k_outer, "adapt.semi");
    jsonu::read(p, "unlabeled_per_labeled", c.semi.unlabeled_per_labeled, "adapt.semi");
    jsonu::read(p, "labeled_frac", c.semi.labeled_frac, "adapt.semi");
  }
  c.validate();
  return c;
}

inline json to_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size},
          {"lr", c.lr},             {"lr_decay", c.lr_decay},
          {"plateau_patience", c.plateau_patience}, {"val_frac", c.val_frac},
          {"hflip", c.hflip},       {"clip_norm", c.clip_norm},
          {"seed", c.seed}};
}

inline PretrainConfig pretrain_config_from_json(const json& j, PretrainConfig c = {}) {
  const std::string w = "pretrain";
  jsonu::require_keys(
      j, {"epochs", "batch_size", "lr", "lr_decay", "plateau_patience", "val_frac", "hflip", "clip_norm", "seed"}, w);
  jsonu::read(j, "epochs", c.epochs, w);
  jsonu::read(j, "batch_size", c.batch_size, w);
  jsonu::read(j, "lr", c.lr, w);
  jsonu::read(j, "lr_decay", c.lr_decay, w);
  jsonu::read(j, "plateau_patience", c.plateau_patience, w);
  jsonu::read(j, "val_frac", c.val_frac, w);
  jsonu::read(j, "hflip", c.hflip, w);
  jsonu::read(j, "clip_norm", c.clip_norm, w);
  jsonu::read(j, "seed", c.seed, w);
  c.validate();
  return c;
}

}  // namespace adadepth::trainkit

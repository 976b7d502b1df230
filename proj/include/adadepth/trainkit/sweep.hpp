#pragma once

#include <vector>

#include "adadepth/evalkit/evaluate.hpp"
#include "adadepth/trainkit/adapt.hpp"

namespace adadepth::trainkit {

struct SweepRow {
  int adapt_depth = 0;
  std::size_t trainable_params = 0;
  evalkit::MetricsReport metrics;
  DepthModel model;
};

/// Adapts once per adapt_depth with the DCR regularizer and otherwise
/// identical settings (seed included), scoring each result on `eval`.
/// Pass a pool to reuse feature caches across calls.
inline std::vector<SweepRow> sweep_sharing(const Net& net, AdaptData data, const std::vector<int>& depths,
                                           AdaptConfig cfg, const scenegen::LabeledSet& eval,
                                           const evalkit::EvalConfig& eval_cfg = {},
                                           FeatureCachePool* pool = nullptr) {
  if (depths.empty()) throw ConfigError("sweep_sharing needs at least one adapt_depth");
  for (int d : depths)
    if (d < 1 || d > n_stages)
      throw ConfigError("adapt_depth " + std::to_string(d) + " is outside [1, " + std::to_string(n_stages) + "]");
  cfg.regularizer = Regularizer::dcr;
  FeatureCachePool local(net, data);
  if (!pool) pool = &local;

  std::vector<SweepRow> rows;
  for (int d : depths) {
    cfg.partition.adapt_depth = d;
    AdaptSession s(net, data, cfg, pool->get(AdaptSession::first_adaptable_stage(cfg)));
    const std::size_t trainable = s.trainable_scalars();
    s.run(cfg.k_outer);
    SweepRow row{d, trainable, {}, s.model()};
    row.metrics = evalkit::evaluate_labeled(row.model, eval, eval_cfg).aggregate;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::string out = evalkit::table_header() + " " + "trainable\n";
  for (const auto& r : rows)
    out += evalkit::table_row("adapt_depth=" + std::to_string(r.adapt_depth), r.metrics) + " " +
           std::to_string(r.trainable_params) + "\n";
  return out;
}

}  // namespace adadepth::trainkit

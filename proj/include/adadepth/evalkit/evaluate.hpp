#pragma once

#include <concepts>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adadepth/evalkit/metrics.hpp"
#include "adadepth/scenegen/dataset.hpp"

namespace adadepth::evalkit {

template <typename P>
concept DepthPredictor = requires(const P& p, const ImageTensor& img) {
  { p.predict(img) } -> std::convertible_to<DepthMap>;
};

struct ImageRow {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct DatasetReport {
  MetricsReport aggregate;
  std::vector<ImageRow> rows;
};

/// Scores predictions against ground truth pixel-weighted. Per-image errors
/// are rethrown with the offending index.
inline DatasetReport evaluate_predictions(const std::vector<DepthMap>& preds, const std::vector<DepthMap>& gts,
                                          const EvalConfig& cfg, const std::vector<std::uint64_t>& seeds = {}) {
  cfg.validate();
  if (preds.size() != gts.size()) throw ShapeError("prediction and ground-truth counts differ");
  if (preds.empty()) throw EvaluationError("evaluation split is empty");

  std::optional<double> global;
  if (cfg.scaling == ScaleMode::global) {
    std::vector<double> p, g;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      DepthMap up = detail::match_resolution(preds[i], gts[i], cfg);
      auto m = detail::eval_mask(up, gts[i], gts[i].valid, cfg);
      for (std::size_t k = 0; k < m.size(); ++k)
        if (m[k]) {
          p.push_back(up.depth[k]);
          g.push_back(gts[i].depth[k]);
        }
    }
    if (p.empty()) throw EvaluationError("empty evaluation set");
    global = median(std::move(g)) / median(std::move(p));
  }

  DatasetReport out;
  MetricSums total;
  std::vector<double> scales;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    try {
      ImageRow row{i, i < seeds.size() ? seeds[i] : 0, compute_metrics(preds[i], gts[i], gts[i].valid, cfg, global)};
      total += row.report.sums;
      scales.push_back(row.report.scale_factors.at(0));
      out.rows.push_back(std::move(row));
    } catch (const EvaluationError& e) {
      throw EvaluationError("image " + std::to_string(i) + ": " + e.what());
    }
  }
  out.aggregate = MetricsReport::from_sums(total);
  out.aggregate.scale_factors = std::move(scales);
  out.aggregate.cap = cfg.cap_meters;
  return out;
}

/// Runs `predictor` over every entry of a labeled split and aggregates.
template <DepthPredictor P>
DatasetReport evaluate_dataset(const P& predictor, const scenegen::DatasetManifest& manifest, const EvalConfig& cfg) {
  cfg.validate();
  if (!manifest.labeled())
    throw DatasetError(std::string("split ") + scenegen::to_string(manifest.split) + " carries no depth labels");
  if (manifest.size() == 0) throw EvaluationError("evaluation split is empty");
  std::vector<DepthMap> preds, gts;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto s = scenegen::load_sample(manifest, i);
    if (!s.depth) throw DatasetError("entry " + std::to_string(i) + " has no depth label");
    preds.push_back(predictor.predict(s.image));
    gts.push_back(std::move(*s.depth));
    seeds.push_back(manifest.entries[i].seed);
  }
  return evaluate_predictions(preds, gts, cfg, seeds);
}

template <DepthPredictor P>
DatasetReport evaluate_labeled(const P& predictor, const scenegen::LabeledSet& data, const EvalConfig& cfg) {
  std::vector<DepthMap> preds;
  for (const auto& img : data.images) preds.push_back(predictor.predict(img));
  return evaluate_predictions(preds, data.depths, cfg);
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::ordered_json to_json(const MetricsReport& r, bool with_scales = true) {
  nlohmann::ordered_json j;
  j["rel"] = r.rel;
  j["rms"] = r.rms;
  j["log10"] = r.log10;
  j["rms_log"] = r.rms_log;
  j["delta1"] = r.delta1;
  j["delta2"] = r.delta2;
  j["delta3"] = r.delta3;
  j["sq_rel"] = r.sq_rel;
  j["n_pixels"] = r.n_pixels;
  j["cap"] = r.cap ? nlohmann::ordered_json(*r.cap) : nlohmann::ordered_json(nullptr);
  if (with_scales) j["scale_factors"] = r.scale_factors;
  return j;
}

inline nlohmann::ordered_json to_json(const DatasetReport& d, const EvalConfig& cfg) {
  nlohmann::ordered_json j;
  j["scaling"] = to_string(cfg.scaling);
  j["aggregate"] = to_json(d.aggregate);
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : d.rows) {
    auto row = to_json(r.report, false);
    row["index"] = r.index;
    row["seed"] = r.seed;
    row["scale"] = r.report.scale_factors.at(0);
    rows.push_back(std::move(row));
  }
  j["images"] = std::move(rows);
  return j;
}

inline std::string table_header() {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %8s %8s %8s %8s %8s %8s %8s %8s", "run", "rel", "rms", "log10", "rms_log",
                "d1", "d2", "d3", "sq_rel");
  return buf;
}

/// One aligned row in the column order rel, rms, log10, rms_log, d1, d2, d3, sq_rel.
inline std::string table_row(const std::string& label, const MetricsReport& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-22s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f", label.c_str(), r.rel, r.rms,
                r.log10, r.rms_log, r.delta1, r.delta2, r.delta3, r.sq_rel);
  return buf;
}

inline std::string to_text(const MetricsReport& r, const std::string& label = "aggregate") {
  return table_header() + "\n" + table_row(label, r) + "\n";
}

}  // namespace adadepth::evalkit

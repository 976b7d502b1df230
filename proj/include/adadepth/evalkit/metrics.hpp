#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/core/image.hpp"

namespace adadepth::evalkit {

enum class ScaleMode { none, per_image, global };

inline const char* to_string(ScaleMode m) {
  switch (m) {
    case ScaleMode::none: return "none";
    case ScaleMode::per_image: return "per_image";
    case ScaleMode::global: return "global";
  }
  return "?";
}

inline ScaleMode scale_mode_from_string(const std::string& s) {
  for (ScaleMode m : {ScaleMode::none, ScaleMode::per_image, ScaleMode::global})
    if (s == to_string(m)) return m;
  throw ConfigError("median_scaling must be one of none, per_image, global; got '" + s + "'");
}

struct EvalConfig {
  ScaleMode scaling = ScaleMode::per_image;
  std::optional<double> cap_meters;  // pixels with gt >= cap are dropped
  bool upsample_to_gt = true;

  void validate() const {
    if (cap_meters && !(*cap_meters > 0)) throw ConfigError("depth cap must be positive");
  }
};

/// Raw accumulators; reports aggregate by adding these.
struct MetricSums {
  double n = 0, abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, log10 = 0, d1 = 0, d2 = 0, d3 = 0;

  MetricSums& operator+=(const MetricSums& o) {
    n += o.n;
    abs_rel += o.abs_rel;
    sq_rel += o.sq_rel;
    sq += o.sq;
    sq_log += o.sq_log;
    log10 += o.log10;
    d1 += o.d1;
    d2 += o.d2;
    d3 += o.d3;
    return *this;
  }
};

struct MetricsReport {
  double rel = 0, sq_rel = 0, rms = 0, rms_log = 0, log10 = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  long long n_pixels = 0;
  std::vector<double> scale_factors;
  std::optional<double> cap;
  MetricSums sums;

  static MetricsReport from_sums(const MetricSums& s) {
    if (s.n <= 0) throw EvaluationError("no pixels to evaluate");
    MetricsReport r;
    r.sums = s;
    r.n_pixels = (long long)s.n;
    r.rel = s.abs_rel / s.n;
    r.sq_rel = s.sq_rel / s.n;
    r.rms = std::sqrt(s.sq / s.n);
    r.rms_log = std::sqrt(s.sq_log / s.n);
    r.log10 = s.log10 / s.n;
    r.delta1 = s.d1 / s.n;
    r.delta2 = s.d2 / s.n;
    r.delta3 = s.d3 / s.n;
    return r;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw EvaluationError("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

/// Bilinear resampling with half-pixel centres and clamped borders. Each tap
/// is a + f * (b - a), so constant maps stay exactly constant.
inline DepthMap upsample_bilinear(const DepthMap& d, int height, int width) {
  if (d.height <= 0 || d.width <= 0) throw ShapeError("cannot resample an empty depth map");
  DepthMap out(height, width);
  const double sy = double(d.height) / height, sx = double(d.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(d.height - 1));
    const int y0 = int(fy), y1 = std::min(y0 + 1, d.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(d.width - 1));
      const int x0 = int(fx), x1 = std::min(x0 + 1, d.width - 1);
      const double tx = fx - x0;
      auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
      const double top = lerp(d.at(y0, x0), d.at(y0, x1), tx);
      const double bot = lerp(d.at(y1, x0), d.at(y1, x1), tx);
      out.at(y, x) = float(lerp(top, bot, ty));
      out.valid[std::size_t(y) * width + x] = d.valid[std::size_t(y0) * d.width + x0] &&
                                              d.valid[std::size_t(y0) * d.width + x1] &&
                                              d.valid[std::size_t(y1) * d.width + x0] &&
                                              d.valid[std::size_t(y1) * d.width + x1];
    }
  }
  return out;
}

struct ScaledPrediction {
  DepthMap pred;
  double scale = 1;
};

/// median(gt on mask) / median(pred on mask).
inline double median_ratio(const DepthMap& pred, const DepthMap& gt, const std::vector<std::uint8_t>& mask) {
  if (pred.size() != gt.size() || mask.size() != gt.size()) throw ShapeError("median_scale: size mismatch");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      p.push_back(pred.depth[i]);
      g.push_back(gt.depth[i]);
    }
  if (p.empty()) throw EvaluationError("median_scale: empty mask");
  const double mp = median(std::move(p));
  if (!(mp > 0)) throw EvaluationError("median_scale: non-positive prediction median");
  return median(std::move(g)) / mp;
}

/// Returns s * pred with s from median_ratio.
inline ScaledPrediction median_scale(const DepthMap& pred, const DepthMap& gt, const std::vector<std::uint8_t>& mask) {
  ScaledPrediction out{pred, median_ratio(pred, gt, mask)};
  for (auto& v : out.pred.depth) v = float(double(v) * out.scale);
  return out;
}

namespace detail {

inline DepthMap match_resolution(const DepthMap& pred, const DepthMap& gt, const EvalConfig& cfg) {
  if (pred.height == gt.height && pred.width == gt.width) return pred;
  if (!cfg.upsample_to_gt)
    throw ShapeError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " does not match ground truth and upsampling is disabled");
  return upsample_bilinear(pred, gt.height, gt.width);
}

inline std::vector<std::uint8_t> eval_mask(const DepthMap& pred, const DepthMap& gt,
                                           const std::vector<std::uint8_t>& mask, const EvalConfig& cfg) {
  std::vector<std::uint8_t> m(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i)
    m[i] = mask[i] && gt.valid[i] && pred.valid[i] && gt.depth[i] > 0 &&
           (!cfg.cap_meters || double(gt.depth[i]) < *cfg.cap_meters);
  return m;
}

}  // namespace detail

/// Accumulates metric sums over masked pixels of an already resolution-
/// matched prediction, multiplied by `scale` in double precision.
inline MetricSums accumulate(const DepthMap& pred, const DepthMap& gt, const std::vector<std::uint8_t>& mask,
                             double scale = 1) {
  MetricSums s;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    const double p = double(pred.depth[i]) * scale, g = gt.depth[i];
    if (!(p > 0)) throw EvaluationError("non-positive prediction on an evaluated pixel");
    const double d = p - g;
    s.n += 1;
    s.abs_rel += std::abs(d) / g;
    s.sq_rel += d * d / g;
    s.sq += d * d;
    const double dl = std::log(p) - std::log(g);
    s.sq_log += dl * dl;
    s.log10 += std::abs(std::log10(p) - std::log10(g));
    const double ratio = std::max(p / g, g / p);
    s.d1 += ratio < t1;
    s.d2 += ratio < t2;
    s.d3 += ratio < t3;
  }
  return s;
}

/// Full protocol for one image: upsample to ground-truth resolution,
/// restrict to valid (and capped) pixels, median-scale, then
///   rel = mean |p-g|/g            sq_rel = mean (p-g)^2/g
///   rms = sqrt mean (p-g)^2       rms_log = sqrt mean (ln p - ln g)^2
///   log10 = mean |log10 p - log10 g|
///   delta_i = fraction with max(p/g, g/p) < 1.25^i
/// `fixed_scale` overrides the per-image median ratio (global scaling).
inline MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const std::vector<std::uint8_t>& mask,
                                     const EvalConfig& cfg, std::optional<double> fixed_scale = std::nullopt) {
  cfg.validate();
  if (mask.size() != gt.size()) throw ShapeError("mask does not match ground truth");
  DepthMap p = detail::match_resolution(pred, gt, cfg);
  auto m = detail::eval_mask(p, gt, mask, cfg);
  if (std::find(m.begin(), m.end(), std::uint8_t(1)) == m.end()) throw EvaluationError("empty evaluation set");
  double s = 1;
  if (fixed_scale) s = *fixed_scale;
  else if (cfg.scaling != ScaleMode::none) s = median_ratio(p, gt, m);
  MetricsReport r = MetricsReport::from_sums(accumulate(p, gt, m, s));
  r.scale_factors = {s};
  r.cap = cfg.cap_meters;
  return r;
}

inline MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const EvalConfig& cfg = {}) {
  return compute_metrics(pred, gt, gt.valid, cfg);
}

}  // namespace adadepth::evalkit

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "adadepth/core/error.hpp"
#include "adadepth/core/image.hpp"
#include "adadepth/core/png_io.hpp"

namespace adadepth::cli {

using Rgb8 = std::array<std::uint8_t, 3>;

/// Five magma-like stops, near (dark) to far (bright). Colors between stops
/// are linear in RGB, rounded to nearest.
inline constexpr std::array<Rgb8, 5> colormap_stops{{
    {0, 0, 4},
    {81, 18, 124},
    {183, 55, 121},
    {252, 137, 97},
    {252, 253, 191},
}};

/// Maps t in [0, 1] (clamped) through the colormap.
inline Rgb8 colormap(double t) {
  if (!(t > 0)) return colormap_stops.front();  // also catches NaN
  if (t >= 1) return colormap_stops.back();
  const double x = t * double(colormap_stops.size() - 1);
  const std::size_t i = std::size_t(x);
  const double f = x - double(i);
  Rgb8 out;
  for (int c = 0; c < 3; ++c) {
    const double a = colormap_stops[i][c], b = colormap_stops[i + 1][c];
    out[c] = std::uint8_t(std::lround(a + (b - a) * f));
  }
  return out;
}

struct DepthRange {
  double lo = 0.5, hi = 10.0;

  void validate() const {
    if (!(lo > 0) || !(lo < hi) || !std::isfinite(hi)) throw ConfigError("depth range must satisfy 0 < lo < hi");
  }
};

/// Depth is clamped to `range` and mapped linearly onto the colormap.
/// Invalid pixels are drawn black.
inline png::Raster colorize(const DepthMap& d, const DepthRange& range) {
  range.validate();
  png::Raster r;
  r.width = d.width;
  r.height = d.height;
  r.channels = 3;
  r.bit_depth = 8;
  r.samples.resize(std::size_t(d.width) * std::size_t(d.height) * 3);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    Rgb8 c{0, 0, 0};
    if (d.valid.empty() || d.valid[i]) {
      const double v = std::clamp(double(d.depth[i]), range.lo, range.hi);
      c = colormap((v - range.lo) / (range.hi - range.lo));
    }
    for (int k = 0; k < 3; ++k) r.samples[3 * i + std::size_t(k)] = c[std::size_t(k)];
  }
  return r;
}

inline void export_viz(const DepthMap& pred, const std::string& path, const DepthRange& range) {
  png::write(path, colorize(pred, range));
}

}  // namespace adadepth::cli

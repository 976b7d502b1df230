#pragma once

#include <cstdint>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/core/tensor.hpp"

namespace adadepth {

/// RGB image with values in [0,1], stored as three planes (R, G, B).
struct ImageTensor {
  int height = 0, width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, float fill = 0.f) : height(h), width(w), data(std::size_t(3) * h * w, fill) {}

  std::size_t plane() const { return std::size_t(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + std::size_t(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + std::size_t(y) * width + x]; }
  bool operator==(const ImageTensor&) const = default;
};

/// Metric depth with a per-pixel validity mask.
struct DepthMap {
  int height = 0, width = 0;
  std::vector<float> depth;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int h, int w, float fill = 0.f)
      : height(h), width(w), depth(std::size_t(h) * w, fill), valid(std::size_t(h) * w, 1) {}

  std::size_t size() const { return depth.size(); }
  float& at(int y, int x) { return depth[std::size_t(y) * width + x]; }
  float at(int y, int x) const { return depth[std::size_t(y) * width + x]; }
  bool operator==(const DepthMap&) const = default;
};

/// Packs images into an N x 3 x H x W batch.
template <typename T>
Tensor<T> to_batch(const std::vector<const ImageTensor*>& images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor<T> t(int(images.size()), 3, h, w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->height != h || images[n]->width != w) throw ShapeError("ragged image batch");
    auto s = t.sample(int(n));
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = T(images[n]->data[i]);
  }
  return t;
}

/// 2x2 block mean, used to bring full-resolution labels to prediction resolution.
/// A block is valid only if all four source pixels are.
inline DepthMap downsample2x(const DepthMap& d) {
  if (d.height % 2 || d.width % 2) throw ShapeError("downsample2x needs even dimensions");
  DepthMap out(d.height / 2, d.width / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      double s = 0;
      bool ok = true;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const std::size_t i = std::size_t(2 * y + dy) * d.width + 2 * x + dx;
          s += d.depth[i];
          ok = ok && d.valid[i];
        }
      out.at(y, x) = float(s / 4);
      out.valid[std::size_t(y) * out.width + x] = ok;
    }
  return out;
}

}  // namespace adadepth

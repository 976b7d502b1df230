#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/core/image.hpp"
#include "adadepth/core/random.hpp"

namespace adadepth::scenegen {

/// Photometric domain shift. Stages run in a fixed order:
/// gamma, contrast, blur, texture overlay, additive noise, clamp.
struct ShiftConfig {
  std::array<double, 3> gamma{1, 1, 1};
  double noise_sigma = 0;
  double blur_radius = 0;
  double contrast = 1;
  double overlay = 0;
  std::uint64_t seed = 0;

  static ShiftConfig identity() { return {}; }

  void validate() const {
    for (double g : gamma)
      if (!(g > 0) || !std::isfinite(g)) throw ConfigError("shift gamma must be positive");
    if (!(noise_sigma >= 0 && noise_sigma <= 0.1)) throw ConfigError("shift noise_sigma must lie in [0, 0.1]");
    if (!(blur_radius >= 0 && blur_radius <= 2)) throw ConfigError("shift blur_radius must lie in [0, 2]");
    if (!(contrast >= 0.6 && contrast <= 1.4)) throw ConfigError("shift contrast must lie in [0.6, 1.4]");
    if (!(overlay >= 0 && overlay <= 0.5)) throw ConfigError("shift overlay must lie in [0, 0.5]");
  }
};

namespace detail {

/// Separable Gaussian blur with sigma = radius, clamped borders.
inline void blur_plane(float* p, int h, int w, double radius) {
  const int half = int(std::ceil(3 * radius));
  std::vector<double> k(2 * half + 1);
  double sum = 0;
  for (int i = -half; i <= half; ++i) sum += k[i + half] = std::exp(-0.5 * i * i / (radius * radius));
  for (auto& v : k) v /= sum;
  std::vector<float> tmp(std::size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -half; i <= half; ++i) acc += k[i + half] * p[std::size_t(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[std::size_t(y) * w + x] = float(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -half; i <= half; ++i) acc += k[i + half] * tmp[std::size_t(std::clamp(y + i, 0, h - 1)) * w + x];
      p[std::size_t(y) * w + x] = float(acc);
    }
}

}  // namespace detail

inline ImageTensor apply_domain_shift(const ImageTensor& img, const ShiftConfig& cfg) {
  cfg.validate();
  if (img.data.size() != std::size_t(3) * img.height * img.width)
    throw ShapeError("image buffer does not match its declared size");
  for (float v : img.data)
    if (!(v >= 0.f && v <= 1.f)) throw NumericError("input image values must lie in [0, 1]");

  ImageTensor out = img;
  const std::size_t P = img.plane();
  for (int c = 0; c < 3; ++c) {
    if (cfg.gamma[c] == 1.0) continue;
    for (std::size_t i = 0; i < P; ++i) {
      float& v = out.data[c * P + i];
      v = float(std::pow(double(v), cfg.gamma[c]));
    }
  }
  if (cfg.contrast != 1.0)
    for (float& v : out.data) v = float(0.5 + (double(v) - 0.5) * cfg.contrast);
  if (cfg.blur_radius > 0)
    for (int c = 0; c < 3; ++c) detail::blur_plane(out.data.data() + c * P, img.height, img.width, cfg.blur_radius);

  Rng rng(mix_seed(cfg.seed, 0xd0a1));
  if (cfg.overlay > 0) {
    // Sum of four random oriented sinusoids, remapped to [0, 1], with a random tint.
    std::array<double, 4> fx, fy, ph;
    for (int i = 0; i < 4; ++i) {
      const double ang = uniform(rng, 0, 2 * 3.141592653589793), freq = uniform(rng, 0.05, 0.35);
      fx[i] = freq * std::cos(ang);
      fy[i] = freq * std::sin(ang);
      ph[i] = uniform(rng, 0, 6.283185307179586);
    }
    const std::array<double, 3> tint{uniform(rng, 0.5, 1.0), uniform(rng, 0.5, 1.0), uniform(rng, 0.5, 1.0)};
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double s = 0;
        for (int i = 0; i < 4; ++i) s += std::sin(fx[i] * x + fy[i] * y + ph[i]);
        const double pattern = 0.5 + s / 8.0;
        for (int c = 0; c < 3; ++c) {
          float& v = out.at(c, y, x);
          v = float((1 - cfg.overlay) * double(v) + cfg.overlay * pattern * tint[c]);
        }
      }
  }
  if (cfg.noise_sigma > 0)
    for (float& v : out.data) v = float(double(v) + normal(rng, 0.0, cfg.noise_sigma));
  for (float& v : out.data) v = std::clamp(v, 0.f, 1.f);
  return out;
}

}  // namespace adadepth::scenegen

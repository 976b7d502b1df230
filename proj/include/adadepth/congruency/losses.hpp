#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/depthnet/berhu.hpp"

namespace adadepth::congruency {

/// Loss with gradients w.r.t. both of its arguments.
template <typename T>
struct PairLoss {
  T loss = T(0);
  std::vector<T> grad_a, grad_b;
};

/// Element-mean L1 distance between two equally shaped feature blocks.
/// Serves both the domain-consistency term |M_s(x_t) - M_t(x_t)| and the
/// feature-reconstruction term |L_t - C_t(M_t(x_t))|.
template <typename T>
PairLoss<T> mean_l1(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("L1 distance: operand sizes differ");
  if (a.empty()) throw ShapeError("L1 distance: empty operands");
  PairLoss<T> out;
  out.grad_a.resize(a.size());
  out.grad_b.resize(a.size());
  const T n = T(a.size());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    s += double(std::abs(d));
    const T g = T(d > 0 ? 1 : (d < 0 ? -1 : 0)) / n;
    out.grad_a[i] = g;
    out.grad_b[i] = -g;
  }
  out.loss = T(s / double(a.size()));
  return out;
}

/// Domain consistency: element-mean L1 between source- and target-encoder
/// latents of the same target images.
template <typename T>
PairLoss<T> dcr_loss(std::span<const T> f_src, std::span<const T> f_tgt) {
  return mean_l1(f_src, f_tgt);
}

/// Residual-transfer penalty: root-mean-square magnitude of the residual.
template <typename T>
LossGrad<T> rtf_penalty(std::span<const T> residual) {
  if (residual.empty()) throw ShapeError("rtf penalty: empty residual");
  LossGrad<T> out;
  out.grad.assign(residual.size(), T(0));
  double ss = 0;
  for (T r : residual) {
    if (!std::isfinite(double(r))) throw NumericError("rtf penalty: non-finite residual");
    ss += double(r) * double(r);
  }
  const double n = double(residual.size());
  const double rms = std::sqrt(ss / n);
  out.loss = T(rms);
  if (rms > 0)
    for (std::size_t i = 0; i < residual.size(); ++i) out.grad[i] = T(double(residual[i]) / (n * rms));
  return out;
}

}  // namespace adadepth::congruency

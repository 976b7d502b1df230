#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adadepth/core/error.hpp"

namespace adadepth {

/// A scalar loss together with its gradient w.r.t. the first argument.
template <typename T>
struct LossGrad {
  T loss = T(0);
  std::vector<T> grad;
};

namespace depthnet {

/// Reverse Huber loss averaged over masked pixels:
///   |r|                 for |r| <= c
///   (r^2 + c^2) / (2c)  otherwise,      c = 0.2 * max_masked |r|.
///
/// The gradient is exact, including the dependence of c on the largest
/// residual. `c_override` fixes c (and drops that dependence).
template <typename T>
LossGrad<T> berhu_loss(std::span<const T> pred, std::span<const T> gt, std::span<const std::uint8_t> mask,
                       std::optional<T> c_override = std::nullopt) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw ShapeError("berhu: prediction, label and mask sizes differ");
  std::size_t n = 0, arg = 0;
  T rmax = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    const T r = std::abs(pred[i] - gt[i]);
    if (r > rmax || n == 1) {
      rmax = r;
      arg = i;
    }
  }
  if (n == 0) throw EvaluationError("berhu: empty mask");

  LossGrad<T> out;
  out.grad.assign(pred.size(), T(0));
  const T c = c_override ? *c_override : T(0.2) * rmax;
  if (!(c > T(0))) {
    if (c_override && *c_override < T(0)) throw NumericError("berhu: negative threshold");
    // All masked residuals are zero (or c forced to zero): the loss is the
    // L1 term everywhere.
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (mask[i]) {
        const T r = pred[i] - gt[i];
        s += double(std::abs(r));
        out.grad[i] = T(r > 0 ? 1 : (r < 0 ? -1 : 0)) / T(n);
      }
    out.loss = T(s / double(n));
    return out;
  }

  double total = 0, dc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const T r = pred[i] - gt[i];
    const T a = std::abs(r);
    if (a <= c) {
      total += double(a);
      out.grad[i] = T(r > 0 ? 1 : (r < 0 ? -1 : 0));
    } else {
      total += double((r * r + c * c) / (T(2) * c));
      out.grad[i] = r / c;
      dc += 0.5 - double(r * r) / (2.0 * double(c) * double(c));
    }
  }
  if (!c_override) {
    const T r = pred[arg] - gt[arg];
    out.grad[arg] += T(0.2) * T(r > 0 ? 1 : -1) * T(dc);
  }
  for (auto& g : out.grad) g /= T(n);
  out.loss = T(total / double(n));
  return out;
}

}  // namespace depthnet
}  // namespace adadepth

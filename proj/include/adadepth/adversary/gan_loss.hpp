#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/depthnet/berhu.hpp"

namespace adadepth::adversary {

enum class GanForm { log, lsq };

inline const char* to_string(GanForm f) { return f == GanForm::log ? "log" : "lsq"; }

inline GanForm gan_form_from_string(const std::string& s) {
  if (s == "log") return GanForm::log;
  if (s == "lsq") return GanForm::lsq;
  throw ConfigError("gan_form must be 'log' or 'lsq', got '" + s + "'");
}

/// Discriminator loss with gradients for both logit maps.
template <typename T>
struct DiscLoss {
  T loss = T(0);
  std::vector<T> grad_real, grad_fake;
};

namespace detail {

template <typename T>
void require_finite(std::span<const T> v, const char* what) {
  if (v.empty()) throw NumericError(std::string(what) + ": empty logits");
  for (T x : v)
    if (!std::isfinite(double(x))) throw NumericError(std::string(what) + ": non-finite logit");
}

// log(1 + e^x) without overflow.
template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

/// Minimized discriminator loss, averaged per patch:
///   log: -[E log s(real) + E log(1 - s(fake))]
///   lsq: E (real - 1)^2 + E fake^2
template <typename T>
DiscLoss<T> adv_loss_D(std::span<const T> real, std::span<const T> fake, GanForm form) {
  detail::require_finite(real, "adv_loss_D");
  detail::require_finite(fake, "adv_loss_D");
  DiscLoss<T> out;
  out.grad_real.resize(real.size());
  out.grad_fake.resize(fake.size());
  const T nr = T(real.size()), nf = T(fake.size());
  double lr = 0, lf = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const T x = real[i];
    if (form == GanForm::log) {
      lr += double(detail::softplus(-x));
      out.grad_real[i] = (detail::sigmoid(x) - T(1)) / nr;
    } else {
      lr += double((x - T(1)) * (x - T(1)));
      out.grad_real[i] = T(2) * (x - T(1)) / nr;
    }
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const T x = fake[i];
    if (form == GanForm::log) {
      lf += double(detail::softplus(x));
      out.grad_fake[i] = detail::sigmoid(x) / nf;
    } else {
      lf += double(x * x);
      out.grad_fake[i] = T(2) * x / nf;
    }
  }
  out.loss = T(lr / double(nr) + lf / double(nf));
  return out;
}

/// Generator-side loss on fake logits (non-saturating for the log form):
///   log: -E log s(fake)      lsq: E (fake - 1)^2
template <typename T>
LossGrad<T> adv_loss_G(std::span<const T> fake, GanForm form) {
  detail::require_finite(fake, "adv_loss_G");
  LossGrad<T> out;
  out.grad.resize(fake.size());
  const T n = T(fake.size());
  double l = 0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const T x = fake[i];
    if (form == GanForm::log) {
      l += double(detail::softplus(-x));
      out.grad[i] = (detail::sigmoid(x) - T(1)) / n;
    } else {
      l += double((x - T(1)) * (x - T(1)));
      out.grad[i] = T(2) * (x - T(1)) / n;
    }
  }
  out.loss = T(l / double(n));
  return out;
}

}  // namespace adadepth::adversary

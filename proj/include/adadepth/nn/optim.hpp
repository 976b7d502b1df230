#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "adadepth/nn/params.hpp"

namespace adadepth::nn {

/// Named optimizer state arrays, keyed "<array name>/<slot>".
template <typename T>
using OptimizerState = std::map<std::string, std::vector<T>>;

/// Scales trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
  double ss = 0;
  for (const auto& a : ps)
    if (a.trainable)
      for (T g : a.grad) ss += double(g) * double(g);
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto& a : ps)
      if (a.trainable)
        for (T& g : a.grad) g *= s;
  }
  return norm;
}

template <typename T>
class Adam {
 public:
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Adam() = default;
  explicit Adam(double lr_) : lr(lr_) {}

  void step(ParamStore<T>& ps) {
    ++t_;
    const double c1 = 1 - std::pow(beta1, double(t_));
    const double c2 = 1 - std::pow(beta2, double(t_));
    for (auto& a : ps) {
      if (!a.trainable) continue;
      auto& m = slot(a, "m");
      auto& v = slot(a, "v");
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double g = a.grad[i];
        m[i] = T(beta1 * m[i] + (1 - beta1) * g);
        v[i] = T(beta2 * v[i] + (1 - beta2) * g * g);
        const double mh = m[i] / c1, vh = v[i] / c2;
        a.value[i] = T(a.value[i] - lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }

  long long steps() const { return t_; }
  OptimizerState<T> state() const {
    auto s = state_;
    s["__step"] = {T(t_)};
    return s;
  }
  void load(const OptimizerState<T>& s) {
    state_ = s;
    auto it = state_.find("__step");
    t_ = it == state_.end() ? 0 : (long long)(it->second.at(0));
    state_.erase("__step");
  }

 private:
  std::vector<T>& slot(const ParamArray<T>& a, const char* name) {
    auto& s = state_[a.name + "/" + name];
    if (s.size() != a.size()) s.assign(a.size(), T(0));
    return s;
  }

  long long t_ = 0;
  OptimizerState<T> state_;
};

/// Heavy-ball momentum: v <- mu * v + g; w <- w - lr * v.
template <typename T>
class Momentum {
 public:
  double lr = 1e-4, momentum = 0.9;

  Momentum() = default;
  Momentum(double lr_, double mu) : lr(lr_), momentum(mu) {}

  void step(ParamStore<T>& ps) {
    for (auto& a : ps) {
      if (!a.trainable) continue;
      auto& v = state_[a.name + "/velocity"];
      if (v.size() != a.size()) v.assign(a.size(), T(0));
      for (std::size_t i = 0; i < a.size(); ++i) {
        v[i] = T(momentum * v[i] + a.grad[i]);
        a.value[i] = T(a.value[i] - lr * v[i]);
      }
    }
  }

  const OptimizerState<T>& state() const { return state_; }
  void load(const OptimizerState<T>& s) { state_ = s; }

 private:
  OptimizerState<T> state_;
};

}  // namespace adadepth::nn

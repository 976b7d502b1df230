#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "adadepth/core/tensor.hpp"
#include "adadepth/nn/params.hpp"

namespace adadepth::nn {

inline constexpr std::size_t no_param = std::numeric_limits<std::size_t>::max();

/// Activations recorded by a forward pass and consumed, last-in first-out,
/// by the matching backward pass.
template <typename T>
class Tape {
 public:
  struct Entry {
    Tensor<T> tensor;
    std::vector<T> aux;
  };

  void push(Tensor<T> t, std::vector<T> aux = {}) { stack_.push_back({std::move(t), std::move(aux)}); }
  Entry pop() {
    if (stack_.empty()) throw ShapeError("tape underflow: backward does not match forward");
    Entry e = std::move(stack_.back());
    stack_.pop_back();
    return e;
  }
  bool empty() const { return stack_.empty(); }
  std::size_t depth() const { return stack_.size(); }
  void clear() { stack_.clear(); }

 private:
  std::vector<Entry> stack_;
};

/// Context for a forward pass. `train` selects batch statistics for
/// batch-norm; running statistics are only updated when `stats` is set.
template <typename T>
struct Pass {
  const ParamStore<T>& params;
  ParamStore<T>* stats = nullptr;
  Tape<T>* tape = nullptr;
  bool train = false;

  Pass with_train(bool t) const { return Pass{params, t ? stats : nullptr, tape, t}; }
};

struct Conv2d {
  int in = 0, out = 0, k = 3, stride = 1, pad = 1;
  std::size_t weight = no_param, bias = no_param;

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }
};

struct BatchNorm {
  int channels = 0;
  std::size_t gamma = no_param, beta = no_param, mean = no_param, var = no_param;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct Relu {};
struct LeakyRelu {
  double slope = 0.2;
};
struct Upsample2x {};

/// conv-bn-relu-conv-bn plus identity or projected shortcut, then relu.
struct ResidualBlock {
  Conv2d conv1, conv2;
  BatchNorm bn1, bn2;
  bool project = false;
  Conv2d proj;
  BatchNorm proj_bn;
};

using Layer = std::variant<Conv2d, BatchNorm, Relu, LeakyRelu, Upsample2x, ResidualBlock>;
using Sequential = std::vector<Layer>;

// ---------------------------------------------------------------------------
// Construction

enum class Init { he, zero };

/// Adds arrays to a store under a common prefix, partition tag and stage.
template <typename T>
struct Builder {
  ParamStore<T>& params;
  std::mt19937_64& rng;
  Partition tag = Partition::branch;
  int stage = 0;
  std::string prefix;

  Conv2d conv(const std::string& name, int in, int out, int k, int stride, int pad, bool bias = true,
              Init init = Init::he) {
    Conv2d c{in, out, k, stride, pad};
    c.weight = params.add(prefix + name + ".weight", {out, in, k, k}, tag, stage);
    if (init == Init::he) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in * k * k)));
      for (auto& v : params[c.weight].value) v = T(dist(rng));
    }
    if (bias) c.bias = params.add(prefix + name + ".bias", {out}, tag, stage);
    return c;
  }

  BatchNorm bn(const std::string& name, int ch) {
    BatchNorm b;
    b.channels = ch;
    b.gamma = params.add(prefix + name + ".gamma", {ch}, tag, stage);
    b.beta = params.add(prefix + name + ".beta", {ch}, tag, stage);
    b.mean = params.add(prefix + name + ".running_mean", {ch}, tag, stage, true);
    b.var = params.add(prefix + name + ".running_var", {ch}, tag, stage, true);
    std::fill(params[b.gamma].value.begin(), params[b.gamma].value.end(), T(1));
    std::fill(params[b.var].value.begin(), params[b.var].value.end(), T(1));
    return b;
  }

  ResidualBlock residual(const std::string& name, int in, int out, int stride) {
    ResidualBlock r;
    r.conv1 = conv(name + ".conv1", in, out, 3, stride, 1, false);
    r.bn1 = bn(name + ".bn1", out);
    r.conv2 = conv(name + ".conv2", out, out, 3, 1, 1, false);
    r.bn2 = bn(name + ".bn2", out);
    r.project = stride != 1 || in != out;
    if (r.project) {
      r.proj = conv(name + ".proj", in, out, 1, stride, 0, false);
      r.proj_bn = bn(name + ".proj_bn", out);
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void im2col(const T* x, int c, int h, int w, const Conv2d& cv, T* col) {
  const int oh = cv.out_h(h), ow = cv.out_w(w);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < cv.k; ++ky)
      for (int kx = 0; kx < cv.k; ++kx) {
        T* row = col + ((std::size_t(ci) * cv.k + ky) * cv.k + kx) * std::size_t(oh) * ow;
        const T* plane = x + std::size_t(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * cv.stride - cv.pad + ky;
          T* dst = row + std::size_t(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + std::size_t(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * cv.stride - cv.pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, const Conv2d& cv, T* x) {
  const int oh = cv.out_h(h), ow = cv.out_w(w);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < cv.k; ++ky)
      for (int kx = 0; kx < cv.k; ++kx) {
        const T* row = col + ((std::size_t(ci) * cv.k + ky) * cv.k + kx) * std::size_t(oh) * ow;
        T* plane = x + std::size_t(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * cv.stride - cv.pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + std::size_t(oy) * ow;
          T* dst = plane + std::size_t(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * cv.stride - cv.pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

inline bool is_pointwise(const Conv2d& cv) { return cv.k == 1 && cv.stride == 1 && cv.pad == 0; }

}  // namespace detail

template <typename T>
Tensor<T> forward(const Conv2d& cv, const Tensor<T>& x, const Pass<T>& pass) {
  if (x.c() != cv.in)
    throw ShapeError("conv expects " + std::to_string(cv.in) + " input channels, got " +
                     std::to_string(x.c()));
  const int oh = cv.out_h(x.h()), ow = cv.out_w(x.w());
  if (oh <= 0 || ow <= 0) throw ShapeError("conv input too small: " + x.shape().str());
  Tensor<T> y(x.n(), cv.out, oh, ow);
  const std::size_t K = std::size_t(cv.in) * cv.k * cv.k, P = std::size_t(oh) * ow;
  const auto& wv = pass.params[cv.weight].value;
  Eigen::Map<const detail::RowMat<T>> W(wv.data(), cv.out, K);
  std::vector<T> col(detail::is_pointwise(cv) ? 0 : K * P);
  for (int n = 0; n < x.n(); ++n) {
    const T* xs = x.sample(n).data();
    const T* cp = xs;
    if (!detail::is_pointwise(cv)) {
      detail::im2col(xs, x.c(), x.h(), x.w(), cv, col.data());
      cp = col.data();
    }
    Eigen::Map<const detail::RowMat<T>> C(cp, K, P);
    Eigen::Map<detail::RowMat<T>> Y(y.sample(n).data(), cv.out, P);
    Y.noalias() = W * C;
    if (cv.bias != no_param) {
      const auto& b = pass.params[cv.bias].value;
      for (int o = 0; o < cv.out; ++o) Y.row(o).array() += b[o];
    }
  }
  if (pass.tape) pass.tape->push(x);
  return y;
}

template <typename T>
Tensor<T> backward(const Conv2d& cv, ParamStore<T>& ps, Tape<T>& tape, const Tensor<T>& dy,
                   bool need_dx, bool param_grads) {
  Tensor<T> x = tape.pop().tensor;
  const int oh = cv.out_h(x.h()), ow = cv.out_w(x.w());
  require_shape(dy.shape(), Shape4{x.n(), cv.out, oh, ow}, "conv backward");
  const std::size_t K = std::size_t(cv.in) * cv.k * cv.k, P = std::size_t(oh) * ow;
  auto& warr = ps[cv.weight];
  const bool dw = param_grads && warr.trainable;
  const bool db = param_grads && cv.bias != no_param && ps[cv.bias].trainable;
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(x.shape());
  if (!dw && !db && !need_dx) return dx;
  Eigen::Map<const detail::RowMat<T>> W(warr.value.data(), cv.out, K);
  Eigen::Map<detail::RowMat<T>> dW(warr.grad.data(), cv.out, K);
  const bool pointwise = detail::is_pointwise(cv);
  std::vector<T> col(pointwise ? 0 : K * P), dcol(pointwise ? 0 : K * P);
  for (int n = 0; n < x.n(); ++n) {
    Eigen::Map<const detail::RowMat<T>> dY(dy.sample(n).data(), cv.out, P);
    if (dw) {
      const T* cp = x.sample(n).data();
      if (!pointwise) {
        detail::im2col(x.sample(n).data(), x.c(), x.h(), x.w(), cv, col.data());
        cp = col.data();
      }
      Eigen::Map<const detail::RowMat<T>> C(cp, K, P);
      dW.noalias() += dY * C.transpose();
    }
    if (db) {
      auto& g = ps[cv.bias].grad;
      // Sequential sum: Eigen's vectorized reduction order depends on the
      // buffer's alignment, which would make bias gradients run-dependent.
      for (int o = 0; o < cv.out; ++o) {
        double acc = 0;
        for (std::size_t p = 0; p < P; ++p) acc += double(dY(o, Eigen::Index(p)));
        g[o] += T(acc);
      }
    }
    if (need_dx) {
      if (pointwise) {
        Eigen::Map<detail::RowMat<T>> dX(dx.sample(n).data(), K, P);
        dX.noalias() = W.transpose() * dY;
      } else {
        Eigen::Map<detail::RowMat<T>> dC(dcol.data(), K, P);
        dC.noalias() = W.transpose() * dY;
        detail::col2im(dcol.data(), x.c(), x.h(), x.w(), cv, dx.sample(n).data());
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
Tensor<T> forward(const BatchNorm& bn, const Tensor<T>& x, const Pass<T>& pass) {
  if (x.c() != bn.channels) throw ShapeError("batch-norm channel mismatch: " + x.shape().str());
  const int N = x.n(), C = x.c();
  const std::size_t HW = x.shape().plane();
  const double M = double(N) * double(HW);
  const auto& gamma = pass.params[bn.gamma].value;
  const auto& beta = pass.params[bn.beta].value;
  std::vector<T> inv_std(C), mean(C);
  if (pass.train) {
    if (M < 2) throw ShapeError("batch-norm training needs more than one value per channel");
    for (int c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = x.data() + (std::size_t(n) * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += double(p[i]);
      }
      const double mu = s / M;
      for (int n = 0; n < N; ++n) {
        const T* p = x.data() + (std::size_t(n) * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = double(p[i]) - mu;
          ss += d * d;
        }
      }
      const double var = ss / M;
      mean[c] = T(mu);
      inv_std[c] = T(1.0 / std::sqrt(var + bn.eps));
      if (pass.stats) {
        auto& rm = (*pass.stats)[bn.mean].value;
        auto& rv = (*pass.stats)[bn.var].value;
        rm[c] = T((1 - bn.momentum) * double(rm[c]) + bn.momentum * mu);
        rv[c] = T((1 - bn.momentum) * double(rv[c]) + bn.momentum * var * M / (M - 1));
      }
    }
  } else {
    const auto& rm = pass.params[bn.mean].value;
    const auto& rv = pass.params[bn.var].value;
    for (int c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T(1.0 / std::sqrt(double(rv[c]) + bn.eps));
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> y(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (std::size_t(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        y[off + i] = gamma[c] * h + beta[c];
      }
    }
  if (pass.tape) {
    inv_std.push_back(pass.train ? T(1) : T(0));
    pass.tape->push(std::move(xhat), std::move(inv_std));
  }
  return y;
}

template <typename T>
Tensor<T> backward(const BatchNorm& bn, ParamStore<T>& ps, Tape<T>& tape, const Tensor<T>& dy,
                   bool need_dx, bool param_grads) {
  auto e = tape.pop();
  const Tensor<T>& xhat = e.tensor;
  require_shape(dy.shape(), xhat.shape(), "batch-norm backward");
  const bool train = e.aux.back() != T(0);
  const int N = xhat.n(), C = xhat.c();
  const std::size_t HW = xhat.shape().plane();
  const double M = double(N) * double(HW);
  const auto& gamma = ps[bn.gamma].value;
  const bool dg = param_grads && ps[bn.gamma].trainable;
  const bool dbeta = param_grads && ps[bn.beta].trainable;
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(xhat.shape());
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (std::size_t(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += double(dy[off + i]);
        sum_dy_xhat += double(dy[off + i]) * double(xhat[off + i]);
      }
    }
    if (dg) ps[bn.gamma].grad[c] += T(sum_dy_xhat);
    if (dbeta) ps[bn.beta].grad[c] += T(sum_dy);
    if (!need_dx) continue;
    const double g = double(gamma[c]) * double(e.aux[c]);
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (std::size_t(n) * C + c) * HW;
      if (train) {
        const double mdy = sum_dy / M, mdyx = sum_dy_xhat / M;
        for (std::size_t i = 0; i < HW; ++i)
          dx[off + i] = T(g * (double(dy[off + i]) - mdy - double(xhat[off + i]) * mdyx));
      } else {
        for (std::size_t i = 0; i < HW; ++i) dx[off + i] = T(g * double(dy[off + i]));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise and resampling layers

template <typename T>
Tensor<T> forward(const Relu&, const Tensor<T>& x, const Pass<T>& pass) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (pass.tape) pass.tape->push(y);
  return y;
}

template <typename T>
Tensor<T> backward(const Relu&, ParamStore<T>&, Tape<T>& tape, const Tensor<T>& dy, bool, bool) {
  Tensor<T> y = tape.pop().tensor;
  require_shape(dy.shape(), y.shape(), "relu backward");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > T(0) ? dy[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> forward(const LeakyRelu& l, const Tensor<T>& x, const Pass<T>& pass) {
  Tensor<T> y(x.shape());
  const T s = T(l.slope);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : s * x[i];
  if (pass.tape) pass.tape->push(x);
  return y;
}

template <typename T>
Tensor<T> backward(const LeakyRelu& l, ParamStore<T>&, Tape<T>& tape, const Tensor<T>& dy, bool,
                   bool) {
  Tensor<T> x = tape.pop().tensor;
  require_shape(dy.shape(), x.shape(), "leaky-relu backward");
  const T s = T(l.slope);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] > T(0) ? dy[i] : s * dy[i];
  return x;
}

template <typename T>
Tensor<T> forward(const Upsample2x&, const Tensor<T>& x, const Pass<T>&) {
  Tensor<T> y(x.n(), x.c(), 2 * x.h(), 2 * x.w());
  const int H = x.h(), W = x.w();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < 2 * H; ++yy)
        for (int xx = 0; xx < 2 * W; ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> backward(const Upsample2x&, ParamStore<T>&, Tape<T>&, const Tensor<T>& dy, bool, bool) {
  if (dy.h() % 2 || dy.w() % 2) throw ShapeError("upsample backward: odd gradient shape");
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c)
      for (int yy = 0; yy < dy.h(); ++yy)
        for (int xx = 0; xx < dy.w(); ++xx) dx.at(n, c, yy / 2, xx / 2) += dy.at(n, c, yy, xx);
  return dx;
}

// ---------------------------------------------------------------------------
// Residual block

template <typename T>
Tensor<T> forward(const ResidualBlock& r, const Tensor<T>& x, const Pass<T>& pass) {
  Tensor<T> h = forward(r.conv1, x, pass);
  h = forward(r.bn1, h, pass);
  h = forward(Relu{}, h, pass);
  h = forward(r.conv2, h, pass);
  h = forward(r.bn2, h, pass);
  if (r.project) {
    Tensor<T> s = forward(r.proj, x, pass);
    s = forward(r.proj_bn, s, pass);
    h += s;
  } else {
    h += x;
  }
  return forward(Relu{}, h, pass);
}

template <typename T>
Tensor<T> backward(const ResidualBlock& r, ParamStore<T>& ps, Tape<T>& tape, const Tensor<T>& dy,
                   bool need_dx, bool param_grads) {
  Tensor<T> d = backward(Relu{}, ps, tape, dy, true, param_grads);
  Tensor<T> dskip;
  if (r.project) {
    Tensor<T> ds = backward(r.proj_bn, ps, tape, d, true, param_grads);
    dskip = backward(r.proj, ps, tape, ds, need_dx, param_grads);
  } else if (need_dx) {
    dskip = d;
  }
  Tensor<T> dm = backward(r.bn2, ps, tape, d, true, param_grads);
  dm = backward(r.conv2, ps, tape, dm, true, param_grads);
  dm = backward(Relu{}, ps, tape, dm, true, param_grads);
  dm = backward(r.bn1, ps, tape, dm, true, param_grads);
  dm = backward(r.conv1, ps, tape, dm, need_dx, param_grads);
  if (need_dx) dm += dskip;
  return dm;
}

// ---------------------------------------------------------------------------
// Sequential composition

template <typename T>
Tensor<T> forward(const Sequential& seq, Tensor<T> x, const Pass<T>& pass) {
  for (const auto& layer : seq)
    x = std::visit([&](const auto& l) { return forward(l, x, pass); }, layer);
  return x;
}

template <typename T>
Tensor<T> backward(const Sequential& seq, ParamStore<T>& ps, Tape<T>& tape, Tensor<T> dy,
                   bool need_dx, bool param_grads) {
  for (std::size_t i = seq.size(); i-- > 0;) {
    const bool dx_here = i > 0 || need_dx;
    dy = std::visit([&](const auto& l) { return backward(l, ps, tape, dy, dx_here, param_grads); },
                    seq[i]);
  }
  return dy;
}

}  // namespace adadepth::nn

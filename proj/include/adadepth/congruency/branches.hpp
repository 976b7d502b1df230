#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "adadepth/congruency/losses.hpp"
#include "adadepth/core/random.hpp"
#include "adadepth/core/tensor.hpp"
#include "adadepth/depthnet/network.hpp"
#include "adadepth/nn/layers.hpp"
#include "adadepth/nn/optim.hpp"

namespace adadepth::congruency {

/// The additive residual branch dM: L_t -> latent-shaped increment.
/// Two residual blocks at trunk resolution, one stride-2 residual stage, and
/// a zero-initialized 1x1 output conv, so dM(L) = 0 for every L at start.
template <typename T>
class ResidualBranch {
 public:
  ResidualBranch() = default;
  ResidualBranch(const depthnet::ArchConfig& arch, std::uint64_t seed)
      : in_{1, arch.trunk_c(), arch.latent_h() * 2, arch.latent_w() * 2} {
    Rng rng(mix_seed(seed, 0xd317a));
    nn::Builder<T> b{params_, rng, Partition::branch, 0, "delta_m."};
    const int c = arch.trunk_c(), out = arch.latent_c();
    layers_.push_back(b.residual("block1", c, c, 1));
    layers_.push_back(b.residual("block2", c, c, 1));
    layers_.push_back(b.residual("down", c, out, 2));
    layers_.push_back(b.conv("out", out, out, 1, 1, 0, true, nn::Init::zero));
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  Tensor<T> forward(const Tensor<T>& trunk, const nn::Pass<T>& pass) const {
    if (trunk.c() != in_.c || trunk.h() != in_.h || trunk.w() != in_.w)
      throw ShapeError("residual branch expects trunk features " + in_.str() + ", got " + trunk.shape().str());
    return nn::forward(layers_, trunk, pass);
  }
  Tensor<T> forward(const Tensor<T>& trunk) const { return forward(trunk, nn::Pass<T>{params_}); }

  Tensor<T> backward(nn::Tape<T>& tape, const Tensor<T>& dy, bool need_dx, bool param_grads = true) {
    return nn::backward(layers_, params_, tape, dy, need_dx, param_grads);
  }

 private:
  Shape4 in_;
  ParamStore<T> params_;
  nn::Sequential layers_;
};

/// The feature reconstruction branch C_t: latent -> trunk-shaped features.
/// conv block at latent resolution, 2x nearest upsample, conv block, output conv.
template <typename T>
class ReconBranch {
 public:
  ReconBranch() = default;
  ReconBranch(const depthnet::ArchConfig& arch, std::uint64_t seed)
      : in_{1, arch.latent_c(), arch.latent_h(), arch.latent_w()} {
    Rng rng(mix_seed(seed, 0xc7));
    nn::Builder<T> b{params_, rng, Partition::branch, 0, "c_t."};
    const int c = arch.trunk_c();
    layers_.push_back(b.conv("conv1", arch.latent_c(), c, 3, 1, 1, false));
    layers_.push_back(b.bn("bn1", c));
    layers_.push_back(nn::Relu{});
    layers_.push_back(nn::Upsample2x{});
    layers_.push_back(b.conv("conv2", c, c, 3, 1, 1, false));
    layers_.push_back(b.bn("bn2", c));
    layers_.push_back(nn::Relu{});
    layers_.push_back(b.conv("out", c, c, 3, 1, 1, true));
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  Tensor<T> forward(const Tensor<T>& latent, const nn::Pass<T>& pass) const {
    if (latent.c() != in_.c || latent.h() != in_.h || latent.w() != in_.w)
      throw ShapeError("reconstruction branch expects latent " + in_.str() + ", got " + latent.shape().str());
    return nn::forward(layers_, latent, pass);
  }
  Tensor<T> forward(const Tensor<T>& latent) const { return forward(latent, nn::Pass<T>{params_}); }

  Tensor<T> backward(nn::Tape<T>& tape, const Tensor<T>& dy, bool need_dx, bool param_grads = true) {
    return nn::backward(layers_, params_, tape, dy, need_dx, param_grads);
  }

 private:
  Shape4 in_;
  ParamStore<T> params_;
  nn::Sequential layers_;
};

/// latent_tgt = latent_src + dM(L_t). `residual` is returned as
/// latent_tgt - latent_src so the additive law holds bit-exactly.
template <typename T>
struct RtfOutput {
  Tensor<T> latent;
  Tensor<T> residual;
};

template <typename T>
RtfOutput<T> rtf_apply(const ResidualBranch<T>& branch, const Tensor<T>& trunk, const Tensor<T>& latent_src,
                       const nn::Pass<T>& pass) {
  Tensor<T> delta = branch.forward(trunk, pass);
  latent_src.require_same(delta, "rtf_apply");
  RtfOutput<T> out{latent_src, Tensor<T>(latent_src.shape())};
  out.latent += delta;
  for (std::size_t i = 0; i < out.latent.size(); ++i) out.residual[i] = out.latent[i] - latent_src[i];
  return out;
}

template <typename T>
RtfOutput<T> rtf_apply(const ResidualBranch<T>& branch, const Tensor<T>& trunk, const Tensor<T>& latent_src) {
  return rtf_apply(branch, trunk, latent_src, nn::Pass<T>{branch.params()});
}

/// Element-mean L1 between L_t and C_t(latent). With `with_grad`, returns
/// `grad_trunk` w.r.t. L_t and `grad_latent` w.r.t. the latent (through C_t),
/// and accumulates branch parameter gradients into trainable arrays. All
/// gradients are multiplied by `grad_scale`.
template <typename T>
struct FcfResult {
  T loss = T(0);
  Tensor<T> recon;
  Tensor<T> grad_latent;
  Tensor<T> grad_trunk;
};

template <typename T>
FcfResult<T> fcf_loss(ReconBranch<T>& branch, const Tensor<T>& latent, const Tensor<T>& trunk, bool train = false,
                      bool with_grad = true, ParamStore<T>* stats = nullptr, T grad_scale = T(1)) {
  nn::Tape<T> tape;
  FcfResult<T> r;
  r.recon = branch.forward(latent, nn::Pass<T>{branch.params(), stats, with_grad ? &tape : nullptr, train});
  if (!(r.recon.shape() == trunk.shape()))
    throw ShapeError("fcf: reconstruction " + r.recon.shape().str() + " vs trunk " + trunk.shape().str());
  auto l1 = mean_l1<T>(std::span<const T>(trunk.vec()), std::span<const T>(r.recon.vec()));
  r.loss = l1.loss;
  if (with_grad) {
    r.grad_trunk = Tensor<T>(trunk.shape());
    r.grad_trunk.vec() = std::move(l1.grad_a);
    Tensor<T> drecon(trunk.shape());
    drecon.vec() = std::move(l1.grad_b);
    if (grad_scale != T(1)) {
      for (auto& g : r.grad_trunk.vec()) g *= grad_scale;
      for (auto& g : drecon.vec()) g *= grad_scale;
    }
    r.grad_latent = branch.backward(tape, drecon, true);
  }
  return r;
}

// ---------------------------------------------------------------------------
// C_t pre-initialization

/// Per-sample (L_t, latent) pairs produced by a frozen encoder.
template <typename T>
struct FeaturePairs {
  std::vector<Tensor<T>> trunk;
  std::vector<Tensor<T>> latent;
  std::size_t size() const { return trunk.size(); }
};

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items, const std::vector<int>& idx) {
  if (idx.empty()) throw ShapeError("stack: empty index list");
  const Shape4 s = items.at(idx[0]).shape();
  Tensor<T> out(int(idx.size()), s.c, s.h, s.w);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& t = items.at(idx[k]);
    require_shape(t.shape(), Shape4{1, s.c, s.h, s.w}, "stack");
    std::copy(t.vec().begin(), t.vec().end(), out.sample(int(k)).begin());
  }
  return out;
}

struct CtPretrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  double holdout_frac = 0.1;
};

template <typename T>
struct CtPretrainResult {
  ReconBranch<T> branch;
  double initial_holdout_loss = 0;
  double final_holdout_loss = 0;
  bool warning = false;  // held-out loss did not decrease
};

template <typename T>
double holdout_fcf_loss(ReconBranch<T>& branch, const FeaturePairs<T>& f, std::size_t first) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = first; i < f.size(); i += 16) {
    std::vector<int> idx;
    for (std::size_t k = i; k < std::min(f.size(), i + 16); ++k) idx.push_back(int(k));
    auto r = fcf_loss(branch, stack(f.latent, idx), stack(f.trunk, idx), false, false);
    s += double(r.loss) * double(idx.size());
    n += idx.size();
  }
  return n ? s / double(n) : 0.0;
}

/// Fits C_t to reconstruct L_t from the frozen source encoder's latent
/// (M_t = M_s) with Adam. The last `holdout_frac` of the pairs is held out
/// for the before/after loss comparison.
template <typename T>
CtPretrainResult<T> pretrain_ct(const depthnet::ArchConfig& arch, const FeaturePairs<T>& features,
                                const CtPretrainConfig& cfg, std::uint64_t seed) {
  if (features.size() < 2) throw ConfigError("pretrain_ct needs at least two feature pairs");
  if (cfg.steps < 0 || cfg.batch_size < 2) throw ConfigError("pretrain_ct: invalid budget or batch size");
  CtPretrainResult<T> res{ReconBranch<T>(arch, seed)};
  const std::size_t holdout = std::max<std::size_t>(1, std::size_t(cfg.holdout_frac * double(features.size())));
  const std::size_t n_train = features.size() - holdout;
  res.initial_holdout_loss = holdout_fcf_loss(res.branch, features, n_train);
  res.final_holdout_loss = res.initial_holdout_loss;
  if (cfg.steps == 0) return res;

  Rng rng(mix_seed(seed, 0xc7c7));
  nn::Adam<T> opt(cfg.lr);
  res.branch.params().set_trainable(true);
  for (int step = 0; step < cfg.steps; ++step) {
    auto idx = sample_indices(rng, int(n_train), cfg.batch_size);
    res.branch.params().zero_grad();
    fcf_loss(res.branch, stack(features.latent, idx), stack(features.trunk, idx), true, true,
             &res.branch.params());
    opt.step(res.branch.params());
  }
  res.branch.params().set_trainable(false);
  res.final_holdout_loss = holdout_fcf_loss(res.branch, features, n_train);
  res.warning = !(res.final_holdout_loss < res.initial_holdout_loss);
  return res;
}

/// Runs the frozen encoder (eval mode) over images to collect (L_t, latent).
template <typename T>
FeaturePairs<T> encode_pairs(const depthnet::DepthNetwork<T>& net, const std::vector<ImageTensor>& images) {
  FeaturePairs<T> f;
  for (const auto& img : images) {
    auto tr = net.encode(to_batch<T>({&img}));
    f.trunk.push_back(std::move(tr.trunk));
    f.latent.push_back(std::move(tr.latent));
  }
  return f;
}

}  // namespace adadepth::congruency

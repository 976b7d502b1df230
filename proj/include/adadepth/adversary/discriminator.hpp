#pragma once

#include <string>
#include <utility>

#include "adadepth/core/error.hpp"
#include "adadepth/core/random.hpp"
#include "adadepth/core/tensor.hpp"
#include "adadepth/depthnet/network.hpp"
#include "adadepth/nn/layers.hpp"

namespace adadepth::adversary {

enum class DiscriminatorKind { feature, depth };

inline const char* to_string(DiscriminatorKind k) { return k == DiscriminatorKind::feature ? "feature" : "depth"; }

/// Fully-convolutional patch discriminator.
///  feature: two stride-2 3x3 convs and a 1x1 head over the latent block.
///  depth:   three stride-2 4x4 convs and a 3x3 head over a log-depth map
///           (receptive field 38 px).
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(DiscriminatorKind kind, int channels, int height, int width, std::uint64_t seed)
      : kind_(kind), in_{1, channels, height, width} {
    Rng rng(mix_seed(seed, kind == DiscriminatorKind::feature ? 0xdf : 0xd7));
    const std::string prefix = kind == DiscriminatorKind::feature ? "d_f." : "d_y.";
    nn::Builder<T> b{params_, rng, Partition::branch, 0, prefix};
    if (kind == DiscriminatorKind::feature) {
      layers_.push_back(b.conv("conv1", channels, 128, 3, 2, 1));
      layers_.push_back(nn::LeakyRelu{});
      layers_.push_back(b.conv("conv2", 128, 128, 3, 2, 1));
      layers_.push_back(nn::LeakyRelu{});
      final_ = b.conv("head", 128, 1, 1, 1, 0);
    } else {
      layers_.push_back(b.conv("conv1", channels, 32, 4, 2, 1));
      layers_.push_back(nn::LeakyRelu{});
      layers_.push_back(b.conv("conv2", 32, 64, 4, 2, 1));
      layers_.push_back(nn::LeakyRelu{});
      layers_.push_back(b.conv("conv3", 64, 128, 4, 2, 1));
      layers_.push_back(nn::LeakyRelu{});
      final_ = b.conv("head", 128, 1, 3, 1, 1);
    }
    layers_.push_back(final_);
  }

  DiscriminatorKind kind() const { return kind_; }
  const Shape4& input_shape() const { return in_; }
  int input_channels() const { return in_.c; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Per-patch scores, N x 1 x h' x w'.
  Tensor<T> forward(const Tensor<T>& x, nn::Tape<T>* tape = nullptr) const {
    if (x.c() != in_.c || x.h() != in_.h || x.w() != in_.w)
      throw ShapeError(std::string(to_string(kind_)) + " discriminator expects (" + std::to_string(in_.c) + "," +
                       std::to_string(in_.h) + "," + std::to_string(in_.w) + ") input, got " + x.shape().str());
    Tensor<T> y = nn::forward(layers_, x, nn::Pass<T>{params_, nullptr, tape, false});
    for (std::size_t i = 0; i < y.size(); ++i)
      if (!std::isfinite(double(y[i]))) throw NumericError("non-finite discriminator output");
    return y;
  }

  Tensor<T> backward(nn::Tape<T>& tape, const Tensor<T>& dlogits, bool param_grads) {
    return nn::backward(layers_, params_, tape, dlogits, true, param_grads);
  }

  void zero_final_layer() {
    std::fill(params_[final_.weight].value.begin(), params_[final_.weight].value.end(), T(0));
    if (final_.bias != nn::no_param)
      std::fill(params_[final_.bias].value.begin(), params_[final_.bias].value.end(), T(0));
  }

  const nn::Conv2d& first_layer() const { return std::get<nn::Conv2d>(layers_.front()); }

 private:
  DiscriminatorKind kind_ = DiscriminatorKind::feature;
  Shape4 in_;
  ParamStore<T> params_;
  nn::Sequential layers_;
  nn::Conv2d final_;
};

template <typename T>
struct DiscriminatorPair {
  Discriminator<T> feature;
  Discriminator<T> depth;
};

/// D_F over the latent block and D_Y over half-resolution depth maps. The
/// score heads start at zero: without normalization layers the He-initialized
/// stacks emit logits in the tens, and the first lsq steps then blow up.
template <typename T>
DiscriminatorPair<T> init_discriminators(std::uint64_t seed, const depthnet::ArchConfig& arch = {}) {
  DiscriminatorPair<T> d{
      Discriminator<T>(DiscriminatorKind::feature, arch.latent_c(), arch.latent_h(), arch.latent_w(), seed),
      Discriminator<T>(DiscriminatorKind::depth, 1, arch.depth_h(), arch.depth_w(), seed)};
  d.feature.zero_final_layer();
  d.depth.zero_final_layer();
  return d;
}

}  // namespace adadepth::adversary

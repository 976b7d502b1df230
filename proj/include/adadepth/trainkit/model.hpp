#pragma once

#include <optional>

#include "adadepth/congruency/branches.hpp"
#include "adadepth/core/image.hpp"
#include "adadepth/depthnet/network.hpp"

namespace adadepth::trainkit {

using Net = depthnet::DepthNetwork<float>;

inline DepthMap to_depth_map(const Tensor<float>& depth, int n = 0) {
  DepthMap d(depth.h(), depth.w());
  auto s = depth.sample(n);
  std::copy(s.begin(), s.end(), d.depth.begin());
  return d;
}

/// Eval-mode predictor: T(M(x)), with M(x) = M_s(x) + dM(L_t(x)) when a
/// residual branch is attached.
struct DepthModel {
  Net net;
  std::optional<congruency::ResidualBranch<float>> delta_m;

  Tensor<float> latent(const Tensor<float>& x) const {
    auto tr = net.encode(x);
    if (delta_m) tr.latent += delta_m->forward(tr.trunk);
    return tr.latent;
  }

  /// N x 1 x H/2 x W/2 depth in metres.
  Tensor<float> predict_batch(const Tensor<float>& x) const {
    return net.depth_from_raw(net.decode_raw(latent(x), nn::Pass<float>{net.params()}));
  }

  DepthMap predict(const ImageTensor& img) const { return to_depth_map(predict_batch(to_batch<float>({&img}))); }
};

}  // namespace adadepth::trainkit

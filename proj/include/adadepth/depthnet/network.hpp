#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/core/image.hpp"
#include "adadepth/core/random.hpp"
#include "adadepth/core/tensor.hpp"
#include "adadepth/nn/layers.hpp"
#include "adadepth/nn/params.hpp"

namespace adadepth::depthnet {

inline constexpr int n_stages = 4;
inline constexpr int trunk_output_stage = 3;  // L_t lives here
inline constexpr int total_stride = 16;

/// How many final encoder stages adapt to the target domain. 1 keeps only
/// the last stage (the head) adaptable; 0 freezes the whole encoder.
struct PartitionSpec {
  int adapt_depth = 1;

  void validate() const {
    if (adapt_depth < 0 || adapt_depth > n_stages)
      throw ConfigError("adapt_depth must lie in [0, " + std::to_string(n_stages) + "]");
  }
  bool adaptable(int stage) const { return stage > n_stages - adapt_depth; }
};

struct ArchConfig {
  int height = 128;
  int width = 160;
  int stem_channels = 16;
  std::array<int, n_stages> channels{16, 32, 64, 128};
  std::array<int, 3> decoder_channels{64, 32, 16};
  double init_depth = 3.0;  // output bias starts at log(init_depth)
  float min_depth = 0.1f, max_depth = 100.f;
  PartitionSpec partition;

  void validate() const {
    if (height <= 0 || width <= 0 || height % total_stride || width % total_stride)
      throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                        " is not divisible by the encoder stride " + std::to_string(total_stride));
    for (int c : channels)
      if (c <= 0) throw ConfigError("channel counts must be positive");
    if (stem_channels <= 0) throw ConfigError("channel counts must be positive");
    for (int c : decoder_channels)
      if (c <= 0) throw ConfigError("channel counts must be positive");
    if (!(min_depth > 0 && min_depth < max_depth)) throw ConfigError("invalid output depth clamp");
    partition.validate();
  }

  int latent_h() const { return height / total_stride; }
  int latent_w() const { return width / total_stride; }
  int latent_c() const { return channels[n_stages - 1]; }
  int trunk_c() const { return channels[trunk_output_stage - 1]; }
  int depth_h() const { return height / 2; }
  int depth_w() const { return width / 2; }
};

template <typename T>
struct ForwardTrace {
  Tensor<T> trunk;   // L_t: output of the last shared stage
  Tensor<T> latent;  // M(x): encoder output
  Tensor<T> depth;   // positive metres, N x 1 x H/2 x W/2
};

/// Fully-convolutional encoder-decoder depth regressor. Encoder stages 1..4
/// halve resolution each; stage 1 includes a stride-1 stem. The decoder maps
/// the latent back to half input resolution through nearest-neighbour
/// upsampling and convolution blocks, ending in depth = clamp(exp(raw)).
template <typename T>
class DepthNetwork {
 public:
  DepthNetwork() = default;

  DepthNetwork(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
    arch_.validate();
    Rng rng(mix_seed(seed, 0xde97));
    build(rng);
    apply_partition(arch_.partition);
  }

  const ArchConfig& arch() const { return arch_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Retags encoder arrays: adaptable stages become `head`, the rest `trunk`.
  void apply_partition(const PartitionSpec& spec) {
    spec.validate();
    arch_.partition = spec;
    for (auto& a : params_)
      if (a.stage > 0) a.tag = spec.adaptable(a.stage) ? Partition::head : Partition::trunk;
  }

  // -- stage-level API used by the training loops ---------------------------

  Tensor<T> run_stage(int stage, const Tensor<T>& x, const nn::Pass<T>& pass) const {
    return nn::forward(stages_.at(stage - 1), x, pass);
  }

  Tensor<T> back_stage(int stage, nn::Tape<T>& tape, const Tensor<T>& dy, bool need_dx, bool param_grads) {
    return nn::backward(stages_.at(stage - 1), params_, tape, dy, need_dx, param_grads);
  }

  /// Runs stages [first, last] inclusive.
  Tensor<T> run_stages(int first, int last, Tensor<T> x, const nn::Pass<T>& pass) const {
    for (int s = first; s <= last; ++s) x = run_stage(s, x, pass);
    return x;
  }

  /// Raw log-depth, N x 1 x H/2 x W/2.
  Tensor<T> decode_raw(const Tensor<T>& latent, const nn::Pass<T>& pass) const {
    require_shape(latent.shape(), Shape4{latent.n(), arch_.latent_c(), arch_.latent_h(), arch_.latent_w()},
                  "decoder input");
    return nn::forward(decoder_, latent, pass);
  }

  Tensor<T> back_decode(nn::Tape<T>& tape, const Tensor<T>& draw, bool need_dx, bool param_grads) {
    return nn::backward(decoder_, params_, tape, draw, need_dx, param_grads);
  }

  Tensor<T> depth_from_raw(const Tensor<T>& raw) const {
    Tensor<T> d(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i)
      d[i] = std::clamp(T(std::exp(raw[i])), T(arch_.min_depth), T(arch_.max_depth));
    return d;
  }

  /// d depth / d raw: the depth itself inside the clamp range, zero outside.
  Tensor<T> depth_grad_to_raw(const Tensor<T>& raw, const Tensor<T>& ddepth) const {
    Tensor<T> g(raw.shape());
    const T lo = std::log(T(arch_.min_depth)), hi = std::log(T(arch_.max_depth));
    for (std::size_t i = 0; i < raw.size(); ++i)
      g[i] = (raw[i] > lo && raw[i] < hi) ? ddepth[i] * T(std::exp(raw[i])) : T(0);
    return g;
  }

  // -- whole-network forward --------------------------------------------------

  /// Eval mode: batch-norm uses running statistics; a pure function of
  /// (params, x).
  ForwardTrace<T> forward(const Tensor<T>& x) const {
    check_input(x);
    nn::Pass<T> pass{params_};
    ForwardTrace<T> tr;
    tr.trunk = run_stages(1, trunk_output_stage, x, pass);
    tr.latent = run_stages(trunk_output_stage + 1, n_stages, tr.trunk, pass);
    tr.depth = depth_from_raw(decode_raw(tr.latent, pass));
    return tr;
  }

  ForwardTrace<T> forward(const ImageTensor& img) const { return forward(to_batch<T>({&img})); }

  /// Eval-mode encoder only; the returned trace has no depth.
  ForwardTrace<T> encode(const Tensor<T>& x) const {
    check_input(x);
    nn::Pass<T> pass{params_};
    ForwardTrace<T> tr;
    tr.trunk = run_stages(1, trunk_output_stage, x, pass);
    tr.latent = run_stages(trunk_output_stage + 1, n_stages, tr.trunk, pass);
    return tr;
  }

  void check_input(const Tensor<T>& x) const {
    if (x.c() != 3 || x.h() != arch_.height || x.w() != arch_.width)
      throw ShapeError("network expects N x 3 x " + std::to_string(arch_.height) + " x " +
                       std::to_string(arch_.width) + " input, got " + x.shape().str());
  }

 private:
  void build(Rng& rng) {
    for (int s = 1; s <= n_stages; ++s) {
      nn::Builder<T> b{params_, rng, Partition::trunk, s, "encoder.stage" + std::to_string(s) + "."};
      nn::Sequential seq;
      int in = s == 1 ? arch_.stem_channels : arch_.channels[s - 2];
      if (s == 1) {
        seq.push_back(b.conv("stem.conv", 3, arch_.stem_channels, 3, 1, 1, false));
        seq.push_back(b.bn("stem.bn", arch_.stem_channels));
        seq.push_back(nn::Relu{});
      }
      seq.push_back(b.residual("block", in, arch_.channels[s - 1], 2));
      stages_.push_back(std::move(seq));
    }
    nn::Builder<T> d{params_, rng, Partition::decoder, 0, "decoder."};
    int in = arch_.latent_c();
    for (int i = 0; i < 3; ++i) {
      const std::string name = "up" + std::to_string(i + 1);
      decoder_.push_back(nn::Upsample2x{});
      decoder_.push_back(d.conv(name + ".conv", in, arch_.decoder_channels[i], 3, 1, 1, false));
      decoder_.push_back(d.bn(name + ".bn", arch_.decoder_channels[i]));
      decoder_.push_back(nn::Relu{});
      in = arch_.decoder_channels[i];
    }
    nn::Conv2d out = d.conv("out", in, 1, 3, 1, 1, true);
    for (auto& w : params_[out.weight].value) w *= T(0.1);
    params_[out.bias].value[0] = T(std::log(arch_.init_depth));
    decoder_.push_back(out);
  }

  ArchConfig arch_;
  ParamStore<T> params_;
  std::vector<nn::Sequential> stages_;
  nn::Sequential decoder_;
};

/// Disjoint split of encoder arrays into frozen and adaptable names.
/// Decoder arrays belong to neither set; they are always frozen during
/// adaptation.
struct ParamPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> adaptable;
};

template <typename T>
ParamPartition partition_params(const ParamStore<T>& params, const PartitionSpec& spec) {
  spec.validate();
  ParamPartition p;
  for (const auto& a : params)
    if (a.stage > 0) (spec.adaptable(a.stage) ? p.adaptable : p.frozen).push_back(a.name);
  return p;
}

template <typename T>
DepthNetwork<T> init_network(std::uint64_t seed, const ArchConfig& arch) {
  return DepthNetwork<T>(arch, seed);
}

/// Copies parameter values between networks of identical architecture.
template <typename T>
void copy_values(const ParamStore<T>& from, ParamStore<T>& to) {
  if (from.count() != to.count()) throw ShapeError("parameter stores differ in size");
  for (std::size_t i = 0; i < from.count(); ++i) {
    if (from[i].name != to[i].name || from[i].shape != to[i].shape)
      throw ShapeError("parameter stores differ at '" + from[i].name + "'");
    to[i].value = from[i].value;
  }
}

}  // namespace adadepth::depthnet

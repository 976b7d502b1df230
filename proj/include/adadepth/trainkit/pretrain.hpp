#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "adadepth/depthnet/berhu.hpp"
#include "adadepth/evalkit/evaluate.hpp"
#include "adadepth/nn/optim.hpp"
#include "adadepth/scenegen/dataset.hpp"
#include "adadepth/trainkit/config.hpp"
#include "adadepth/trainkit/model.hpp"

namespace adadepth::trainkit {

struct PretrainEpoch {
  int epoch = 0;
  double lr = 0;
  double loss_start = 0;  // mean BerHu over the first tenth of the epoch's batches
  double loss_end = 0;    // ... and over the last tenth
  double loss_mean = 0;
  double val_rel = 0;
};

struct PretrainResult {
  Net net;
  std::vector<PretrainEpoch> epochs;
  double val_rel = 0;  // of the returned parameters; 0 when no epoch ran
  int best_epoch = -1;
};

/// Mirrors an image and its label left-right.
inline void hflip(ImageTensor& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y) {
      float* row = &img.at(c, y, 0);
      std::reverse(row, row + img.width);
    }
}

inline void hflip(DepthMap& d) {
  for (int y = 0; y < d.height; ++y) {
    std::reverse(d.depth.begin() + std::ptrdiff_t(y) * d.width, d.depth.begin() + std::ptrdiff_t(y + 1) * d.width);
    std::reverse(d.valid.begin() + std::ptrdiff_t(y) * d.width, d.valid.begin() + std::ptrdiff_t(y + 1) * d.width);
  }
}

/// One supervised step: train-mode forward through the whole network,
/// BerHu on the half-resolution labels, backward into every trainable array.
inline double supervised_step(Net& net, const Tensor<float>& x, const std::vector<const DepthMap*>& labels) {
  nn::Tape<float> tape;
  nn::Pass<float> pass{net.params(), &net.params(), &tape, true};
  Tensor<float> h = net.run_stages(1, depthnet::n_stages, x, pass);
  Tensor<float> raw = net.decode_raw(h, pass);
  Tensor<float> depth = net.depth_from_raw(raw);
  std::vector<float> gt(depth.size());
  std::vector<std::uint8_t> mask(depth.size());
  const std::size_t plane = depth.shape().plane();
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n]->size() != plane) throw ShapeError("label does not match prediction resolution");
    std::copy(labels[n]->depth.begin(), labels[n]->depth.end(), gt.begin() + std::ptrdiff_t(n * plane));
    std::copy(labels[n]->valid.begin(), labels[n]->valid.end(), mask.begin() + std::ptrdiff_t(n * plane));
  }
  auto lg = depthnet::berhu_loss<float>(depth.vec(), gt, mask);
  Tensor<float> dd(depth.shape());
  dd.vec() = std::move(lg.grad);
  Tensor<float> g = net.back_decode(tape, net.depth_grad_to_raw(raw, dd), true, true);
  for (int s = depthnet::n_stages; s >= 1; --s) g = net.back_stage(s, tape, g, s > 1, true);
  return double(lg.loss);
}

/// Supervised source training with Adam, hflip augmentation and a x`lr_decay`
/// step whenever the validation rel fails to improve for `plateau_patience`
/// epochs. The last `val_frac` of the data is held out; the parameters with
/// the best validation rel are returned.
inline PretrainResult pretrain_source(Net net, const scenegen::LabeledSet& data, const PretrainConfig& cfg,
                                      const std::function<void(const PretrainEpoch&)>& on_epoch = {}) {
  cfg.validate();
  const std::size_t n_val = std::max<std::size_t>(1, std::size_t(cfg.val_frac * double(data.size())));
  if (data.size() < n_val + std::size_t(cfg.batch_size))
    throw DatasetError("source split too small for the configured batch size and validation fraction");
  const std::size_t n_train = data.size() - n_val;

  std::vector<DepthMap> labels;
  for (const auto& d : data.depths) labels.push_back(downsample2x(d));
  scenegen::LabeledSet val;
  val.images.assign(data.images.begin() + std::ptrdiff_t(n_train), data.images.end());
  val.depths.assign(data.depths.begin() + std::ptrdiff_t(n_train), data.depths.end());

  PretrainResult res{net};
  if (cfg.epochs == 0) return res;

  auto val_rel = [&](const Net& n) {
    return evalkit::evaluate_labeled(DepthModel{n, std::nullopt}, val, evalkit::EvalConfig{}).aggregate.rel;
  };

  Rng rng(mix_seed(cfg.seed, 0x5eed));
  nn::Adam<float> opt(cfg.lr);
  net.params().set_trainable(true);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<std::size_t> order(n_train);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    shuffle(order, rng);
    std::vector<double> losses;
    for (std::size_t b = 0; b + std::size_t(cfg.batch_size) <= n_train; b += std::size_t(cfg.batch_size)) {
      std::vector<ImageTensor> imgs;
      std::vector<DepthMap> lab;
      for (int k = 0; k < cfg.batch_size; ++k) {
        const std::size_t i = order[b + std::size_t(k)];
        imgs.push_back(data.images[i]);
        lab.push_back(labels[i]);
        if (cfg.hflip && uniform01(rng) < 0.5) {
          hflip(imgs.back());
          hflip(lab.back());
        }
      }
      std::vector<const ImageTensor*> ip;
      std::vector<const DepthMap*> lp;
      for (std::size_t k = 0; k < imgs.size(); ++k) {
        ip.push_back(&imgs[k]);
        lp.push_back(&lab[k]);
      }
      net.params().zero_grad();
      const double loss = supervised_step(net, to_batch<float>(ip), lp);
      if (!std::isfinite(loss)) throw DivergenceError(epoch, "non-finite pretraining loss");
      nn::clip_grad_norm(net.params(), cfg.clip_norm);
      opt.step(net.params());
      losses.push_back(loss);
    }
    PretrainEpoch e;
    e.epoch = epoch;
    e.lr = opt.lr;
    const std::size_t tenth = std::max<std::size_t>(1, losses.size() / 10);
    e.loss_start = std::accumulate(losses.begin(), losses.begin() + std::ptrdiff_t(tenth), 0.0) / double(tenth);
    e.loss_end = std::accumulate(losses.end() - std::ptrdiff_t(tenth), losses.end(), 0.0) / double(tenth);
    e.loss_mean = std::accumulate(losses.begin(), losses.end(), 0.0) / double(losses.size());
    e.val_rel = val_rel(net);
    res.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
    if (e.val_rel < best) {
      best = e.val_rel;
      since_best = 0;
      res.best_epoch = epoch;
      depthnet::copy_values(net.params(), res.net.params());
    } else if (++since_best >= cfg.plateau_patience) {
      opt.lr *= cfg.lr_decay;
      since_best = 0;
    }
  }
  res.val_rel = best;
  return res;
}

inline PretrainResult pretrain_source(Net net, const scenegen::DatasetManifest& source_train,
                                      const PretrainConfig& cfg,
                                      const std::function<void(const PretrainEpoch&)>& on_epoch = {}) {
  if (!source_train.labeled()) throw DatasetError("pretraining needs a split with depth labels");
  return pretrain_source(std::move(net), scenegen::load_labeled(source_train), cfg, on_epoch);
}

}  // namespace adadepth::trainkit

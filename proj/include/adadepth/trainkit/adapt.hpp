#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "adadepth/adversary/discriminator.hpp"
#include "adadepth/adversary/gan_loss.hpp"
#include "adadepth/congruency/branches.hpp"
#include "adadepth/congruency/losses.hpp"
#include "adadepth/depthnet/berhu.hpp"
#include "adadepth/nn/optim.hpp"
#include "adadepth/scenegen/dataset.hpp"
#include "adadepth/trainkit/checkpoint.hpp"
#include "adadepth/trainkit/config.hpp"
#include "adadepth/trainkit/model.hpp"
#include "adadepth/trainkit/train_log.hpp"

namespace adadepth::trainkit {

using depthnet::n_stages;
using depthnet::trunk_output_stage;

/// Training data visible to adaptation. The target split arrives as images
/// only, so the loop has no path to target depth.
struct AdaptData {
  const scenegen::LabeledSet* source = nullptr;
  const scenegen::ImageSet* target = nullptr;
};

/// Copies the listed samples of a batched tensor into a new batch.
inline Tensor<float> gather(const Tensor<float>& all, const std::vector<int>& idx) {
  Tensor<float> out(int(idx.size()), all.c(), all.h(), all.w());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto src = all.sample(idx[k]);
    std::copy(src.begin(), src.end(), out.sample(int(k)).begin());
  }
  return out;
}

/// Concatenates two batches along N.
inline Tensor<float> concat(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.c() != b.c() || a.h() != b.h() || a.w() != b.w()) throw ShapeError("concat: shapes differ");
  Tensor<float> out(a.n() + b.n(), a.c(), a.h(), a.w());
  std::copy(a.vec().begin(), a.vec().end(), out.vec().begin());
  std::copy(b.vec().begin(), b.vec().end(), out.vec().begin() + std::ptrdiff_t(a.size()));
  return out;
}

/// Frozen-network features computed once per run. Everything upstream of the
/// first adaptable stage is fixed during adaptation, so it is evaluated here
/// in eval mode and never again.
struct FeatureCache {
  int first_stage = n_stages + 1;  // first adaptable encoder stage; n_stages + 1 when none
  Tensor<float> tgt_in;            // input of first_stage for each target image
  Tensor<float> tgt_lt;            // L_t of each target image under M_s
  Tensor<float> tgt_ms;            // M_s(x_t)
  Tensor<float> src_ms;            // M_s(x_s)
  Tensor<float> src_logy;          // log source depth at prediction resolution

  struct Encoded {
    Tensor<float> in, lt, ms;
  };

  static Encoded encode(const Net& net, const std::vector<ImageTensor>& images, int first_stage, bool need_in) {
    Encoded e;
    if (images.empty()) throw DatasetError("no images to encode");
    const nn::Pass<float> pass{net.params()};
    const int total = int(images.size());
    auto place = [total](Tensor<float>& dst, const Tensor<float>& src, int at) {
      if (dst.size() == 0) dst = Tensor<float>(total, src.c(), src.h(), src.w());
      std::copy(src.vec().begin(), src.vec().end(), dst.sample(at).begin());
    };
    const std::size_t chunk = 16;
    for (std::size_t b = 0; b < images.size(); b += chunk) {
      std::vector<const ImageTensor*> ptrs;
      for (std::size_t i = b; i < std::min(images.size(), b + chunk); ++i) ptrs.push_back(&images[i]);
      Tensor<float> h = to_batch<float>(ptrs);
      net.check_input(h);
      Tensor<float> in, lt;
      for (int s = 1; s <= n_stages; ++s) {
        if (s == first_stage && need_in) in = h;
        h = net.run_stage(s, h, pass);
        if (s == trunk_output_stage) lt = h;
      }
      if (need_in) place(e.in, in, int(b));
      place(e.lt, lt, int(b));
      place(e.ms, h, int(b));
    }
    return e;
  }

  static Tensor<float> log_labels(const std::vector<DepthMap>& depths) {
    std::vector<DepthMap> half;
    for (const auto& d : depths) half.push_back(downsample2x(d));
    Tensor<float> out(int(half.size()), 1, half[0].height, half[0].width);
    for (std::size_t n = 0; n < half.size(); ++n) {
      auto s = out.sample(int(n));
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::log(std::max(half[n].depth[i], 1e-3f));
    }
    return out;
  }

  static FeatureCache build(const Net& source_net, const AdaptData& data, int first_stage) {
    FeatureCache c;
    c.first_stage = first_stage;
    const bool need_in = first_stage <= n_stages;
    auto t = encode(source_net, data.target->images, first_stage, need_in);
    c.tgt_in = std::move(t.in);
    c.tgt_lt = std::move(t.lt);
    c.tgt_ms = std::move(t.ms);
    c.src_ms = encode(source_net, data.source->images, n_stages + 1, false).ms;
    c.src_logy = log_labels(data.source->depths);
    return c;
  }
};

/// Memoizes feature caches per first adaptable stage for one source network
/// and one data pairing.
class FeatureCachePool {
 public:
  FeatureCachePool(const Net& source_net, AdaptData data) : net_(&source_net), data_(data) {}

  std::shared_ptr<const FeatureCache> get(int first_stage) {
    auto& slot = pool_[first_stage];
    if (!slot) slot = std::make_shared<const FeatureCache>(FeatureCache::build(*net_, data_, first_stage));
    return slot;
  }

  /// Any cached entry serves a session that does not adapt the encoder.
  std::shared_ptr<const FeatureCache> any() { return pool_.empty() ? get(n_stages + 1) : pool_.begin()->second; }

 private:
  const Net* net_;
  AdaptData data_;
  std::map<int, std::shared_ptr<const FeatureCache>> pool_;
};

/// The labeled target slice used by the semi-supervised phase.
struct LabeledCache {
  Tensor<float> in, lt, ms;
  std::vector<DepthMap> half;  // labels at prediction resolution
};

struct AdaptResult {
  DepthModel model;
  std::optional<congruency::ReconBranch<float>> c_t;
  adversary::DiscriminatorPair<float> discriminators;
  TrainLog log;
  std::optional<congruency::CtPretrainResult<float>> ct_pretrain;
};

/// One adaptation run as a resumable state machine: each step() is one
/// outer iteration of the alternating scheme (m_inner discriminator updates,
/// then one generator update of the adaptable parties).
class AdaptSession {
 public:
  /// `cache` may be shared between runs over the same source network and
  /// data; it is built here when absent.
  AdaptSession(const Net& source_net, AdaptData data, const AdaptConfig& cfg,
               std::shared_ptr<const FeatureCache> cache = nullptr)
      : AdaptSession(source_net, data, cfg, true, std::move(cache)) {}

  /// First adaptable encoder stage for a config; n_stages + 1 when the
  /// encoder itself is not adapted (RTF, or adapt_depth 0).
  static int first_adaptable_stage(const AdaptConfig& cfg) {
    return cfg.regularizer == Regularizer::rtf ? n_stages + 1 : n_stages + 1 - cfg.partition.adapt_depth;
  }

  /// Rebuilds a session from a checkpoint written by checkpoint().
  static AdaptSession resume(const Checkpoint& ck, AdaptData data, std::shared_ptr<const FeatureCache> cache = nullptr) {
    if (!ck.config.contains("adapt") || !ck.config.contains("arch"))
      throw CheckpointError("checkpoint does not describe an adaptation run");
    AdaptConfig cfg = adapt_config_from_json(ck.config.at("adapt"));
    depthnet::ArchConfig arch = arch_from_json(ck.config.at("arch"));
    Net source(arch, 0);
    source.apply_partition(cfg.partition);
    ck.take("source.", source.params());
    AdaptSession s(source, data, cfg, false, std::move(cache));
    s.load(ck);
    return s;
  }

  const AdaptConfig& config() const { return cfg_; }
  long long iteration() const { return iter_; }
  const TrainLog& log() const { return log_; }
  const Net& net() const { return net_; }
  const Net& source_net() const { return source_; }
  const std::optional<congruency::ResidualBranch<float>>& delta_m() const { return delta_m_; }
  const std::optional<congruency::ReconBranch<float>>& c_t() const { return c_t_; }
  const adversary::DiscriminatorPair<float>& discriminators() const { return disc_; }
  const std::optional<congruency::CtPretrainResult<float>>& ct_pretrain() const { return ct_summary_; }
  std::size_t trainable_scalars() const {
    return net_.params().trainable_scalars() + (delta_m_ ? delta_m_->params().trainable_scalars() : 0);
  }

  DepthModel model() const { return DepthModel{net_, delta_m_}; }

  AdaptResult result() const { return AdaptResult{model(), c_t_, disc_, log_, ct_summary_}; }

  /// One unsupervised outer iteration.
  void step() { outer_step(false); }

  void run(int k) {
    for (int i = 0; i < k; ++i) step();
  }

  /// Enables the semi-supervised phase on a small labeled target split.
  void attach_labeled(const scenegen::LabeledSet& labeled) {
    if (labeled.size() == 0) throw ConfigError("semi-supervised adaptation needs a non-empty labeled set");
    auto e = FeatureCache::encode(source_, labeled.images, cache_->first_stage, cache_->first_stage <= n_stages);
    lab_ = LabeledCache{std::move(e.in), std::move(e.lt), std::move(e.ms), {}};
    for (const auto& d : labeled.depths) lab_->half.push_back(downsample2x(d));
  }

  /// Semi-supervised iterations: one labeled batch followed by
  /// `unlabeled_per_labeled` unlabeled batches, repeating.
  void run_semi(int k) {
    if (!lab_) throw ConfigError("run_semi needs attach_labeled first");
    const int period = cfg_.semi.unlabeled_per_labeled + 1;
    for (int i = 0; i < k; ++i) {
      const bool labeled = semi_pos_ % period == 0;
      ++semi_pos_;
      outer_step(labeled);
    }
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config = {{"adapt", to_json(cfg_)}, {"arch", arch_to_json(net_.arch())}};
    ck.iteration = iter_;
    ck.rng = {{"target", rng_state(rng_tgt_)}, {"source", rng_state(rng_src_)}, {"labeled", rng_state(rng_lab_)}};
    auto records = nlohmann::json::array();
    for (const auto& r : log_.records) records.push_back(nlohmann::json::parse(to_json(r, log_.seed).dump()));
    ck.extra = {{"log", records},
                {"semi_pos", semi_pos_},
                {"collapse_initial", collapse_.initial() ? nlohmann::json(*collapse_.initial()) : nlohmann::json()},
                {"collapse_low", collapse_.low_streak()}};
    ck.put("source.", source_.params());
    ck.put("net.", net_.params());
    if (delta_m_) ck.put("delta_m.", delta_m_->params());
    if (c_t_) ck.put("c_t.", c_t_->params());
    ck.put("d_f.", disc_.feature.params());
    ck.put("d_y.", disc_.depth.params());
    ck.put_state("opt.net/", opt_net_.state());
    ck.put_state("opt.delta_m/", opt_dm_.state());
    ck.put_state("opt.c_t/", opt_ct_.state());
    ck.put_state("opt.d_f/", opt_df_.state());
    ck.put_state("opt.d_y/", opt_dy_.state());
    return ck;
  }

  static nlohmann::json arch_to_json(const depthnet::ArchConfig& a) {
    return {{"height", a.height},
            {"width", a.width},
            {"stem_channels", a.stem_channels},
            {"channels", a.channels},
            {"decoder_channels", a.decoder_channels},
            {"init_depth", a.init_depth},
            {"min_depth", a.min_depth},
            {"max_depth", a.max_depth}};
  }

  static depthnet::ArchConfig arch_from_json(const nlohmann::json& j) {
    depthnet::ArchConfig a;
    jsonu::require_keys(j,
                        {"height", "width", "stem_channels", "channels", "decoder_channels", "init_depth",
                         "min_depth", "max_depth"},
                        "arch");
    jsonu::read(j, "height", a.height, "arch");
    jsonu::read(j, "width", a.width, "arch");
    jsonu::read(j, "stem_channels", a.stem_channels, "arch");
    jsonu::read(j, "channels", a.channels, "arch");
    jsonu::read(j, "decoder_channels", a.decoder_channels, "arch");
    jsonu::read(j, "init_depth", a.init_depth, "arch");
    jsonu::read(j, "min_depth", a.min_depth, "arch");
    jsonu::read(j, "max_depth", a.max_depth, "arch");
    a.validate();
    return a;
  }

 private:
  AdaptSession(const Net& source_net, AdaptData data, const AdaptConfig& cfg, bool initialize,
               std::shared_ptr<const FeatureCache> cache)
      : cfg_(cfg),
        data_(data),
        source_(source_net),
        net_(source_net),
        collapse_(cfg.collapse_window, cfg.collapse_ratio) {
    cfg_.validate();
    if (!data.source || !data.target) throw ConfigError("adaptation needs source and target data");
    if (data.source->size() < 1 || data.target->size() < std::size_t(cfg.batch_size))
      throw DatasetError("adaptation data is smaller than the batch size");
    const auto& arch = source_net.arch();
    net_.apply_partition(cfg_.partition);
    source_.apply_partition(cfg_.partition);
    log_.seed = cfg_.seed;
    rng_tgt_.seed(mix_seed(cfg_.seed, 1));
    rng_src_.seed(mix_seed(cfg_.seed, 2));
    rng_lab_.seed(mix_seed(cfg_.seed, 6));
    disc_ = adversary::init_discriminators<float>(mix_seed(cfg_.seed, 3), arch);
    opt_net_ = nn::Momentum<float>(cfg_.generator.lr, cfg_.generator.momentum);
    opt_dm_ = opt_net_;
    opt_ct_ = opt_net_;
    opt_df_ = nn::Momentum<float>(cfg_.discriminator.lr, cfg_.discriminator.momentum);
    opt_dy_ = opt_df_;

    const bool rtf = cfg_.regularizer == Regularizer::rtf;
    // RTF adapts through the residual branch alone; the head stays M_s.
    const int first = first_adaptable_stage(cfg_);
    net_.params().set_trainable_if([&](const ParamArray<float>& a) { return !rtf && a.tag == Partition::head; });
    if (!cache) cache = std::make_shared<const FeatureCache>(FeatureCache::build(source_, data, first));
    if (cache->tgt_ms.n() != int(data.target->size()) || cache->src_ms.n() != int(data.source->size()))
      throw ConfigError("feature cache was built for different data");
    if (!rtf && cache->first_stage != first)
      throw ConfigError("feature cache was built for a different partition");
    cache_ = std::move(cache);

    if (rtf) {
      delta_m_.emplace(arch, mix_seed(cfg_.seed, 4));
      delta_m_->params().set_trainable(true);
    }
    if (cfg_.regularizer == Regularizer::fcf) {
      if (initialize) {
        congruency::FeaturePairs<float> pairs;
        for (int i = 0; i < cache_->tgt_lt.n(); ++i) {
          pairs.trunk.push_back(gather(cache_->tgt_lt, {i}));
          pairs.latent.push_back(gather(cache_->tgt_ms, {i}));
        }
        ct_summary_ = congruency::pretrain_ct(arch, pairs, cfg_.ct_pretrain, mix_seed(cfg_.seed, 5));
        c_t_ = ct_summary_->branch;
      } else {
        c_t_.emplace(arch, mix_seed(cfg_.seed, 5));
      }
      c_t_->params().set_trainable(true);
    }
    disc_.feature.params().set_trainable(true);
    disc_.depth.params().set_trainable(true);
  }

  void load(const Checkpoint& ck) {
    // Stage everything in copies so a bad checkpoint leaves the session intact.
    Net net = net_;
    ck.take("net.", net.params());
    auto dm = delta_m_;
    if (dm) ck.take("delta_m.", dm->params());
    auto ct = c_t_;
    if (ct) ck.take("c_t.", ct->params());
    auto disc = disc_;
    ck.take("d_f.", disc.feature.params());
    ck.take("d_y.", disc.depth.params());
    TrainLog log;
    log.seed = cfg_.seed;
    for (const auto& r : ck.extra.at("log")) log.records.push_back(record_from_json(r));
    for (const char* k : {"target", "source", "labeled"})
      if (!ck.rng.count(k)) throw CheckpointError(std::string("checkpoint lacks rng state '") + k + "'");

    net_.params().swap_values(net.params());
    if (dm) delta_m_->params().swap_values(dm->params());
    if (ct) c_t_->params().swap_values(ct->params());
    disc_.feature.params().swap_values(disc.feature.params());
    disc_.depth.params().swap_values(disc.depth.params());
    opt_net_.load(ck.take_state("opt.net/"));
    opt_dm_.load(ck.take_state("opt.delta_m/"));
    opt_ct_.load(ck.take_state("opt.c_t/"));
    opt_df_.load(ck.take_state("opt.d_f/"));
    opt_dy_.load(ck.take_state("opt.d_y/"));
    set_rng_state(rng_tgt_, ck.rng.at("target"));
    set_rng_state(rng_src_, ck.rng.at("source"));
    set_rng_state(rng_lab_, ck.rng.at("labeled"));
    iter_ = ck.iteration;
    log_ = std::move(log);
    semi_pos_ = ck.extra.value("semi_pos", 0LL);
    const auto& ci = ck.extra.at("collapse_initial");
    collapse_.restore(ci.is_null() ? std::nullopt : std::optional<double>(ci.get<double>()),
                      ck.extra.value("collapse_low", 0));
  }

  // -- generator-side forward -------------------------------------------------

  struct GenForward {
    nn::Tape<float> head_tape, dm_tape;
    Tensor<float> latent, lt, ms, residual;
  };

  /// M_t on a batch: cached frozen features through the adaptable stages
  /// (batch statistics unless freeze_bn_stats) or M_s + dM(L_t) for RTF.
  GenForward generator_forward(const Tensor<float>& in, const Tensor<float>& lt, const Tensor<float>& ms,
                               bool record, bool update_stats) {
    GenForward g;
    g.ms = ms;
    if (delta_m_) {
      g.lt = lt;
      nn::Pass<float> pass{delta_m_->params(), update_stats ? &delta_m_->params() : nullptr,
                           record ? &g.dm_tape : nullptr, true};
      auto out = congruency::rtf_apply(*delta_m_, lt, ms, pass);
      g.latent = std::move(out.latent);
      g.residual = std::move(out.residual);
      return g;
    }
    if (cache_->first_stage > n_stages) {
      g.latent = ms;
      g.lt = lt;
      return g;
    }
    const bool batch_stats = !cfg_.freeze_bn_stats;
    nn::Pass<float> pass{net_.params(), update_stats && batch_stats ? &net_.params() : nullptr,
                         record ? &g.head_tape : nullptr, batch_stats};
    Tensor<float> h = in;
    for (int s = cache_->first_stage; s <= n_stages; ++s) {
      h = net_.run_stage(s, h, pass);
      if (s == trunk_output_stage) g.lt = h;
    }
    if (cache_->first_stage > trunk_output_stage) g.lt = lt;
    g.latent = std::move(h);
    return g;
  }

  void generator_backward(GenForward& g, const Tensor<float>& dlatent, const Tensor<float>* dresidual) {
    if (delta_m_) {
      Tensor<float> d = dlatent;
      if (dresidual) d += *dresidual;
      delta_m_->backward(g.dm_tape, d, false);
      return;
    }
    Tensor<float> d = dlatent;
    for (int s = n_stages; s >= cache_->first_stage; --s) d = net_.back_stage(s, g.head_tape, d, s > cache_->first_stage, true);
  }

  // -- discriminator update -----------------------------------------------------

  /// One descent step of a discriminator on a [real; fake] batch.
  double disc_update(adversary::Discriminator<float>& d, nn::Momentum<float>& opt, const Tensor<float>& real,
                     const Tensor<float>& fake) {
    nn::Tape<float> tape;
    Tensor<float> logits = d.forward(concat(real, fake), &tape);
    const std::size_t half = logits.size() / 2;
    std::span<const float> all(logits.vec());
    auto l = adversary::adv_loss_D<float>(all.subspan(0, half), all.subspan(half), cfg_.gan_form);
    Tensor<float> dl(logits.shape());
    std::copy(l.grad_real.begin(), l.grad_real.end(), dl.vec().begin());
    std::copy(l.grad_fake.begin(), l.grad_fake.end(), dl.vec().begin() + std::ptrdiff_t(half));
    d.params().zero_grad();
    d.backward(tape, dl, true);
    nn::clip_grad_norm(d.params(), cfg_.clip_norm);
    opt.step(d.params());
    return double(l.loss);
  }

  /// log depth = clamp(raw) for the D_Y input.
  Tensor<float> log_depth(const Tensor<float>& raw) const {
    Tensor<float> o(raw.shape());
    const float lo = std::log(net_.arch().min_depth), hi = std::log(net_.arch().max_depth);
    for (std::size_t i = 0; i < raw.size(); ++i) o[i] = std::clamp(raw[i], lo, hi);
    return o;
  }

  Tensor<float> log_depth_grad(const Tensor<float>& raw, const Tensor<float>& dlog) const {
    Tensor<float> g(raw.shape());
    const float lo = std::log(net_.arch().min_depth), hi = std::log(net_.arch().max_depth);
    for (std::size_t i = 0; i < raw.size(); ++i) g[i] = (raw[i] > lo && raw[i] < hi) ? dlog[i] : 0.f;
    return g;
  }

  static double prediction_variance(const Tensor<float>& depth) {
    const int n = depth.n();
    const std::size_t plane = depth.shape().sample();
    double total = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      double s = 0, ss = 0;
      for (int k = 0; k < n; ++k) {
        const double v = depth.sample(k)[i];
        s += v;
        ss += v * v;
      }
      const double m = s / n;
      total += std::max(0.0, ss / n - m * m);
    }
    return total / double(plane);
  }

  struct Batch {
    Tensor<float> in, lt, ms;
  };

  Batch target_batch(Rng& rng, bool labeled, std::vector<int>& idx) {
    const Tensor<float>& in = labeled ? lab_->in : cache_->tgt_in;
    const Tensor<float>& lt = labeled ? lab_->lt : cache_->tgt_lt;
    const Tensor<float>& ms = labeled ? lab_->ms : cache_->tgt_ms;
    idx = sample_indices(rng, ms.n(), cfg_.batch_size);
    Batch b;
    if (in.size()) b.in = gather(in, idx);
    b.lt = gather(lt, idx);
    b.ms = gather(ms, idx);
    return b;
  }

  void check_finite(double v, const char* what) const {
    if (!std::isfinite(v)) throw DivergenceError(iter_, std::string("non-finite ") + what);
  }

  void outer_step(bool labeled) {
    try {
      outer_step_impl(labeled);
    } catch (const NumericError& e) {
      throw DivergenceError(iter_, e.what());
    }
  }

  void outer_step_impl(bool labeled) {
    const auto t0 = std::chrono::steady_clock::now();
    const nn::Pass<float> frozen{net_.params()};
    const float lambda = float(cfg_.lambda);
    TrainRecord rec;
    rec.iter = iter_;
    rec.labeled = labeled;

    // Generator forward on this iteration's target batch.
    std::vector<int> tidx;
    Batch tb = target_batch(labeled ? rng_lab_ : rng_tgt_, labeled, tidx);
    GenForward g = generator_forward(tb.in, tb.lt, tb.ms, true, true);
    nn::Tape<float> dec_tape;
    const bool need_dec_grad = cfg_.use_dy || labeled;
    Tensor<float> raw = net_.decode_raw(g.latent, nn::Pass<float>{net_.params(), nullptr,
                                                                  need_dec_grad ? &dec_tape : nullptr, false});
    Tensor<float> depth = net_.depth_from_raw(raw);
    rec.pred_var = prediction_variance(depth);

    // Discriminator steps; the last one sees this iteration's fakes.
    for (int j = 0; j < cfg_.m_inner; ++j) {
      const auto sidx = sample_indices(rng_src_, cache_->src_ms.n(), cfg_.batch_size);
      Tensor<float> fake_latent, fake_raw;
      if (j + 1 < cfg_.m_inner) {
        std::vector<int> fidx;
        Batch fb = target_batch(labeled ? rng_lab_ : rng_tgt_, labeled, fidx);
        fake_latent = generator_forward(fb.in, fb.lt, fb.ms, false, false).latent;
        if (cfg_.use_dy) fake_raw = net_.decode_raw(fake_latent, frozen);
      } else {
        fake_latent = g.latent;
        fake_raw = raw;
      }
      rec.d_f_loss = disc_update(disc_.feature, opt_df_, gather(cache_->src_ms, sidx), fake_latent);
      if (cfg_.use_dy)
        rec.d_y_loss = disc_update(disc_.depth, opt_dy_, gather(cache_->src_logy, sidx), log_depth(fake_raw));
    }

    // Generator objective with the updated discriminators.
    net_.params().zero_grad();
    if (delta_m_) delta_m_->params().zero_grad();
    if (c_t_) c_t_->params().zero_grad();
    Tensor<float> dlatent(g.latent.shape());
    Tensor<float> draw_total(raw.shape());

    {
      nn::Tape<float> tape;
      Tensor<float> logits = disc_.feature.forward(g.latent, &tape);
      auto l = adversary::adv_loss_G<float>(logits.vec(), cfg_.gan_form);
      rec.l_adv_f = double(l.loss);
      Tensor<float> dl(logits.shape());
      dl.vec() = std::move(l.grad);
      dlatent += disc_.feature.backward(tape, dl, false);
    }
    if (cfg_.use_dy) {
      nn::Tape<float> tape;
      Tensor<float> logits = disc_.depth.forward(log_depth(raw), &tape);
      auto l = adversary::adv_loss_G<float>(logits.vec(), cfg_.gan_form);
      rec.l_adv_d = double(l.loss);
      Tensor<float> dl(logits.shape());
      dl.vec() = std::move(l.grad);
      draw_total += log_depth_grad(raw, disc_.depth.backward(tape, dl, false));
    }

    Tensor<float> dresidual;
    if (labeled) {
      std::vector<float> gt(depth.size());
      std::vector<std::uint8_t> mask(depth.size());
      const std::size_t plane = depth.shape().sample();
      for (std::size_t k = 0; k < tidx.size(); ++k) {
        const DepthMap& y = lab_->half[std::size_t(tidx[k])];
        std::copy(y.depth.begin(), y.depth.end(), gt.begin() + std::ptrdiff_t(k * plane));
        std::copy(y.valid.begin(), y.valid.end(), mask.begin() + std::ptrdiff_t(k * plane));
      }
      auto l = depthnet::berhu_loss<float>(depth.vec(), gt, mask);
      rec.l_content = double(l.loss);
      Tensor<float> dd(depth.shape());
      for (std::size_t i = 0; i < dd.size(); ++i) dd[i] = lambda * l.grad[i];
      draw_total += net_.depth_grad_to_raw(raw, dd);
    } else {
      switch (cfg_.regularizer) {
        case Regularizer::dcr: {
          auto l = congruency::dcr_loss<float>(g.ms.vec(), g.latent.vec());
          rec.l_content = double(l.loss);
          for (std::size_t i = 0; i < dlatent.size(); ++i) dlatent[i] += lambda * l.grad_b[i];
          break;
        }
        case Regularizer::rtf: {
          auto l = congruency::rtf_penalty<float>(g.residual.vec());
          rec.l_content = double(l.loss);
          dresidual = Tensor<float>(g.residual.shape());
          for (std::size_t i = 0; i < dresidual.size(); ++i) dresidual[i] = lambda * l.grad[i];
          break;
        }
        case Regularizer::fcf: {
          auto r = congruency::fcf_loss(*c_t_, g.latent, g.lt, true, true, &c_t_->params(), lambda);
          rec.l_content = double(r.loss);
          dlatent += r.grad_latent;
          break;
        }
      }
    }
    if (need_dec_grad) dlatent += net_.back_decode(dec_tape, draw_total, true, false);

    rec.l_final = rec.l_adv_d + rec.l_adv_f + cfg_.lambda * rec.l_content;
    check_finite(rec.l_final, "generator objective");
    check_finite(rec.d_f_loss + rec.d_y_loss, "discriminator loss");

    generator_backward(g, dlatent, dresidual.size() ? &dresidual : nullptr);
    nn::clip_grad_norm(net_.params(), cfg_.clip_norm);
    opt_net_.step(net_.params());
    if (delta_m_) {
      nn::clip_grad_norm(delta_m_->params(), cfg_.clip_norm);
      opt_dm_.step(delta_m_->params());
    }
    if (c_t_ && !labeled) {
      nn::clip_grad_norm(c_t_->params(), cfg_.clip_norm);
      opt_ct_.step(c_t_->params());
    }

    rec.warning = collapse_.observe(rec.pred_var);
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_.records.push_back(std::move(rec));
    ++iter_;
  }

  AdaptConfig cfg_;
  AdaptData data_;
  Net source_;
  Net net_;
  std::shared_ptr<const FeatureCache> cache_;
  std::optional<LabeledCache> lab_;
  std::optional<congruency::ResidualBranch<float>> delta_m_;
  std::optional<congruency::ReconBranch<float>> c_t_;
  std::optional<congruency::CtPretrainResult<float>> ct_summary_;
  adversary::DiscriminatorPair<float> disc_;
  nn::Momentum<float> opt_net_, opt_dm_, opt_ct_, opt_df_, opt_dy_;
  Rng rng_tgt_, rng_src_, rng_lab_;
  long long iter_ = 0;
  long long semi_pos_ = 0;
  TrainLog log_;
  CollapseMonitor collapse_;
};

/// Unsupervised adaptation of a source-pretrained network for k_outer
/// iterations. Trunk and decoder arrays are never written.
inline AdaptResult adapt(const Net& net, const scenegen::LabeledSet& source, const scenegen::ImageSet& target,
                         const AdaptConfig& cfg) {
  AdaptSession s(net, AdaptData{&source, &target}, cfg);
  s.run(cfg.k_outer);
  return s.result();
}

/// adapt(), then cfg.semi.k_outer semi-supervised iterations alternating
/// labeled batches (content term replaced by BerHu) with unlabeled ones.
inline AdaptResult adapt_semi(const Net& net, const scenegen::LabeledSet& source, const scenegen::ImageSet& target,
                              const scenegen::LabeledSet& labeled, const AdaptConfig& cfg) {
  if (labeled.size() == 0) throw ConfigError("semi-supervised adaptation needs a non-empty labeled set");
  AdaptSession s(net, AdaptData{&source, &target}, cfg);
  s.run(cfg.k_outer);
  s.attach_labeled(labeled);
  s.run_semi(cfg.semi.k_outer);
  return s.result();
}

/// Mean |M_t(x) - M_s(x)| over a probe set, both in eval mode.
inline double latent_drift(const DepthModel& adapted, const Net& source, const std::vector<ImageTensor>& probe) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& img : probe) {
    auto x = to_batch<float>({&img});
    Tensor<float> a = adapted.latent(x);
    Tensor<float> b = source.encode(x).latent;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
    n += a.size();
  }
  return n ? s / double(n) : 0.0;
}

}  // namespace adadepth::trainkit

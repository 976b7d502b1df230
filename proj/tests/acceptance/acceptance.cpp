// Acceptance run: one PASS/FAIL line per criterion, then a JSON report in the
// work directory. Exits non-zero when any criterion fails.
//
//   acceptance --workdir DIR [--only 1,2,...] [--reuse]
//
// --reuse keeps an existing corpus and pretrained network under DIR.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adadepth/adversary/gan_loss.hpp"
#include "adadepth/cli/commands.hpp"
#include "adadepth/congruency/branches.hpp"
#include "adadepth/congruency/losses.hpp"
#include "adadepth/depthnet/berhu.hpp"
#include "adadepth/evalkit/evaluate.hpp"
#include "adadepth/scenegen/dataset.hpp"
#include "adadepth/trainkit/adapt.hpp"
#include "adadepth/trainkit/checkpoint.hpp"
#include "adadepth/trainkit/pretrain.hpp"
#include "adadepth/trainkit/sweep.hpp"

using namespace adadepth;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Tolerances and budgets

constexpr double grad_tol = 1e-4;
constexpr int grad_trials = 20;
constexpr double grad_budget_s = 60;
constexpr double oracle_tol = 1e-9;
constexpr double metric_tol = 1e-9;
constexpr int metric_maps = 50;
constexpr double structural_budget_s = 300;
constexpr double scale_tol_nonexact = 1e-6;  // float rounding of a non-power-of-two rescale
constexpr double min_improvement = 0.15;
constexpr double pin_ratio = 0.10;
constexpr int pin_iters = 200;
constexpr int adapt_iters = 300;
constexpr int sweep_iters = 100;
constexpr std::size_t corpus_train = 2000, corpus_eval = 200, corpus_labeled = 100;
constexpr std::size_t drift_probe = 50;
constexpr double smoke_budget_s = 600;
constexpr double reproduction_target_s = 3600;
const std::vector<std::uint64_t> seeds{0, 1, 2};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::logic_error("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

struct Report {
  json criteria = json::array();
  bool all_pass = true;

  void line(int id, const std::string& name, bool pass, const std::string& detail, json extra = json::object()) {
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << name << "): " << detail << std::endl;
    all_pass = all_pass && pass;
    extra["id"] = id;
    extra["name"] = name;
    extra["pass"] = pass;
    extra["detail"] = detail;
    criteria.push_back(std::move(extra));
  }
};

void progress(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

// ---------------------------------------------------------------------------
// Finite differences

double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double d = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0 ? std::sqrt(d) : std::sqrt(d) / scale;
}

std::vector<double> central_diff(const std::function<double()>& f, std::vector<double>& x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<double> draw(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

Tensor<double> draw_tensor(Rng& rng, Shape4 s) {
  Tensor<double> t(s);
  for (auto& v : t.vec()) v = normal(rng, 0.0, 1.0);
  return t;
}

depthnet::ArchConfig tiny_arch() {
  depthnet::ArchConfig a;
  a.height = 32;
  a.width = 48;
  a.stem_channels = 4;
  a.channels = {4, 6, 8, 8};
  a.decoder_channels = {8, 6, 4};
  return a;
}

/// Worst relative error of each loss over `grad_trials` random draws.
json gradient_suite() {
  Rng rng(101);
  json worst = json::object();
  auto note = [&](const std::string& k, double e) { worst[k] = std::max(worst.value(k, 0.0), e); };

  // BerHu: redraw near the kinks (|r| = 0, |r| = c) and near ties for the max residual.
  for (int done = 0, attempt = 0; done < grad_trials && attempt < 10000; ++attempt) {
    auto p = draw(rng, 16, -2, 2), g = draw(rng, 16, -2, 2);
    std::vector<std::uint8_t> m(16, 1);
    m[std::size_t(attempt % 16)] = 0;
    std::vector<double> r;
    for (std::size_t i = 0; i < 16; ++i)
      if (m[i]) r.push_back(std::abs(p[i] - g[i]));
    std::sort(r.rbegin(), r.rend());
    const double c = 0.2 * r[0];
    bool near_kink = r[0] - r[1] < 1e-3;
    for (double a : r) near_kink = near_kink || a < 1e-3 || std::abs(a - c) < 1e-3;
    if (near_kink) continue;
    auto l = depthnet::berhu_loss<double>(p, g, m);
    note("berhu", rel_error(l.grad, central_diff([&] { return depthnet::berhu_loss<double>(p, g, m).loss; }, p)));
    ++done;
  }

  for (int t = 0; t < grad_trials; ++t) {
    auto real = draw(rng, std::size_t(5 + t % 4), -3, 3), fake = draw(rng, std::size_t(4 + t % 5), -3, 3);
    for (auto form : {adversary::GanForm::lsq, adversary::GanForm::log}) {
      const std::string tag = adversary::to_string(form);
      auto d = adversary::adv_loss_D<double>(real, fake, form);
      auto fd = [&] { return adversary::adv_loss_D<double>(real, fake, form).loss; };
      note("gan_D_" + tag, std::max(rel_error(d.grad_real, central_diff(fd, real)),
                                    rel_error(d.grad_fake, central_diff(fd, fake))));
      auto gl = adversary::adv_loss_G<double>(fake, form);
      note("gan_G_" + tag,
           rel_error(gl.grad, central_diff([&] { return adversary::adv_loss_G<double>(fake, form).loss; }, fake)));
    }
  }

  for (int done = 0; done < grad_trials;) {
    auto a = draw(rng, std::size_t(8 + done), -2, 2), b = draw(rng, std::size_t(8 + done), -2, 2);
    bool near_kink = false;
    for (std::size_t i = 0; i < a.size(); ++i) near_kink = near_kink || std::abs(a[i] - b[i]) < 1e-3;
    if (near_kink) continue;
    auto d = congruency::dcr_loss<double>(a, b);
    auto f = [&] { return congruency::dcr_loss<double>(a, b).loss; };
    note("dcr", std::max(rel_error(d.grad_a, central_diff(f, a)), rel_error(d.grad_b, central_diff(f, b))));
    auto r = congruency::rtf_penalty<double>(a);
    note("rtf", rel_error(r.grad, central_diff([&] { return congruency::rtf_penalty<double>(a).loss; }, a)));
    ++done;
  }

  // FCF through the reconstruction branch, with trained-looking batch-norm
  // state so that no ReLU input sits exactly on its kink.
  const auto arch = tiny_arch();
  const Shape4 lat{2, arch.latent_c(), arch.latent_h(), arch.latent_w()};
  const Shape4 trk{2, arch.trunk_c(), 2 * arch.latent_h(), 2 * arch.latent_w()};
  for (int t = 0; t < grad_trials; ++t) {
    congruency::ReconBranch<double> branch(arch, 500 + std::uint64_t(t));
    for (auto& a : branch.params())
      for (auto& v : a.value) {
        if (a.name.ends_with(".beta") || a.name.ends_with("running_mean")) v = uniform(rng, -0.3, 0.3);
        if (a.name.ends_with("running_var")) v = uniform(rng, 0.5, 1.5);
      }
    branch.params().set_trainable(true);
    Tensor<double> latent = draw_tensor(rng, lat), trunk = draw_tensor(rng, trk);
    const bool train = t % 2 == 0;
    branch.params().zero_grad();
    auto r = congruency::fcf_loss(branch, latent, trunk, train, true);
    auto f = [&] { return congruency::fcf_loss(branch, latent, trunk, train, false).loss; };
    double e = std::max(rel_error(r.grad_latent.vec(), central_diff(f, latent.vec())),
                        rel_error(r.grad_trunk.vec(), central_diff(f, trunk.vec())));
    for (auto& a : branch.params()) {
      if (a.is_stat) continue;
      std::vector<double> analytic = a.grad;
      e = std::max(e, rel_error(analytic, central_diff(f, a.value)));
    }
    note("fcf", e);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Hand-derived loss values

json loss_oracles() {
  using V = std::vector<double>;
  json out = json::object();
  auto entry = [&](const std::string& k, double got, double want) { out[k] = {{"got", got}, {"want", want}}; };
  entry("berhu", depthnet::berhu_loss<double>(V{2.0, 1.1}, V{1.0, 1.0}, std::vector<std::uint8_t>{1, 1}).loss, 1.35);
  entry("lsq_confused_D", adversary::adv_loss_D<double>(V(5, 0.5), V(5, 0.5), adversary::GanForm::lsq).loss, 0.5);
  entry("log_confused_D", adversary::adv_loss_D<double>(V(6, 0.0), V(6, 0.0), adversary::GanForm::log).loss,
        2 * std::log(2.0));
  entry("dcr", congruency::dcr_loss<double>(V{1, 2}, V{2, 4}).loss, 1.5);
  entry("rtf_rms", congruency::rtf_penalty<double>(V{3, 4}).loss, std::sqrt(12.5));
  // FCF through a real branch: L_t sits at +-1 from the reconstruction.
  const auto arch = tiny_arch();
  congruency::ReconBranch<double> branch(arch, 3);
  Rng rng(3);
  Tensor<double> latent = draw_tensor(rng, {1, arch.latent_c(), arch.latent_h(), arch.latent_w()});
  Tensor<double> trunk = branch.forward(latent);
  for (std::size_t i = 0; i < trunk.size(); ++i) trunk[i] += i % 2 ? -1.0 : 1.0;
  entry("fcf", congruency::fcf_loss(branch, latent, trunk, false, false).loss, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Metric oracle: straight from the formulas, in double, median by sorting.

struct Formula {
  double rel, sq_rel, rms, rms_log, log10, d1, d2, d3;
};

Formula formula(const DepthMap& pred, const DepthMap& gt, bool scale) {
  std::vector<double> p(pred.depth.begin(), pred.depth.end()), g(gt.depth.begin(), gt.depth.end());
  if (scale) {
    const double s = median(g) / median(p);
    for (auto& v : p) v *= s;
  }
  const double n = double(p.size());
  Formula o{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - g[i];
    o.rel += std::abs(e) / g[i];
    o.sq_rel += e * e / g[i];
    o.rms += e * e;
    o.rms_log += std::pow(std::log(p[i]) - std::log(g[i]), 2);
    o.log10 += std::abs(std::log10(p[i]) - std::log10(g[i]));
    const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
    o.d1 += ratio < 1.25;
    o.d2 += ratio < 1.25 * 1.25;
    o.d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  return {o.rel / n, o.sq_rel / n, std::sqrt(o.rms / n), std::sqrt(o.rms_log / n), o.log10 / n,
          o.d1 / n,  o.d2 / n,     o.d3 / n};
}

std::vector<double> as_vec(const evalkit::MetricsReport& r) {
  return {r.rel, r.sq_rel, r.rms, r.rms_log, r.log10, r.delta1, r.delta2, r.delta3};
}
std::vector<double> as_vec(const Formula& f) { return {f.rel, f.sq_rel, f.rms, f.rms_log, f.log10, f.d1, f.d2, f.d3}; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

DepthMap random_map(Rng& rng, int h, int w, double lo, double hi) {
  DepthMap d(h, w);
  for (auto& v : d.depth) v = float(uniform(rng, lo, hi));
  return d;
}

// ---------------------------------------------------------------------------
// Structural laws on a small network

scenegen::SceneSpec tiny_spec() {
  scenegen::SceneSpec s;
  s.height = 32;
  s.width = 48;
  return s;
}

scenegen::LabeledSet small_scenes(int n, std::uint64_t seed, bool shifted) {
  scenegen::ShiftConfig shift;
  shift.noise_sigma = 0.05;
  scenegen::LabeledSet s;
  for (int i = 0; i < n; ++i) {
    auto [img, depth] = scenegen::generate_scene(mix_seed(seed, std::uint64_t(i)), tiny_spec());
    if (shifted) {
      shift.seed = mix_seed(seed + 1, std::uint64_t(i));
      img = scenegen::apply_domain_shift(img, shift);
    }
    s.images.push_back(std::move(img));
    s.depths.push_back(std::move(depth));
  }
  return s;
}

trainkit::AdaptConfig small_cfg(trainkit::Regularizer r) {
  trainkit::AdaptConfig c;
  c.regularizer = r;
  c.batch_size = 4;
  c.k_outer = 5;
  c.seed = 13;
  c.ct_pretrain.steps = 20;
  c.ct_pretrain.batch_size = 4;
  c.generator.lr = 1e-3;
  c.discriminator.lr = 1e-3;
  return c;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) { return a.shape() == b.shape() && bit_equal(a.vec(), b.vec()); }

json structural_laws(const fs::path& dir) {
  using trainkit::Regularizer;
  const auto source = small_scenes(16, 40, false);
  const auto target_l = small_scenes(16, 60, true);
  const scenegen::ImageSet target{target_l.images};
  trainkit::Net net(tiny_arch(), 17);
  Rng rng(17);
  for (auto& a : net.params())
    if (a.is_stat && a.name.find("var") != std::string::npos)
      for (auto& v : a.value) v = float(uniform(rng, 0.5, 1.5));

  json out = json::object();

  // Freeze law: every trunk and decoder array is bit-identical after adaptation.
  bool freeze = true, head_moved = true;
  for (auto r : {Regularizer::dcr, Regularizer::rtf, Regularizer::fcf}) {
    auto res = trainkit::adapt(net, source, target, small_cfg(r));
    bool moved = false;
    for (std::size_t i = 0; i < net.params().count(); ++i) {
      const auto &a = net.params()[i], &b = res.model.net.params()[i];
      const bool same = bit_equal(a.value, b.value);
      if (a.tag != Partition::head || r == Regularizer::rtf) freeze = freeze && same;
      else moved = moved || !same;
    }
    if (r == Regularizer::rtf)
      moved = res.model.delta_m.has_value() &&
              !res.model.delta_m->params().same_values(trainkit::AdaptSession(net, {&source, &target}, small_cfg(r))
                                                           .model()
                                                           .delta_m->params());
    head_moved = head_moved && moved;
  }
  out["freeze_law"] = freeze;
  out["adapted_parameters_moved"] = head_moved;

  // RTF starts exactly at the source encoder.
  bool identity = true;
  {
    trainkit::AdaptSession s(net, {&source, &target}, small_cfg(Regularizer::rtf));
    const auto m = s.model();
    for (const auto& img : target.images) {
      auto x = to_batch<float>({&img});
      identity = identity && bit_equal(m.latent(x), net.encode(x).latent);
    }
  }
  out["rtf_identity"] = identity;

  // k_outer = 0 leaves every parameter and statistic untouched.
  bool noop = true;
  for (auto r : {Regularizer::dcr, Regularizer::rtf, Regularizer::fcf}) {
    auto cfg = small_cfg(r);
    cfg.k_outer = 0;
    auto res = trainkit::adapt(net, source, target, cfg);
    noop = noop && res.log.records.empty() && res.model.net.params().same_values(net.params());
    if (res.model.delta_m) {
      for (const auto& img : target.images) {
        auto x = to_batch<float>({&img});
        noop = noop && bit_equal(res.model.latent(x), net.encode(x).latent);
      }
    }
  }
  out["zero_iterations_noop"] = noop;

  // Checkpoint round trip: save, load, compare every array bit for bit, and
  // check that a resumed session continues exactly like an uninterrupted one.
  bool round_trip = true;
  for (auto r : {Regularizer::dcr, Regularizer::rtf, Regularizer::fcf}) {
    trainkit::AdaptSession s(net, {&source, &target}, small_cfg(r));
    s.run(3);
    const auto ck = s.checkpoint();
    const fs::path p = dir / ("ckpt_" + std::string(trainkit::to_string(r)));
    fs::remove_all(p);
    trainkit::save_checkpoint(ck, p);
    const auto back = trainkit::load_checkpoint(p);
    round_trip = round_trip && back.arrays.size() == ck.arrays.size() && back.iteration == ck.iteration &&
                 back.config == ck.config && back.rng == ck.rng;
    for (std::size_t i = 0; round_trip && i < ck.arrays.size(); ++i)
      round_trip = back.arrays[i].name == ck.arrays[i].name && bit_equal(back.arrays[i].data, ck.arrays[i].data);
    auto resumed = trainkit::AdaptSession::resume(back, {&source, &target});
    resumed.run(2);
    s.run(2);
    round_trip = round_trip && resumed.log().same_values(s.log()) &&
                 resumed.model().net.params().same_values(s.model().net.params());
  }
  out["checkpoint_round_trip"] = round_trip;

  // Median scaling makes every metric invariant to a global rescale of the
  // prediction: exactly for powers of two, to float rounding otherwise.
  Rng mr(19);
  double worst_exact = 0, worst_other = 0;
  for (int t = 0; t < 20; ++t) {
    DepthMap gt = random_map(mr, 8, 10, 0.5, 10), pred = random_map(mr, 8, 10, 0.5, 10);
    const auto base = as_vec(evalkit::compute_metrics(pred, gt));
    for (double alpha : {0.25, 2.0, 64.0, 0.37, 3.1, 17.0}) {
      DepthMap scaled = pred;
      for (auto& v : scaled.depth) v = float(v * alpha);
      const double d = max_abs_diff(as_vec(evalkit::compute_metrics(scaled, gt)), base);
      const bool pow2 = std::exp2(std::round(std::log2(alpha))) == alpha;
      (pow2 ? worst_exact : worst_other) = std::max(pow2 ? worst_exact : worst_other, d);
    }
  }
  out["median_scaling_exact_max_diff"] = worst_exact;
  out["median_scaling_other_max_diff"] = worst_other;
  return out;
}

// ---------------------------------------------------------------------------
// Directional reproduction

struct Corpus {
  scenegen::LabeledSet source, eval, labeled;
  scenegen::ImageSet target;
};

Corpus load_corpus(const fs::path& data, bool reuse) {
  const auto spec = scenegen::SceneSpec{};
  const auto shift = cli::RunConfig::default_shift();
  if (!reuse || !fs::exists(data / "target_labeled" / "manifest.json")) {
    progress("generating corpus " + std::to_string(corpus_train) + "/" + std::to_string(corpus_train) + "/" +
             std::to_string(corpus_eval) + " + " + std::to_string(corpus_labeled) + " labeled");
    fs::remove_all(data);
    scenegen::build_dataset(corpus_train, corpus_eval, spec, shift, data, 0, corpus_labeled);
  }
  Corpus c;
  c.source = scenegen::load_labeled(scenegen::load_manifest(data / "source_train"));
  c.target = scenegen::load_images(scenegen::load_manifest(data / "target_train"));
  c.labeled = scenegen::load_labeled(scenegen::load_manifest(data / "target_labeled"));
  return c;
}

trainkit::Net pretrained(const Corpus& c, const fs::path& dir, bool reuse) {
  const fs::path ck = dir / "checkpoint";
  trainkit::Net net(depthnet::ArchConfig{}, 0);
  if (reuse && fs::exists(ck)) {
    trainkit::load_checkpoint(ck).take("net.", net.params());
    return net;
  }
  trainkit::PretrainConfig cfg;
  progress("pretraining on " + std::to_string(c.source.size()) + " source pairs, " + std::to_string(cfg.epochs) +
           " epochs");
  auto res = trainkit::pretrain_source(net, c.source, cfg, [](const trainkit::PretrainEpoch& e) {
    progress("  epoch " + std::to_string(e.epoch) + " loss " + fmt(e.loss_mean) + " val rel " + fmt(e.val_rel));
  });
  trainkit::Checkpoint out;
  out.config = {{"kind", "model"}};
  out.put("net.", res.net.params());
  fs::remove_all(ck);
  trainkit::save_checkpoint(out, ck);
  return res.net;
}

double eval_rel(const trainkit::DepthModel& m, const scenegen::LabeledSet& eval) {
  return evalkit::evaluate_labeled(m, eval, evalkit::EvalConfig{}).aggregate.rel;
}

// ---------------------------------------------------------------------------
// Determinism smoke: gen -> pretrain -> adapt -> eval twice through the CLI.

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"adadepth"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log, err;
  const int code = cli::run_command(int(argv.size()), argv.data(), log, err);
  if (code != 0) progress("cli " + args.front() + " failed: " + err.str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool smoke_pipeline(const fs::path& root, const std::string& config) {
  fs::remove_all(root);
  fs::create_directories(root);
  auto at = [&](const char* s) { return (root / s).string(); };
  return cli({"gen", "--config", config, "--out", at("data")}) == 0 &&
         cli({"pretrain", "--config", config, "--data", at("data"), "--out", at("pre")}) == 0 &&
         cli({"adapt", "--config", config, "--data", at("data"), "--checkpoint", at("pre/checkpoint"), "--out",
              at("adapt")}) == 0 &&
         cli({"eval", "--config", config, "--data", at("data"), "--checkpoint", at("adapt/checkpoint"), "--out",
              at("eval")}) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::unitbuf;
  CLI::App app{"acceptance run"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--workdir", workdir, "scratch directory for corpus, checkpoints and the report");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  app.add_flag("--reuse", reuse, "reuse corpus and pretrained network found in the work directory");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  const fs::path work = fs::absolute(workdir);
  fs::create_directories(work);
  Report report;
  const auto t_all = Clock::now();

  if (wanted(1)) {
    const auto t0 = Clock::now();
    json worst = gradient_suite();
    const double secs = seconds_since(t0);
    double m = 0;
    std::string per;
    for (auto& [k, v] : worst.items()) {
      m = std::max(m, v.get<double>());
      per += (per.empty() ? "" : ", ") + k + " " + fmt(v.get<double>(), 2);
    }
    report.line(1, "gradient suite", m < grad_tol && secs < grad_budget_s && worst.size() == 8,
                "max rel err " + fmt(m, 3) + " (< " + fmt(grad_tol) + ") over " + std::to_string(grad_trials) +
                    " draws per loss [" + per + "] in " + fmt(secs, 3) + " s (< " + fmt(grad_budget_s) + " s)",
                {{"max_rel_err", worst}, {"seconds", secs}});
  }

  if (wanted(2)) {
    json o = loss_oracles();
    double m = 0;
    for (auto& [k, v] : o.items()) m = std::max(m, std::abs(v["got"].get<double>() - v["want"].get<double>()));
    report.line(2, "loss-value oracles", m <= oracle_tol,
                std::to_string(o.size()) + " hand-derived values, max |error| " + fmt(m, 3) + " (<= " +
                    fmt(oracle_tol) + ")",
                {{"values", o}});
  }

  if (wanted(3)) {
    Rng rng(202);
    double m = 0;
    for (int t = 0; t < metric_maps; ++t) {
      const int h = 3 + t % 5, w = 4 + t % 3;
      DepthMap gt = random_map(rng, h, w, 0.5, 10), pred = random_map(rng, h, w, 0.3, 12);
      const bool scale = t % 2 == 1;
      evalkit::EvalConfig cfg;
      cfg.scaling = scale ? evalkit::ScaleMode::per_image : evalkit::ScaleMode::none;
      m = std::max(m, max_abs_diff(as_vec(evalkit::compute_metrics(pred, gt, cfg)), as_vec(formula(pred, gt, scale))));
    }
    DepthMap p(1, 2), g(1, 2);
    p.depth = {1, 2};
    g.depth = {2, 2};
    evalkit::EvalConfig none;
    none.scaling = evalkit::ScaleMode::none;
    const auto r = evalkit::compute_metrics(p, g, none);
    const bool worked = r.rel == 0.25 && r.delta1 == 0.5 && r.delta2 == 0.5 && r.delta3 == 0.5;
    report.line(3, "metric oracle", m <= metric_tol && worked,
                "max |metric - formula| " + fmt(m, 3) + " (<= " + fmt(metric_tol) + ") on " +
                    std::to_string(metric_maps) + " maps; worked example rel " + fmt(r.rel) + " d1/d2/d3 " +
                    fmt(r.delta1) + "/" + fmt(r.delta2) + "/" + fmt(r.delta3),
                {{"max_abs_diff", m}, {"worked_example_exact", worked}});
  }

  if (wanted(4)) {
    const auto t0 = Clock::now();
    const fs::path dir = work / "structural";
    fs::create_directories(dir);
    json s = structural_laws(dir);
    const double secs = seconds_since(t0);
    const bool pass = s["freeze_law"] && s["adapted_parameters_moved"] && s["rtf_identity"] &&
                      s["zero_iterations_noop"] && s["checkpoint_round_trip"] &&
                      s["median_scaling_exact_max_diff"].get<double>() == 0 &&
                      s["median_scaling_other_max_diff"].get<double>() <= scale_tol_nonexact && secs < structural_budget_s;
    report.line(4, "structural laws", pass, s.dump() + " in " + fmt(secs, 3) + " s (< " + fmt(structural_budget_s) + " s)",
                {{"laws", s}});
  }

  if (wanted(5) || wanted(6) || wanted(7)) {
    const auto t0 = Clock::now();
    const Corpus corpus = load_corpus(work / "data", reuse);
    const scenegen::LabeledSet eval = scenegen::load_labeled(scenegen::load_manifest(work / "data" / "target_eval"));
    const trainkit::Net net = pretrained(corpus, work / "pretrained", reuse);
    const trainkit::AdaptData data{&corpus.source, &corpus.target};
    trainkit::FeatureCachePool pool(net, data);
    const std::vector<ImageTensor> probe(corpus.target.images.begin(),
                                         corpus.target.images.begin() + std::ptrdiff_t(drift_probe));

    const double baseline = eval_rel(trainkit::DepthModel{net, std::nullopt}, eval);
    progress("source-only target-eval rel " + fmt(baseline));

    json runs = json::object();
    std::map<std::string, std::vector<double>> rel;
    std::vector<double> semi_rel;
    double drift_loose = -1;
    for (auto reg : {trainkit::Regularizer::dcr, trainkit::Regularizer::rtf, trainkit::Regularizer::fcf}) {
      const std::string name = trainkit::to_string(reg);
      for (auto seed : seeds) {
        trainkit::AdaptConfig cfg;
        cfg.regularizer = reg;
        cfg.seed = seed;
        cfg.k_outer = adapt_iters;
        const auto ts = Clock::now();
        trainkit::AdaptSession s(net, data, cfg, pool.get(trainkit::AdaptSession::first_adaptable_stage(cfg)));
        if (reg == trainkit::Regularizer::dcr && seed == seeds.front()) {
          s.run(pin_iters);
          drift_loose = trainkit::latent_drift(s.model(), net, probe);
          s.run(adapt_iters - pin_iters);
        } else {
          s.run(adapt_iters);
        }
        const double r = eval_rel(s.model(), eval);
        rel[name].push_back(r);
        json run{{"rel", r}, {"seconds", seconds_since(ts)}};
        if (reg == trainkit::Regularizer::fcf && wanted(7)) {
          // Continuing the session is exactly adapt_semi with the same config.
          s.attach_labeled(corpus.labeled);
          s.run_semi(cfg.semi.k_outer);
          const double sr = eval_rel(s.model(), eval);
          semi_rel.push_back(sr);
          run["semi_rel"] = sr;
        }
        runs[name + "_seed" + std::to_string(seed)] = run;
        progress(name + " seed " + std::to_string(seed) + " rel " + fmt(r) +
                 (run.contains("semi_rel") ? " semi rel " + fmt(run["semi_rel"].get<double>()) : "") + " (" +
                 fmt(run["seconds"].get<double>(), 3) + " s)");
      }
    }
    const double secs5 = seconds_since(t0);

    if (wanted(5)) {
      bool pass = true;
      std::string detail = "baseline rel " + fmt(baseline) + ";";
      json med = json::object();
      for (auto reg : {trainkit::Regularizer::dcr, trainkit::Regularizer::rtf, trainkit::Regularizer::fcf}) {
        const std::string name = trainkit::to_string(reg);
        const double m = median(rel.at(name));
        const double imp = (baseline - m) / baseline;
        med[name] = {{"median_rel", m}, {"improvement", imp}, {"per_seed", rel[name]}};
        pass = pass && imp >= min_improvement;
        detail += " " + name + " " + fmt(m) + " (" + fmt(100 * imp, 3) + "%)";
      }
      const double d = med["DCR"]["median_rel"], r = med["RTF"]["median_rel"], f = med["FCF"]["median_rel"];
      const bool fcf_best = f < r && r < d;
      detail += "; need >= " + fmt(100 * min_improvement) + "% each; FCF < RTF < DCR ordering " +
                (fcf_best ? "reproduced" : "not reproduced") + " (reported, not gated); " + fmt(secs5 / 60, 3) +
                " min (target < " + fmt(reproduction_target_s / 60) + ")";
      report.line(5, "directional reproduction", pass, detail,
                  {{"baseline_rel", baseline}, {"medians", med}, {"runs", runs}, {"fcf_best_ordering", fcf_best},
                   {"seconds", secs5}});
    }

    if (wanted(6)) {
      // (a) FCF without the depth discriminator.
      trainkit::AdaptConfig cfg;
      cfg.regularizer = trainkit::Regularizer::fcf;
      cfg.use_dy = false;
      cfg.k_outer = adapt_iters;
      trainkit::AdaptSession s(net, data, cfg, pool.get(trainkit::AdaptSession::first_adaptable_stage(cfg)));
      s.run(adapt_iters);
      const double no_dy = eval_rel(s.model(), eval);
      const double fcf_seed0 = rel.at("FCF").front();
      progress("fcf w/o D_Y rel " + fmt(no_dy));

      // (b) sharing sweep.
      trainkit::AdaptConfig sc;
      sc.k_outer = sweep_iters;
      const auto rows = trainkit::sweep_sharing(net, data, {1, 2, 3}, sc, eval, {}, &pool);
      const std::string table = trainkit::sweep_table(rows);
      std::ofstream(work / "sweep.txt") << table;
      std::cout << table;
      bool sweep_ok = rows.size() == 3;
      for (std::size_t i = 0; sweep_ok && i < rows.size(); ++i)
        sweep_ok = std::isfinite(rows[i].metrics.rel) && (i == 0 || rows[i].trainable_params > rows[i - 1].trainable_params);

      // (c) lambda 1e6 against lambda 10, same seed and iteration count.
      trainkit::AdaptConfig pc;
      pc.regularizer = trainkit::Regularizer::dcr;
      pc.lambda = 1e6;
      pc.seed = seeds.front();
      pc.k_outer = pin_iters;
      double drift_pinned = -1;
      std::string pin_note;
      try {
        trainkit::AdaptSession ps(net, data, pc, pool.get(trainkit::AdaptSession::first_adaptable_stage(pc)));
        ps.run(pin_iters);
        drift_pinned = trainkit::latent_drift(ps.model(), net, probe);
      } catch (const DivergenceError& e) {
        pin_note = std::string(" (lambda 1e6 run diverged: ") + e.what() + ")";
      }
      const bool pin_ok = drift_pinned >= 0 && drift_loose > 0 && drift_pinned < pin_ratio * drift_loose;
      const bool a_ok = no_dy < baseline;
      json rows_j = json::array();
      for (const auto& r : rows)
        rows_j.push_back({{"adapt_depth", r.adapt_depth}, {"trainable", r.trainable_params}, {"rel", r.metrics.rel}});
      report.line(6, "ablations", a_ok && sweep_ok && pin_ok,
                  "(a) FCF w/o D_Y rel " + fmt(no_dy) + " vs FCF " + fmt(fcf_seed0) + " vs baseline " + fmt(baseline) +
                      (a_ok ? " improves" : " does not improve") + "; (b) sweep over 3 depths " +
                      (sweep_ok ? "ok" : "bad") + "; (c) drift lambda 1e6 " + fmt(drift_pinned) + " vs lambda 10 " +
                      fmt(drift_loose) + " (ratio " + fmt(drift_pinned / drift_loose, 3) + ", need < " +
                      fmt(pin_ratio) + ")" + pin_note,
                  {{"fcf_without_dy_rel", no_dy},
                   {"fcf_rel_seed0", fcf_seed0},
                   {"sweep", rows_j},
                   {"drift_lambda_1e6", drift_pinned},
                   {"drift_lambda_10", drift_loose}});
    }

    if (wanted(7)) {
      const double semi = median(semi_rel), unsup = median(rel.at("FCF"));
      report.line(7, "semi-supervised ordering", semi <= unsup,
                  "FCF + " + std::to_string(corpus.labeled.size()) + " labeled target images (" +
                      fmt(100.0 * double(corpus.labeled.size()) / double(corpus_train)) + "%) median rel " + fmt(semi) +
                      " vs unsupervised " + fmt(unsup),
                  {{"semi_median_rel", semi}, {"unsup_median_rel", unsup}, {"semi_per_seed", semi_rel}});
    }
  }

  if (wanted(8)) {
    const auto t0 = Clock::now();
    const std::string config = std::string(ADADEPTH_SOURCE_DIR) + "/tools/smoke.json";
    const bool a = smoke_pipeline(work / "smoke_a", config);
    const bool b = a && smoke_pipeline(work / "smoke_b", config);
    const double secs = seconds_since(t0);
    const std::string ma = slurp(work / "smoke_a" / "eval" / "metrics.json");
    const std::string mb = slurp(work / "smoke_b" / "eval" / "metrics.json");
    const bool same = a && b && !ma.empty() && ma == mb;
    report.line(8, "determinism", same && secs < smoke_budget_s,
                std::string("two smoke pipelines ") + (a && b ? "completed" : "failed") + ", metrics.json " +
                    (same ? "byte-identical" : "differs") + " (" + std::to_string(ma.size()) + " bytes), " +
                    fmt(secs, 3) + " s for both (< " + fmt(smoke_budget_s) + " s)",
                {{"seconds", secs}});
  }

  json out{{"all_pass", report.all_pass}, {"seconds", seconds_since(t_all)}, {"criteria", report.criteria}};
  std::ofstream(work / "acceptance_report.json") << out.dump(2) << "\n";
  std::cout << (report.all_pass ? "ALL PASS" : "SOME CRITERIA FAILED") << " (" << fmt(seconds_since(t_all) / 60, 3)
            << " min)" << std::endl;
  return report.all_pass ? 0 : 1;
}

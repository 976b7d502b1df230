#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adadepth/core/error.hpp"
#include "adadepth/core/image.hpp"
#include "adadepth/core/png_io.hpp"
#include "adadepth/scenegen/scene.hpp"
#include "adadepth/scenegen/shift.hpp"

namespace adadepth::scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int manifest_version = 1;

enum class Domain { source, target };
enum class Split { source_train, target_train, target_eval, target_labeled };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline const char* to_string(Split s) {
  switch (s) {
    case Split::source_train: return "source_train";
    case Split::target_train: return "target_train";
    case Split::target_eval: return "target_eval";
    case Split::target_labeled: return "target_labeled";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  for (Split k : {Split::source_train, Split::target_train, Split::target_eval, Split::target_labeled})
    if (s == to_string(k)) return k;
  throw DatasetError("unknown split '" + s + "'");
}

inline Domain domain_of(Split s) { return s == Split::source_train ? Domain::source : Domain::target; }

/// Whether a split may carry depth files at all. The unlabeled target
/// training split never does.
inline bool split_has_depth(Split s) { return s != Split::target_train; }

struct ManifestEntry {
  std::string rgb;
  std::optional<std::string> depth;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int version = manifest_version;
  Domain domain = Domain::source;
  Split split = Split::source_train;
  int height = 0, width = 0;
  std::vector<ManifestEntry> entries;
  json generation;  // scene spec, shift config and base seed used to build the split
  fs::path root;    // directory holding the split; not serialized

  std::size_t size() const { return entries.size(); }
  bool labeled() const { return split_has_depth(split); }
};

// ---------------------------------------------------------------------------
// Depth encoding: 16-bit millimetres.

inline std::uint16_t encode_depth(float metres) {
  const double mm = std::round(double(metres) * 1000.0);
  if (!(mm >= 0) || mm > 65535) throw DatasetError("depth " + std::to_string(metres) + " m is not encodable");
  return std::uint16_t(mm);
}

inline float decode_depth(std::uint16_t mm) { return float(double(mm) / 1000.0); }

/// Process-wide count of depth files opened, for auditing label access.
inline std::atomic<long>& depth_file_reads() {
  static std::atomic<long> n{0};
  return n;
}

// ---------------------------------------------------------------------------
// File encoding

inline void write_rgb(const std::string& path, const ImageTensor& img) {
  png::Raster r{img.width, img.height, 3, 8, {}};
  r.samples.resize(std::size_t(3) * img.height * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        r.samples[(std::size_t(y) * img.width + x) * 3 + c] =
            std::uint16_t(std::lround(std::clamp(img.at(c, y, x), 0.f, 1.f) * 255.0f));
  png::write(path, r);
}

inline void write_depth(const std::string& path, const DepthMap& d) {
  png::Raster r{d.width, d.height, 1, 16, {}};
  r.samples.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) r.samples[i] = d.valid[i] ? encode_depth(d.depth[i]) : 0;
  png::write(path, r);
}

inline ImageTensor read_rgb(const std::string& path) {
  png::Raster r;
  try {
    r = png::read(path);
  } catch (const IoError& e) {
    throw DatasetError(e.what());
  }
  if (r.channels != 3 || r.bit_depth != 8) throw DatasetError("not an 8-bit RGB png: " + path);
  ImageTensor img(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = float(r.samples[(std::size_t(y) * r.width + x) * 3 + c]) / 255.0f;
  return img;
}

inline DepthMap read_depth(const std::string& path) {
  ++depth_file_reads();
  png::Raster r;
  try {
    r = png::read(path);
  } catch (const IoError& e) {
    throw DatasetError(e.what());
  }
  if (r.channels != 1 || r.bit_depth != 16) throw DatasetError("not a 16-bit grayscale png: " + path);
  DepthMap d(r.height, r.width);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d.depth[i] = decode_depth(r.samples[i]);
    d.valid[i] = r.samples[i] != 0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Manifest (de)serialization

inline json spec_to_json(const SceneSpec& s) {
  return {{"image_size", {s.height, s.width}},
          {"n_objects", {s.min_objects, s.max_objects}},
          {"depth_range", {s.near, s.far}}};
}

inline json shift_to_json(const ShiftConfig& c) {
  return {{"color_gamma", c.gamma},   {"noise_sigma", c.noise_sigma}, {"blur_radius", c.blur_radius},
          {"contrast", c.contrast},   {"texture_overlay_strength", c.overlay}, {"seed", c.seed}};
}

inline json manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"rgb", e.rgb}, {"depth", e.depth ? json(*e.depth) : json(nullptr)}, {"seed", e.seed}});
  return {{"version", m.version},
          {"domain", to_string(m.domain)},
          {"split", to_string(m.split)},
          {"image_size", {m.height, m.width}},
          {"generation", m.generation},
          {"entries", entries}};
}

inline void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DatasetError("cannot write manifest in " + dir.string());
  out << manifest_to_json(m).dump(2) << "\n";
  if (!out) throw DatasetError("cannot write manifest in " + dir.string());
}

/// Reads `dir/manifest.json` and checks version and split hygiene.
inline DatasetManifest load_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetError("missing manifest: " + (dir / "manifest.json").string());
  DatasetManifest m;
  try {
    json j = json::parse(in);
    m.version = j.at("version").get<int>();
    if (m.version != manifest_version)
      throw DatasetError("unsupported manifest version " + std::to_string(m.version));
    m.split = split_from_string(j.at("split").get<std::string>());
    m.domain = j.at("domain").get<std::string>() == "source" ? Domain::source : Domain::target;
    if (m.domain != domain_of(m.split)) throw DatasetError("manifest domain does not match its split");
    m.height = j.at("image_size").at(0).get<int>();
    m.width = j.at("image_size").at(1).get<int>();
    m.generation = j.value("generation", json::object());
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.rgb = e.at("rgb").get<std::string>();
      if (!e.at("depth").is_null()) me.depth = e.at("depth").get<std::string>();
      me.seed = e.at("seed").get<std::uint64_t>();
      if (me.depth && !split_has_depth(m.split))
        throw DatasetError("split " + std::string(to_string(m.split)) + " must not reference depth files");
      m.entries.push_back(std::move(me));
    }
  } catch (const json::exception& e) {
    throw DatasetError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  m.root = dir;
  return m;
}

// ---------------------------------------------------------------------------
// Building

struct BuiltDataset {
  DatasetManifest source_train, target_train, target_eval;
  std::optional<DatasetManifest> target_labeled;
};

namespace detail {

inline std::string indexed(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06zu.png", stem, i);
  return buf;
}

inline DatasetManifest write_split(Split split, std::size_t count, std::uint64_t first_seed,
                                   const SceneSpec& spec, const ShiftConfig& shift, std::uint64_t base_seed,
                                   const fs::path& out_dir) {
  const fs::path dir = out_dir / to_string(split);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.split = split;
  m.domain = domain_of(split);
  m.height = spec.height;
  m.width = spec.width;
  m.root = dir;
  m.generation = {{"scene_spec", spec_to_json(spec)}, {"base_seed", base_seed}};
  if (m.domain == Domain::target) m.generation["shift"] = shift_to_json(shift);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = first_seed + i;
    auto [img, depth] = generate_scene(mix_seed(base_seed, seed), spec);
    if (m.domain == Domain::target) {
      ShiftConfig per_image = shift;
      per_image.seed = mix_seed(shift.seed, seed);
      img = apply_domain_shift(img, per_image);
    }
    ManifestEntry e{indexed("rgb", i), std::nullopt, seed};
    try {
      write_rgb((dir / e.rgb).string(), img);
      if (split_has_depth(split)) {
        e.depth = indexed("depth", i);
        write_depth((dir / *e.depth).string(), depth);
      }
    } catch (const IoError& err) {
      throw DatasetError(err.what());
    }
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir);
  return m;
}

}  // namespace detail

/// Writes source-train (RGB + depth), target-train (RGB only) and
/// target-eval (RGB + depth) splits, plus an optional small labeled target
/// split, under `out_dir`. Scene seeds of the splits are disjoint ranges, so
/// target images come from freshly sampled scenes.
inline BuiltDataset build_dataset(std::size_t n_train, std::size_t n_eval, const SceneSpec& spec,
                                  const ShiftConfig& shift, const fs::path& out_dir,
                                  std::uint64_t base_seed = 0, std::size_t n_labeled = 0) {
  spec.validate();
  shift.validate();
  BuiltDataset b;
  std::uint64_t next = 0;
  b.source_train = detail::write_split(Split::source_train, n_train, next, spec, shift, base_seed, out_dir);
  next += n_train;
  b.target_train = detail::write_split(Split::target_train, n_train, next, spec, shift, base_seed, out_dir);
  next += n_train;
  b.target_eval = detail::write_split(Split::target_eval, n_eval, next, spec, shift, base_seed, out_dir);
  next += n_eval;
  if (n_labeled > 0)
    b.target_labeled = detail::write_split(Split::target_labeled, n_labeled, next, spec, shift, base_seed, out_dir);
  return b;
}

// ---------------------------------------------------------------------------
// Loading

struct Sample {
  ImageTensor image;
  std::optional<DepthMap> depth;
  Domain domain = Domain::source;
};

inline void check_index(const DatasetManifest& m, std::size_t idx) {
  if (idx >= m.entries.size())
    throw BoundsError("index " + std::to_string(idx) + " out of range for split of size " +
                      std::to_string(m.entries.size()));
}

inline ImageTensor load_image(const DatasetManifest& m, std::size_t idx) {
  check_index(m, idx);
  ImageTensor img = read_rgb((m.root / m.entries[idx].rgb).string());
  if (img.height != m.height || img.width != m.width)
    throw DatasetError("image " + m.entries[idx].rgb + " does not match the declared size");
  return img;
}

inline Sample load_sample(const DatasetManifest& m, std::size_t idx) {
  Sample s{load_image(m, idx), std::nullopt, m.domain};
  if (m.labeled() && m.entries[idx].depth) {
    DepthMap d = read_depth((m.root / *m.entries[idx].depth).string());
    if (d.height != m.height || d.width != m.width)
      throw DatasetError("depth " + *m.entries[idx].depth + " does not match the declared size");
    s.depth = std::move(d);
  }
  return s;
}

/// In-memory copies of a split for training loops.
struct ImageSet {
  std::vector<ImageTensor> images;
  std::size_t size() const { return images.size(); }
};

struct LabeledSet {
  std::vector<ImageTensor> images;
  std::vector<DepthMap> depths;
  std::size_t size() const { return images.size(); }
};

/// Loads images only; never opens depth files.
inline ImageSet load_images(const DatasetManifest& m, std::size_t limit = SIZE_MAX) {
  ImageSet s;
  const std::size_t n = std::min(limit, m.size());
  for (std::size_t i = 0; i < n; ++i) s.images.push_back(load_image(m, i));
  return s;
}

inline LabeledSet load_labeled(const DatasetManifest& m, std::size_t limit = SIZE_MAX) {
  if (!m.labeled()) throw DatasetError(std::string("split ") + to_string(m.split) + " carries no depth labels");
  LabeledSet s;
  const std::size_t n = std::min(limit, m.size());
  for (std::size_t i = 0; i < n; ++i) {
    Sample smp = load_sample(m, i);
    if (!smp.depth) throw DatasetError("entry " + std::to_string(i) + " has no depth label");
    s.images.push_back(std::move(smp.image));
    s.depths.push_back(std::move(*smp.depth));
  }
  return s;
}

}  // namespace adadepth::scenegen

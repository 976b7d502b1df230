#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adadepth/core/error.hpp"
#include "adadepth/nn/optim.hpp"
#include "adadepth/nn/params.hpp"

namespace adadepth::trainkit {

namespace fs = std::filesystem;

inline constexpr int checkpoint_version = 1;

struct StoredArray {
  std::string name;
  std::vector<int> shape;
  Partition tag = Partition::branch;
  int stage = 0;
  bool is_stat = false;
  std::vector<float> data;
};

/// Everything needed to restore a training run: named arrays (parameters,
/// running statistics, optimizer slots), the config echo, the iteration
/// counter and named RNG states.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::int64_t iteration = 0;
  std::map<std::string, std::string> rng;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<StoredArray> arrays;

  const StoredArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }

  void put(const std::string& prefix, const ParamStore<float>& ps) {
    for (const auto& a : ps) arrays.push_back({prefix + a.name, a.shape, a.tag, a.stage, a.is_stat, a.value});
  }

  /// Copies stored values into `ps`; names, shapes and tags must match.
  /// On any mismatch `ps` is left untouched.
  void take(const std::string& prefix, ParamStore<float>& ps) const {
    std::vector<const StoredArray*> src;
    for (const auto& a : ps) {
      const StoredArray* s = find(prefix + a.name);
      if (!s) throw CheckpointError("checkpoint lacks array '" + prefix + a.name + "'");
      if (s->shape != a.shape || s->data.size() != a.size())
        throw CheckpointError("checkpoint array '" + s->name + "' has the wrong shape");
      if (s->tag != a.tag || s->stage != a.stage || s->is_stat != a.is_stat)
        throw CheckpointError("checkpoint array '" + s->name + "' has a different partition tag");
      src.push_back(s);
    }
    std::size_t i = 0;
    for (auto& a : ps) a.value = src[i++]->data;
  }

  void put_state(const std::string& prefix, const nn::OptimizerState<float>& st) {
    for (const auto& [k, v] : st) arrays.push_back({prefix + k, {int(v.size())}, Partition::branch, 0, true, v});
  }

  nn::OptimizerState<float> take_state(const std::string& prefix) const {
    nn::OptimizerState<float> st;
    for (const auto& a : arrays)
      if (a.name.rfind(prefix, 0) == 0) st[a.name.substr(prefix.size())] = a.data;
    return st;
  }
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

inline void write_f32(const fs::path& p, const std::vector<float>& data) {
  std::vector<std::uint32_t> words(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(data[i]));
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(words.data()), std::streamsize(words.size() * 4));
  if (!out) throw CheckpointError("cannot write " + p.string());
}

inline std::vector<float> read_f32(const fs::path& p, std::size_t count) {
  std::ifstream in(p, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("missing array file " + p.string());
  if (std::size_t(in.tellg()) != count * 4) throw CheckpointError("array file " + p.string() + " has the wrong size");
  in.seekg(0);
  std::vector<std::uint32_t> words(count);
  in.read(reinterpret_cast<char*>(words.data()), std::streamsize(count * 4));
  if (!in) throw CheckpointError("cannot read " + p.string());
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<float>(to_le(words[i]));
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "arrays", ec);
  if (ec) throw CheckpointError("cannot create checkpoint directory " + dir.string());
  nlohmann::ordered_json meta;
  meta["version"] = checkpoint_version;
  meta["iteration"] = ck.iteration;
  meta["config"] = ck.config;
  meta["rng"] = ck.rng;
  meta["extra"] = ck.extra;
  auto list = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ck.arrays.size(); ++i) {
    const auto& a = ck.arrays[i];
    char file[32];
    std::snprintf(file, sizeof file, "arrays/%05zu.f32", i);
    detail::write_f32(dir / file, a.data);
    list.push_back({{"name", a.name},
                    {"file", file},
                    {"shape", a.shape},
                    {"tag", std::string(to_string(a.tag))},
                    {"stage", a.stage},
                    {"is_stat", a.is_stat}});
  }
  meta["arrays"] = std::move(list);
  std::ofstream out(dir / "meta.json");
  out << meta.dump(1) << "\n";
  if (!out) throw CheckpointError("cannot write " + (dir / "meta.json").string());
}

/// Reads a whole checkpoint into memory; nothing is returned unless every
/// array loads and the version matches.
inline Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw CheckpointError("no checkpoint at " + dir.string());
  Checkpoint ck;
  try {
    auto meta = nlohmann::json::parse(in);
    const int version = meta.at("version").get<int>();
    if (version != checkpoint_version)
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(checkpoint_version) + ")");
    ck.iteration = meta.at("iteration").get<std::int64_t>();
    ck.config = meta.at("config");
    ck.rng = meta.at("rng").get<std::map<std::string, std::string>>();
    ck.extra = meta.value("extra", nlohmann::json::object());
    for (const auto& e : meta.at("arrays")) {
      StoredArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<std::vector<int>>();
      a.tag = partition_from_string(e.at("tag").get<std::string>());
      a.stage = e.at("stage").get<int>();
      a.is_stat = e.at("is_stat").get<bool>();
      std::size_t n = 1;
      for (int d : a.shape) {
        if (d < 0) throw CheckpointError("negative extent in array '" + a.name + "'");
        n *= std::size_t(d);
      }
      a.data = detail::read_f32(dir / e.at("file").get<std::string>(), n);
      ck.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint metadata in " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  return ck;
}

}  // namespace adadepth::trainkit

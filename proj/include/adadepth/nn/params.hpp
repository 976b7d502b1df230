#pragma once

#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "adadepth/core/error.hpp"

namespace adadepth {

enum class Partition { trunk, head, decoder, branch };

inline std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::trunk: return "trunk";
    case Partition::head: return "head";
    case Partition::decoder: return "decoder";
    case Partition::branch: return "branch";
  }
  return "?";
}

inline Partition partition_from_string(std::string_view s) {
  if (s == "trunk") return Partition::trunk;
  if (s == "head") return Partition::head;
  if (s == "decoder") return Partition::decoder;
  if (s == "branch") return Partition::branch;
  throw ConfigError("unknown partition tag '" + std::string(s) + "'");
}

/// One named parameter (or batch-norm statistic) array.
template <typename T>
struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  Partition tag = Partition::branch;
  int stage = 0;         // encoder stage 1..n for encoder arrays, 0 otherwise
  bool is_stat = false;  // running statistics: never receive gradients
  bool trainable = false;

  std::size_t size() const { return value.size(); }
};

/// Ordered, name-addressable collection of parameter arrays. Layers refer to
/// arrays by index, so insertion order is part of an architecture's identity.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<int> shape, Partition tag, int stage = 0,
                  bool is_stat = false) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    ParamArray<T> a;
    a.name = std::move(name);
    a.shape = std::move(shape);
    std::size_t n = std::accumulate(a.shape.begin(), a.shape.end(), std::size_t(1),
                                    [](std::size_t x, int d) { return x * std::size_t(d); });
    a.value.assign(n, T(0));
    a.grad.assign(n, T(0));
    a.tag = tag;
    a.stage = stage;
    a.is_stat = is_stat;
    index_[a.name] = arrays_.size();
    arrays_.push_back(std::move(a));
    return arrays_.size() - 1;
  }

  std::size_t count() const { return arrays_.size(); }
  ParamArray<T>& operator[](std::size_t i) { return arrays_[i]; }
  const ParamArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  ParamArray<T>& get(const std::string& name) { return arrays_[index_of(name)]; }
  const ParamArray<T>& get(const std::string& name) const { return arrays_[index_of(name)]; }

  void zero_grad() {
    for (auto& a : arrays_) std::fill(a.grad.begin(), a.grad.end(), T(0));
  }

  void set_trainable(bool on) {
    for (auto& a : arrays_) a.trainable = on && !a.is_stat;
  }

  template <typename Pred>
  void set_trainable_if(Pred pred) {
    for (auto& a : arrays_) a.trainable = !a.is_stat && pred(a);
  }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& a : arrays_)
      if (a.trainable) n += a.size();
    return n;
  }

  /// Value-level equality (names, shapes, tags and bit-equal values).
  bool same_values(const ParamStore& o) const {
    if (arrays_.size() != o.arrays_.size()) return false;
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      const auto& a = arrays_[i];
      const auto& b = o.arrays_[i];
      if (a.name != b.name || a.shape != b.shape || a.tag != b.tag || a.value != b.value)
        return false;
    }
    return true;
  }

  /// Exchanges array values with a store of identical layout.
  void swap_values(ParamStore& o) {
    if (arrays_.size() != o.arrays_.size()) throw ShapeError("parameter stores differ in size");
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      if (arrays_[i].name != o.arrays_[i].name || arrays_[i].shape != o.arrays_[i].shape)
        throw ShapeError("parameter stores differ at '" + arrays_[i].name + "'");
      arrays_[i].value.swap(o.arrays_[i].value);
    }
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& a : arrays_) {
      std::size_t i = out.add(a.name, a.shape, a.tag, a.stage, a.is_stat);
      auto& b = out[i];
      for (std::size_t k = 0; k < a.size(); ++k) b.value[k] = U(a.value[k]);
      b.trainable = a.trainable;
    }
    return out;
  }

 private:
  std::vector<ParamArray<T>> arrays_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace adadepth

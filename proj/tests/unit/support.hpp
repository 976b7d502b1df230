#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "adadepth/core/random.hpp"
#include "adadepth/core/tensor.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// ||a - n|| / max(||a||, ||n||), with 0 when both vanish.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double d = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0 ? std::sqrt(d) : std::sqrt(d) / scale;
}

/// Central differences of f around x, one coordinate at a time.
inline std::vector<double> numeric_grad(const std::function<double()>& f, std::vector<double*> coords,
                                        double h = 1e-5) {
  std::vector<double> g(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double keep = *coords[i];
    *coords[i] = keep + h;
    const double up = f();
    *coords[i] = keep - h;
    const double down = f();
    *coords[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline std::vector<double*> coords_of(std::vector<double>& v) {
  std::vector<double*> out;
  for (auto& x : v) out.push_back(&x);
  return out;
}

inline std::vector<double*> coords_of(adadepth::Tensor<double>& t) { return coords_of(t.vec()); }

inline adadepth::Tensor<double> random_tensor(adadepth::Rng& rng, adadepth::Shape4 s, double sd = 1.0) {
  adadepth::Tensor<double> t(s);
  for (auto& v : t.vec()) v = adadepth::normal(rng, 0.0, sd);
  return t;
}

inline std::vector<double> random_vec(adadepth::Rng& rng, std::size_t n, double lo = -2, double hi = 2) {
  std::vector<double> v(n);
  for (auto& x : v) x = adadepth::uniform(rng, lo, hi);
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("adadepth_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

}  // namespace testsupport

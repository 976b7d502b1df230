#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "adadepth/core/error.hpp"
#include "adadepth/core/image.hpp"
#include "adadepth/core/random.hpp"

namespace adadepth::scenegen {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator*(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const { return *this * (1.0 / norm()); }
};

/// Generation parameters shared by every scene of a corpus.
struct SceneSpec {
  int height = 128;
  int width = 160;
  int min_objects = 2;
  int max_objects = 8;
  double near = 0.5;
  double far = 10.0;

  void validate() const {
    if (height < 8 || width < 8) throw ConfigError("scene image size must be at least 8x8");
    if (!(near > 0.0) || !(near < far) || !std::isfinite(far))
      throw ConfigError("scene depth range must satisfy 0 < near < far");
    if (min_objects < 2 || max_objects > 8 || min_objects > max_objects)
      throw ConfigError("scene object count range must lie within [2, 8]");
  }
};

enum class PrimitiveKind { plane, box, sphere, cylinder };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::plane;
  Vec3 center;        // plane: a point on the plane; cylinder: centre of the base disc
  Vec3 normal{0, 1, 0};  // plane only
  Vec3 half_extent;   // box only
  double yaw = 0;     // box rotation about the vertical axis
  double radius = 0;  // sphere, cylinder
  double height = 0;  // cylinder
  Vec3 albedo{0.5, 0.5, 0.5};
  Vec3 albedo_alt{0.5, 0.5, 0.5};
  double checker = 0;  // checker period in metres along the plane; 0 disables
};

/// Pinhole camera at the origin looking down +z with +y up; depth is the z
/// coordinate of the first hit.
struct Scene {
  double focal = 128;
  double cx = 80, cy = 64;
  Vec3 light_dir{0, 1, 0};  // towards the light
  double ambient = 0.3;
  std::vector<Primitive> primitives;
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  std::size_t prim = 0;
};

inline Vec3 rotate_y(const Vec3& v, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
}

inline std::optional<std::pair<double, Vec3>> intersect(const Primitive& p, const Vec3& o,
                                                        const Vec3& d) {
  constexpr double eps = 1e-9;
  switch (p.kind) {
    case PrimitiveKind::plane: {
      const double den = p.normal.dot(d);
      if (std::abs(den) < eps) return std::nullopt;
      const double t = p.normal.dot(p.center - o) / den;
      if (t <= eps) return std::nullopt;
      return std::pair{t, den < 0 ? p.normal : p.normal * -1.0};
    }
    case PrimitiveKind::sphere: {
      const Vec3 oc = o - p.center;
      const double b = oc.dot(d), c = oc.dot(oc) - p.radius * p.radius, a = d.dot(d);
      const double disc = b * b - a * c;
      if (disc < 0) return std::nullopt;
      const double sq = std::sqrt(disc);
      double t = (-b - sq) / a;
      if (t <= eps) t = (-b + sq) / a;
      if (t <= eps) return std::nullopt;
      return std::pair{t, ((o + d * t) - p.center).normalized()};
    }
    case PrimitiveKind::box: {
      const Vec3 lo = rotate_y(o - p.center, -p.yaw);
      const Vec3 ld = rotate_y(d, -p.yaw);
      double tmin = -std::numeric_limits<double>::infinity(), tmax = -tmin;
      int axis = -1;
      double sign = 1;
      const std::array<double, 3> os{lo.x, lo.y, lo.z}, ds{ld.x, ld.y, ld.z},
          he{p.half_extent.x, p.half_extent.y, p.half_extent.z};
      for (int k = 0; k < 3; ++k) {
        if (std::abs(ds[k]) < eps) {
          if (std::abs(os[k]) > he[k]) return std::nullopt;
          continue;
        }
        double t0 = (-he[k] - os[k]) / ds[k], t1 = (he[k] - os[k]) / ds[k];
        double s = -1;
        if (t0 > t1) {
          std::swap(t0, t1);
          s = 1;
        }
        if (t0 > tmin) {
          tmin = t0;
          axis = k;
          sign = s;
        }
        tmax = std::min(tmax, t1);
      }
      if (tmin > tmax || tmin <= eps || axis < 0) return std::nullopt;
      Vec3 n{axis == 0 ? sign : 0.0, axis == 1 ? sign : 0.0, axis == 2 ? sign : 0.0};
      return std::pair{tmin, rotate_y(n, p.yaw)};
    }
    case PrimitiveKind::cylinder: {
      const Vec3 oc = o - p.center;
      double best = std::numeric_limits<double>::infinity();
      Vec3 bn;
      const double a = d.x * d.x + d.z * d.z;
      if (a > eps) {
        const double b = oc.x * d.x + oc.z * d.z;
        const double c = oc.x * oc.x + oc.z * oc.z - p.radius * p.radius;
        const double disc = b * b - a * c;
        if (disc >= 0) {
          const double sq = std::sqrt(disc);
          for (double t : {(-b - sq) / a, (-b + sq) / a}) {
            const double y = oc.y + t * d.y;
            if (t > eps && y >= 0 && y <= p.height && t < best) {
              best = t;
              bn = Vec3{oc.x + t * d.x, 0, oc.z + t * d.z}.normalized();
              break;
            }
          }
        }
      }
      if (std::abs(d.y) > eps) {
        for (double cap : {0.0, p.height}) {
          const double t = (cap - oc.y) / d.y;
          const double x = oc.x + t * d.x, z = oc.z + t * d.z;
          if (t > eps && t < best && x * x + z * z <= p.radius * p.radius) {
            best = t;
            bn = Vec3{0, cap > 0 ? 1.0 : -1.0, 0};
          }
        }
      }
      if (!std::isfinite(best)) return std::nullopt;
      return std::pair{best, bn};
    }
  }
  return std::nullopt;
}

inline Hit trace(const Scene& s, const Vec3& o, const Vec3& d) {
  Hit h;
  for (std::size_t i = 0; i < s.primitives.size(); ++i) {
    auto r = intersect(s.primitives[i], o, d);
    if (r && r->first < h.t) {
      h.t = r->first;
      h.normal = r->second;
      h.prim = i;
    }
  }
  return h;
}

inline Vec3 surface_color(const Primitive& p, const Vec3& pt) {
  if (p.checker <= 0) return p.albedo;
  // Two in-plane coordinates: for a horizontal plane use x/z, otherwise x/y.
  const bool horizontal = std::abs(p.normal.y) > 0.5;
  const double u = pt.x, v = horizontal ? pt.z : pt.y;
  const long long cell = (long long)std::floor(u / p.checker) + (long long)std::floor(v / p.checker);
  return (cell & 1) ? p.albedo_alt : p.albedo;
}

}  // namespace detail

/// Ray-casts a scene: Lambertian shading under one directional light with
/// hard shadows. Depth is clamped to [near, far]; missed rays read `far`.
inline std::pair<ImageTensor, DepthMap> render(const Scene& scene, const SceneSpec& spec) {
  spec.validate();
  ImageTensor img(spec.height, spec.width);
  DepthMap depth(spec.height, spec.width, float(spec.far));
  const Vec3 origin{0, 0, 0};
  const Vec3 light = scene.light_dir.normalized();
  for (int v = 0; v < spec.height; ++v)
    for (int u = 0; u < spec.width; ++u) {
      const Vec3 dir{(u + 0.5 - scene.cx) / scene.focal, -(v + 0.5 - scene.cy) / scene.focal, 1.0};
      const detail::Hit hit = detail::trace(scene, origin, dir);
      Vec3 rgb{0.05, 0.05, 0.08};
      double z = spec.far;
      if (std::isfinite(hit.t)) {
        z = hit.t * dir.z;
        const Vec3 pt = origin + dir * hit.t;
        const Primitive& prim = scene.primitives[hit.prim];
        double diffuse = std::max(0.0, hit.normal.dot(light));
        if (diffuse > 0) {
          const detail::Hit shadow = detail::trace(scene, pt + hit.normal * 1e-6, light);
          if (std::isfinite(shadow.t)) diffuse = 0;
        }
        rgb = detail::surface_color(prim, pt) * (scene.ambient + (1 - scene.ambient) * diffuse);
      }
      depth.at(v, u) = float(std::clamp(z, spec.near, spec.far));
      img.at(0, v, u) = float(std::clamp(rgb.x, 0.0, 1.0));
      img.at(1, v, u) = float(std::clamp(rgb.y, 0.0, 1.0));
      img.at(2, v, u) = float(std::clamp(rgb.z, 0.0, 1.0));
    }
  return {std::move(img), std::move(depth)};
}

/// Samples a room-like scene: textured floor, back wall, and 2-8 objects
/// resting on the floor.
inline Scene sample_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(seed, 0x5ce9e));
  Scene s;
  s.focal = 0.8 * spec.width;
  s.cx = 0.5 * spec.width;
  s.cy = 0.5 * spec.height;
  s.light_dir = Vec3{uniform(rng, -1, 1), uniform(rng, 0.6, 1.5), uniform(rng, -1.0, 0.3)}.normalized();
  s.ambient = uniform(rng, 0.25, 0.4);

  auto color = [&](double lo, double hi) {
    return Vec3{uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
  };

  const double cam_height = uniform(rng, 1.0, 1.6);
  const double span = spec.far - spec.near;
  const double wall_z = spec.near + span * uniform(rng, 0.6, 0.95);

  Primitive floor;
  floor.kind = PrimitiveKind::plane;
  floor.center = {0, -cam_height, 0};
  floor.normal = {0, 1, 0};
  floor.albedo = color(0.45, 0.85);
  floor.albedo_alt = floor.albedo * uniform(rng, 0.35, 0.7);
  floor.checker = uniform(rng, 0.4, 0.9);
  s.primitives.push_back(floor);

  Primitive wall;
  wall.kind = PrimitiveKind::plane;
  wall.center = {0, 0, wall_z};
  wall.normal = {0, 0, -1};
  wall.albedo = color(0.3, 0.9);
  wall.albedo_alt = wall.albedo * uniform(rng, 0.75, 0.95);
  wall.checker = uniform(rng, 0.8, 1.6);
  s.primitives.push_back(wall);

  const int n = uniform_int(rng, spec.min_objects, spec.max_objects);
  const double half_fov = 0.5 * spec.width / s.focal;
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.kind = std::array{PrimitiveKind::box, PrimitiveKind::sphere,
                        PrimitiveKind::cylinder}[uniform_int(rng, 0, 2)];
    const double z = uniform(rng, spec.near + 1.0, std::max(spec.near + 1.1, wall_z - 0.6));
    const double x = uniform(rng, -0.9, 0.9) * z * half_fov;
    const double size = uniform(rng, 0.25, 0.8);
    p.albedo = color(0.15, 0.95);
    p.albedo_alt = p.albedo;
    switch (p.kind) {
      case PrimitiveKind::box:
        p.half_extent = {size * uniform(rng, 0.6, 1.4), size * uniform(rng, 0.6, 1.6),
                         size * uniform(rng, 0.6, 1.4)};
        p.center = {x, -cam_height + p.half_extent.y, z};
        p.yaw = uniform(rng, 0, 1.5707963267948966);
        break;
      case PrimitiveKind::sphere:
        p.radius = size;
        p.center = {x, -cam_height + size, z};
        break;
      case PrimitiveKind::cylinder:
        p.radius = 0.6 * size;
        p.height = size * uniform(rng, 1.0, 3.0);
        p.center = {x, -cam_height, z};
        break;
      case PrimitiveKind::plane: break;
    }
    s.primitives.push_back(p);
  }
  return s;
}

/// Deterministic in (seed, spec).
inline std::pair<ImageTensor, DepthMap> generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  return render(sample_scene(seed, spec), spec);
}

}  // namespace adadepth::scenegen

// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace partrf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using ArrX = Eigen::ArrayXd;

// Row-major geometry buffers: one row per vertex/face, matching the on-disk layout.
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatX2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using MatX3i = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Error taxonomy. The CLI maps these onto its documented exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

/// mt19937_64 engine with explicit output mappings. The standard distributions
/// are implementation-defined, so seeded runs would not reproduce across
/// standard libraries; these mappings keep every stream portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // splitmix64; tiny, seedable, and fully specified.
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do { x = next_u64(); } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (cached pair).
  double normal() {
    if (has_cached_) { has_cached_ = false; return cached_; }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  Vec3 uniform_vec3(double lo, double hi) {
    return Vec3(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi));
  }

 private:
  std::uint64_t state_;
  double cached_ = 0;
  bool has_cached_ = false;
};

/// Rodrigues rotation from an axis-angle vector (angle = norm, radians).
inline Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 1e-12) {
    Mat3 r = Mat3::Identity();
    // First-order term keeps tiny rotations smooth (and exactly I at zero).
    r(0, 1) = -aa.z(); r(1, 0) = aa.z();
    r(0, 2) = aa.y();  r(2, 0) = -aa.y();
    r(1, 2) = -aa.x(); r(2, 1) = aa.x();
    return r;
  }
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

/// Geodesic angle between two rotations, in radians ([0, pi]).
inline double rotation_geodesic(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) * 0.5;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

/// Affine 4x4 from rotation+translation.
inline Mat4 make_transform(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

inline Vec3 transform_point(const Mat4& m, const Vec3& p) {
  return m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>();
}

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) { lo = lo.cwiseMin(p); hi = hi.cwiseMax(p); }
  void expand(const Aabb& o) { lo = lo.cwiseMin(o.lo); hi = hi.cwiseMax(o.hi); }
  Aabb dilated(double r) const {
    Aabb out;
    out.lo = lo - Vec3::Constant(r);
    out.hi = hi + Vec3::Constant(r);
    return out;
  }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  bool valid() const { return (hi.array() >= lo.array()).all(); }
  double sq_distance(const Vec3& p) const {
    const Vec3 d = (lo - p).cwiseMax(0.0).cwiseMax(p - hi);
    return d.squaredNorm();
  }
};

}  // namespace partrf

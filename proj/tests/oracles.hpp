// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations. Everything here is written naively and
// independently of the library code paths it checks.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "partrf/common.hpp"

namespace oracle {

using partrf::Vec2;
using partrf::Vec3;

/// Nearest point on a triangle by dense barycentric grid search (plus the
/// three edges); slow but entirely geometric.
inline Vec3 grid_closest_on_triangle(const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c,
                                     int res = 200) {
  Vec3 best = a;
  double best_d = (q - a).squaredNorm();
  for (int i = 0; i <= res; ++i)
    for (int jj = 0; jj <= res - i; ++jj) {
      const double u = double(i) / res, v = double(jj) / res;
      const Vec3 p = (1 - u - v) * a + u * b + v * c;
      const double d = (q - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = p;
      }
    }
  return best;
}

/// Volume compositing reference: direct per-ray evaluation of
///   alpha_i = 1 - exp(-sigma_i dt_i), T_i = prod_{j<i}(1 - alpha_j),
///   C = sum T_i alpha_i c_i + (1 - sum T_i alpha_i) * bg.
struct CompositeRef {
  Vec3 color;
  double opacity;
  double depth;
};
inline CompositeRef composite_reference(const std::vector<double>& sigmas,
                                        const std::vector<Vec3>& colors,
                                        const std::vector<double>& deltas,
                                        const std::vector<double>& depths, const Vec3& bg) {
  CompositeRef out{Vec3::Zero(), 0.0, 0.0};
  double transmittance = 1.0;
  for (size_t i = 0; i < sigmas.size(); ++i) {
    const double alpha = 1.0 - std::exp(-sigmas[i] * deltas[i]);
    const double w = transmittance * alpha;
    out.color += w * colors[i];
    out.opacity += w;
    out.depth += w * (depths.empty() ? 0.0 : depths[i]);
    transmittance *= (1.0 - alpha);
  }
  out.color += (1.0 - out.opacity) * bg;
  return out;
}

/// Central finite difference of a scalar functional with respect to one
/// mutable parameter reached through `set`.
inline double central_difference(const std::function<void(double)>& set,
                                 const std::function<double()>& eval, double x0,
                                 double eps = 1e-4) {
  set(x0 + eps);
  const double hi = eval();
  set(x0 - eps);
  const double lo = eval();
  set(x0);
  return (hi - lo) / (2.0 * eps);
}

/// Relative-error comparison used by every gradient suite: |a-b| scaled by
/// max(1e-6, |a|, |b|).
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

/// Scalar bilinear interpolation on an R x R grid over [0,1]^2 with clamped
/// coordinates; matches the documented plane-sampling convention.
inline double bilinear_scalar(const std::function<double(int, int)>& grid, int res, double x,
                              double y) {
  const double gx = std::clamp(x, 0.0, 1.0) * (res - 1);
  const double gy = std::clamp(y, 0.0, 1.0) * (res - 1);
  const int x0 = std::min(int(gx), res - 2), y0 = std::min(int(gy), res - 2);
  const double fx = gx - x0, fy = gy - y0;
  return grid(x0, y0) * (1 - fx) * (1 - fy) + grid(x0 + 1, y0) * fx * (1 - fy) +
         grid(x0, y0 + 1) * (1 - fx) * fy + grid(x0 + 1, y0 + 1) * fx * fy;
}

}  // namespace oracle

// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#include "partrf/body.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"

namespace partrf {

namespace {

using json = nlohmann::json;

int argmax_lowest(const Eigen::Ref<const VecX>& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

std::vector<int> SkinnedBody::joint_to_part() const {
  std::vector<int> map(joint_count(), -1);
  for (int k = 0; k < part_count(); ++k)
    for (int j : part_joint_sets[k]) {
      if (j < 0 || j >= joint_count()) throw DataError("part_joint_sets: joint index out of range");
      map[j] = k;
    }
  return map;
}

double SkinnedBody::bounding_radius() const {
  if (vertices.rows() == 0) return 0.0;
  const Vec3 c = vertices.colwise().mean();
  double r2 = 0;
  for (int i = 0; i < vertices.rows(); ++i)
    r2 = std::max(r2, (Vec3(vertices.row(i)) - c).squaredNorm());
  return std::sqrt(r2);
}

Aabb SkinnedBody::rest_bounds() const {
  Aabb box;
  for (int i = 0; i < vertices.rows(); ++i) box.expand(vertices.row(i));
  return box;
}

void SkinnedBody::validate() const {
  const int n = vertex_count(), j = joint_count(), k = part_count();
  if (n == 0) throw DataError("vertices: empty mesh");
  if (j == 0) throw DataError("joint_parents: no joints");
  if (blend_weights.rows() != n || blend_weights.cols() != j)
    throw DataError("blend_weights: shape mismatch");
  if (uv_coords.rows() != n) throw DataError("uv_coords: shape mismatch");
  if (int(part_labels.size()) != n) throw DataError("part_labels: size mismatch");
  if (joint_rest_positions.rows() != j) throw DataError("joint_rest_positions: shape mismatch");
  if (part_names.size() != part_joint_sets.size()) throw DataError("part_names: size mismatch");

  int roots = 0;
  for (int a = 0; a < j; ++a) {
    const int p = joint_parents[a];
    if (p == -1) { ++roots; continue; }
    if (p < 0 || p >= j || p == a) throw DataError("joint_parents: invalid parent index");
    // Walk to a root; more than J steps means a cycle.
    int cur = a;
    for (int steps = 0; steps <= j; ++steps) {
      cur = joint_parents[cur];
      if (cur == -1) break;
      if (steps == j) throw DataError("joint_parents: cycle detected");
    }
  }
  if (roots != 1) throw DataError("joint_parents: expected exactly one root (-1)");

  std::vector<int> seen(j, 0);
  for (const auto& set : part_joint_sets)
    for (int jj : set) {
      if (jj < 0 || jj >= j) throw DataError("part_joint_sets: joint index out of range");
      if (seen[jj]++) throw DataError("part_joint_sets: joint assigned to multiple parts");
    }
  if (std::accumulate(seen.begin(), seen.end(), 0) != j)
    throw DataError("part_joint_sets: joints not fully covered");

  for (int i = 0; i < n; ++i) {
    double sum = 0;
    for (int a = 0; a < j; ++a) {
      const double w = blend_weights(i, a);
      if (w < 0) throw DataError("blend_weights: negative entry at row " + std::to_string(i));
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw DataError("blend_weights: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    if (uv_coords(i, 0) < 0 || uv_coords(i, 0) > 1 || uv_coords(i, 1) < 0 || uv_coords(i, 1) > 1)
      throw DataError("uv_coords: out of [0,1]^2 at row " + std::to_string(i));
  }

  for (int f = 0; f < faces.rows(); ++f)
    for (int c = 0; c < 3; ++c)
      if (faces(f, c) < 0 || faces(f, c) >= n)
        throw DataError("faces: vertex index out of range at face " + std::to_string(f));

  const auto expected = segment_parts(blend_weights, joint_to_part());
  for (int i = 0; i < n; ++i)
    if (part_labels[i] != expected[i])
      throw DataError("part_labels: row " + std::to_string(i) +
                      " does not match dominant-joint assignment");
  if (k == 0) throw DataError("part_joint_sets: no parts");
}

void Pose::validate(int joints) const {
  if (joint_rotations.rows() != joints) throw DataError("pose: joint_rotations shape mismatch");
  for (int a = 0; a < joints; ++a)
    if (Vec3(joint_rotations.row(a)).norm() >= M_PI + 1e-6)
      throw DataError("pose: axis-angle magnitude out of canonical range at joint " +
                      std::to_string(a));
  if (time < -1e-9 || time > 1 + 1e-9) throw DataError("pose: time outside [0,1]");
}

std::vector<int> segment_parts(const MatX& weights, const std::vector<int>& joint_to_part) {
  if (int(joint_to_part.size()) != weights.cols())
    throw std::invalid_argument("segment_parts: joint_to_part must cover all joints");
  std::vector<int> labels(weights.rows());
  for (int i = 0; i < weights.rows(); ++i)
    labels[i] = joint_to_part[argmax_lowest(weights.row(i).transpose())];
  return labels;
}

// ---------------------------------------------------------------------------
// Forward kinematics and LBS

std::vector<Mat4> skinning_transforms(const SkinnedBody& body, const Pose& pose) {
  const int j = body.joint_count();
  pose.validate(j);
  std::vector<Mat4> world(j), skin(j);
  for (int a = 0; a < j; ++a) {
    const Vec3 rest = body.joint_rest_positions.row(a);
    const Mat3 r = axis_angle_to_matrix(pose.joint_rotations.row(a));
    const int p = body.joint_parents[a];
    if (p < 0) {
      world[a] = make_transform(r, rest + pose.root_translation);
    } else {
      const Vec3 offset = rest - Vec3(body.joint_rest_positions.row(p));
      world[a] = world[p] * make_transform(r, offset);
    }
    skin[a] = world[a] * make_transform(Mat3::Identity(), -rest);
  }
  return skin;
}

namespace {

Mat4 blended_matrix(const std::vector<Mat4>& transforms, const Eigen::Ref<const VecX>& weights) {
  Mat4 g = Mat4::Zero();
  for (int a = 0; a < weights.size(); ++a)
    if (weights[a] != 0.0) g += weights[a] * transforms[a];
  return g;
}

Vec3 apply_blend(const Mat4& g, LbsDirection direction, const Vec3& point) {
  if (direction == LbsDirection::kForward) return transform_point(g, point);
  const Mat3 r = g.topLeftCorner<3, 3>();
  if (std::abs(r.determinant()) < 1e-9)
    throw NumericError("lbs_transform: blended skinning matrix is singular");
  return r.inverse() * (point - g.topRightCorner<3, 1>());
}

}  // namespace

Vec3 lbs_transform_point(const SkinnedBody& body, const std::vector<Mat4>& transforms,
                         LbsDirection direction, const Vec3& point, const VecX& weights) {
  (void)body;
  return apply_blend(blended_matrix(transforms, weights), direction, point);
}

MatX3 lbs_transform(const SkinnedBody& body, const Pose& pose, LbsDirection direction,
                    const MatX3& points, const MatX& point_weights) {
  if (points.rows() != point_weights.rows())
    throw std::invalid_argument("lbs_transform: points/weights row mismatch");
  if (point_weights.cols() != body.joint_count())
    throw std::invalid_argument("lbs_transform: weight columns must equal joint count");
  const auto transforms = skinning_transforms(body, pose);
  MatX3 out(points.rows(), 3);
  for (int i = 0; i < points.rows(); ++i)
    out.row(i) =
        apply_blend(blended_matrix(transforms, point_weights.row(i).transpose()), direction,
                    Vec3(points.row(i)))
            .transpose();
  return out;
}

MatX3 pose_vertices(const SkinnedBody& body, const Pose& pose) {
  return lbs_transform(body, pose, LbsDirection::kForward, body.vertices, body.blend_weights);
}

// ---------------------------------------------------------------------------
// Closest point on triangle with barycentric Jacobian

namespace {

struct TriClosest {
  Vec3 point;
  Vec3 bary;
  double sq_distance;
  Mat3 dbary_dx;  // rows: d(bary_i)/dx
};

TriClosest tri_vertex_case(const Vec3& v, int corner) {
  TriClosest r;
  r.point = v;
  r.bary = Vec3::Zero();
  r.bary[corner] = 1.0;
  r.dbary_dx.setZero();
  r.sq_distance = 0;  // caller fills
  return r;
}

TriClosest tri_edge_case(const Vec3& x, const Vec3& p, const Vec3& q, int ip, int iq) {
  const Vec3 e = q - p;
  const double ee = e.squaredNorm();
  const double t = e.dot(x - p) / ee;
  TriClosest r;
  r.point = p + t * e;
  r.bary = Vec3::Zero();
  r.bary[ip] = 1.0 - t;
  r.bary[iq] = t;
  r.dbary_dx.setZero();
  r.dbary_dx.row(iq) = e.transpose() / ee;
  r.dbary_dx.row(ip) = -e.transpose() / ee;
  return r;
}

TriClosest closest_point_triangle(const Vec3& x, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5, extended with the exact
  // piecewise-affine Jacobian of the barycentric coordinates per region.
  const Vec3 ab = b - a, ac = c - a;
  const Vec3 ax = x - a;
  const double d1 = ab.dot(ax), d2 = ac.dot(ax);
  TriClosest r;
  if (d1 <= 0 && d2 <= 0) {
    r = tri_vertex_case(a, 0);
  } else {
    const Vec3 bx = x - b;
    const double d3 = ab.dot(bx), d4 = ac.dot(bx);
    if (d3 >= 0 && d4 <= d3) {
      r = tri_vertex_case(b, 1);
    } else {
      const double vc = d1 * d4 - d3 * d2;
      if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        r = tri_edge_case(x, a, b, 0, 1);
      } else {
        const Vec3 cx = x - c;
        const double d5 = ab.dot(cx), d6 = ac.dot(cx);
        if (d6 >= 0 && d5 <= d6) {
          r = tri_vertex_case(c, 2);
        } else {
          const double vb = d5 * d2 - d1 * d6;
          if (vb <= 0 && d2 >= 0 && d6 <= 0) {
            r = tri_edge_case(x, a, c, 0, 2);
          } else {
            const double va = d3 * d6 - d5 * d4;
            if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
              r = tri_edge_case(x, b, c, 1, 2);
            } else {
              // Face interior: project onto the triangle plane, then solve the
              // 2x2 barycentric system; both maps are affine in x.
              const Vec3 n = ab.cross(ac);
              const double nn = n.squaredNorm();
              const Mat3 dp_dx = Mat3::Identity() - (n * n.transpose()) / nn;
              const Vec3 p = x - n * (n.dot(ax) / nn);
              const Vec3 ap = p - a;
              const double d00 = ab.squaredNorm(), d01 = ab.dot(ac), d11 = ac.squaredNorm();
              const double dp0 = ap.dot(ab), dp1 = ap.dot(ac);
              const double denom = d00 * d11 - d01 * d01;
              const double v = (d11 * dp0 - d01 * dp1) / denom;
              const double w = (d00 * dp1 - d01 * dp0) / denom;
              r.point = p;
              r.bary = Vec3(1.0 - v - w, v, w);
              const Eigen::RowVector3d dv_dp = (d11 * ab - d01 * ac).transpose() / denom;
              const Eigen::RowVector3d dw_dp = (d00 * ac - d01 * ab).transpose() / denom;
              r.dbary_dx.row(1) = dv_dp * dp_dx;
              r.dbary_dx.row(2) = dw_dp * dp_dx;
              r.dbary_dx.row(0) = -(r.dbary_dx.row(1) + r.dbary_dx.row(2));
            }
          }
        }
      }
    }
  }
  r.sq_distance = (x - r.point).squaredNorm();
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// MeshBvh

MeshBvh::MeshBvh(const MatX3& vertices, const MatX3i& faces) {
  vertex_copy_ = vertices;
  verts_ = vertex_copy_.data();
  tri_count_ = int(faces.rows());
  tris_.resize(tri_count_);
  centroids_.resize(tri_count_);
  order_.resize(tri_count_);
  for (int f = 0; f < tri_count_; ++f) {
    tris_[f] = {faces(f, 0), faces(f, 1), faces(f, 2)};
    centroids_[f] = (Vec3(vertices.row(tris_[f][0])) + Vec3(vertices.row(tris_[f][1])) +
                     Vec3(vertices.row(tris_[f][2]))) /
                    3.0;
    order_[f] = f;
  }
  if (tri_count_ > 0) {
    nodes_.reserve(2 * tri_count_);
    build(0, tri_count_, 0);
  }
}

int MeshBvh::build(int first, int count, int depth) {
  const int idx = int(nodes_.size());
  nodes_.emplace_back();
  Aabb box;
  for (int i = first; i < first + count; ++i)
    for (int c : tris_[order_[i]]) box.expand(Vec3(vertex_copy_.row(c)));
  nodes_[idx].box = box;
  if (count <= 4 || depth > 40) {
    nodes_[idx].first = first;
    nodes_[idx].count = count;
    return idx;
  }
  int axis;
  box.extent().maxCoeff(&axis);
  const int mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](int l, int r) { return centroids_[l][axis] < centroids_[r][axis]; });
  const int left = build(first, mid - first, depth + 1);
  const int right = build(mid, first + count - mid, depth + 1);
  nodes_[idx].left = left;
  nodes_[idx].right = right;
  nodes_[idx].count = 0;
  return idx;
}

void MeshBvh::nearest_rec(int node, const Vec3& q, Hit& best) const {
  const Node& n = nodes_[node];
  if (n.box.sq_distance(q) >= best.distance * best.distance) return;
  if (n.count > 0) {
    for (int i = n.first; i < n.first + n.count; ++i) {
      const int f = order_[i];
      const auto& t = tris_[f];
      const auto r = closest_point_triangle(q, Vec3(vertex_copy_.row(t[0])),
                                            Vec3(vertex_copy_.row(t[1])),
                                            Vec3(vertex_copy_.row(t[2])));
      const double d = std::sqrt(r.sq_distance);
      if (d < best.distance) {
        best.distance = d;
        best.face = f;
        best.closest = r.point;
        best.barycentric = r.bary;
      }
    }
    return;
  }
  const double dl = nodes_[n.left].box.sq_distance(q);
  const double dr = nodes_[n.right].box.sq_distance(q);
  if (dl < dr) {
    nearest_rec(n.left, q, best);
    nearest_rec(n.right, q, best);
  } else {
    nearest_rec(n.right, q, best);
    nearest_rec(n.left, q, best);
  }
}

MeshBvh::Hit MeshBvh::nearest(const Vec3& query) const {
  Hit best;
  if (tri_count_ == 0) return best;
  nearest_rec(0, query, best);
  return best;
}

std::optional<std::pair<double, double>> MeshBvh::ray_aabb(const Vec3& origin, const Vec3& dir,
                                                           double dilation) const {
  if (nodes_.empty()) return std::nullopt;
  const Aabb box = nodes_[0].box.dilated(dilation);
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - origin[a]) / dir[a];
    double tb = (box.hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

// ---------------------------------------------------------------------------
// Nearest-surface lookup

SurfaceQuery nearest_surface_weights(const SkinnedBody& body, const MatX3& posed_vertices,
                                     const Vec3& query, const MeshBvh* index,
                                     const std::vector<int>* joint_to_part_map) {
  if (posed_vertices.rows() == 0 || body.faces.rows() == 0)
    throw DataError("nearest_surface_weights: empty mesh");

  MeshBvh::Hit hit;
  Mat3 dbary;
  if (index) {
    hit = index->nearest(query);
    const auto& f = body.faces;
    const auto r = closest_point_triangle(query, Vec3(posed_vertices.row(f(hit.face, 0))),
                                          Vec3(posed_vertices.row(f(hit.face, 1))),
                                          Vec3(posed_vertices.row(f(hit.face, 2))));
    dbary = r.dbary_dx;
  } else {
    double best = std::numeric_limits<double>::infinity();
    TriClosest best_r{};
    int best_f = -1;
    for (int f = 0; f < body.faces.rows(); ++f) {
      const auto r = closest_point_triangle(query, Vec3(posed_vertices.row(body.faces(f, 0))),
                                            Vec3(posed_vertices.row(body.faces(f, 1))),
                                            Vec3(posed_vertices.row(body.faces(f, 2))));
      if (r.sq_distance < best) {
        best = r.sq_distance;
        best_r = r;
        best_f = f;
      }
    }
    hit.face = best_f;
    hit.closest = best_r.point;
    hit.barycentric = best_r.bary;
    hit.distance = std::sqrt(best);
    dbary = best_r.dbary_dx;
  }

  SurfaceQuery out;
  out.face = hit.face;
  out.closest = hit.closest;
  out.distance = hit.distance;

  const int i0 = body.faces(hit.face, 0), i1 = body.faces(hit.face, 1), i2 = body.faces(hit.face, 2);
  const Vec3& bc = hit.barycentric;

  out.uv = bc[0] * Vec2(body.uv_coords.row(i0)) + bc[1] * Vec2(body.uv_coords.row(i1)) +
           bc[2] * Vec2(body.uv_coords.row(i2));
  out.duv_dx = Vec2(body.uv_coords.row(i0)) * dbary.row(0) +
               Vec2(body.uv_coords.row(i1)) * dbary.row(1) +
               Vec2(body.uv_coords.row(i2)) * dbary.row(2);

  out.weights = bc[0] * body.blend_weights.row(i0).transpose() +
                bc[1] * body.blend_weights.row(i1).transpose() +
                bc[2] * body.blend_weights.row(i2).transpose();
  out.dweights_dx = body.blend_weights.row(i0).transpose() * dbary.row(0) +
                    body.blend_weights.row(i1).transpose() * dbary.row(1) +
                    body.blend_weights.row(i2).transpose() * dbary.row(2);

  // Rows are stochastic and barycentric coords sum to 1, so the sum is already
  // 1 up to rounding; renormalize to pin it exactly.
  const double sum = out.weights.sum();
  if (sum > 0) out.weights /= sum;

  if (joint_to_part_map) {
    out.part = (*joint_to_part_map)[size_t(argmax_lowest(out.weights))];
  } else {
    const auto j2p = body.joint_to_part();
    out.part = j2p[size_t(argmax_lowest(out.weights))];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Procedural toy body

namespace {

struct JointDef {
  std::string name;
  std::string parent;
  Vec3 pos;
  int part;        // 0 torso, 1 legs, 2 head, 3 left arm, 4 right arm
  Vec3 bone_tail;  // capsule endpoint owned by this joint
  double radius;
};

struct CapsuleChart {
  Vec2 lo, size;
};

void append_capsule(const Vec3& p0, const Vec3& p1, double radius, const BodySpec& spec,
                    const CapsuleChart& chart, std::vector<Vec3>& verts, std::vector<Vec2>& uvs,
                    std::vector<std::array<int, 3>>& faces) {
  const Vec3 axis = p1 - p0;
  const double len = axis.norm();
  const Vec3 w = len > 1e-12 ? Vec3(axis / len) : Vec3(0, 1, 0);
  const Vec3 u = w.unitOrthogonal();
  const Vec3 v = w.cross(u);

  const int rings = std::max(3, spec.rings);
  const int nseg = std::max(1, int(std::lround(len / spec.segment_length)));
  const int ncap = std::max(2, rings / 4);
  const double profile_len = len + M_PI * radius;  // unrolled pole-to-pole arc length

  // Ring ladder: bottom pole, bottom cap arcs, cylinder rings, top cap arcs, top pole.
  struct Ring {
    Vec3 center;
    double r;
    double vcoord;
  };
  std::vector<Ring> ladder;
  for (int i = 1; i < ncap; ++i) {
    const double phi = (M_PI / 2.0) * (double(i) / ncap);
    ladder.push_back({p0 - w * (radius * std::cos(phi)), radius * std::sin(phi),
                      (radius * phi) / profile_len});
  }
  for (int i = 0; i <= nseg; ++i) {
    const double z = len * double(i) / nseg;
    ladder.push_back({p0 + w * z, radius, (radius * M_PI / 2 + z) / profile_len});
  }
  for (int i = ncap - 1; i >= 1; --i) {
    const double phi = (M_PI / 2.0) * (double(i) / ncap);
    ladder.push_back({p1 + w * (radius * std::cos(phi)), radius * std::sin(phi),
                      (profile_len - radius * phi) / profile_len});
  }

  const int base = int(verts.size());
  auto chart_uv = [&](double lu, double lv) {
    return Vec2(chart.lo + chart.size.cwiseProduct(Vec2(lu, lv)));
  };

  // Poles first.
  verts.push_back(p0 - w * radius);
  uvs.push_back(chart_uv(0.5, 0.0));
  verts.push_back(p1 + w * radius);
  uvs.push_back(chart_uv(0.5, 1.0));

  const int ring_verts = rings + 1;  // seam duplicated for a clean chart
  for (const auto& ring : ladder)
    for (int s = 0; s <= rings; ++s) {
      const double a = 2.0 * M_PI * double(s) / rings;
      verts.push_back(ring.center + ring.r * (u * std::cos(a) + v * std::sin(a)));
      uvs.push_back(chart_uv(double(s) / rings, ring.vcoord));
    }

  auto rv = [&](int ring, int s) { return base + 2 + ring * ring_verts + s; };
  const int nrings = int(ladder.size());
  for (int s = 0; s < rings; ++s) {
    faces.push_back({base + 0, rv(0, s + 1), rv(0, s)});
    faces.push_back({base + 1, rv(nrings - 1, s), rv(nrings - 1, s + 1)});
  }
  for (int r = 0; r + 1 < nrings; ++r)
    for (int s = 0; s < rings; ++s) {
      faces.push_back({rv(r, s), rv(r, s + 1), rv(r + 1, s)});
      faces.push_back({rv(r + 1, s), rv(r, s + 1), rv(r + 1, s + 1)});
    }
}

double point_segment_distance(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 e = b - a;
  const double ee = e.squaredNorm();
  const double t = ee > 1e-18 ? std::clamp(e.dot(x - a) / ee, 0.0, 1.0) : 0.0;
  return (x - (a + t * e)).norm();
}

}  // namespace

SkinnedBody build_toy_body(const BodySpec& spec) {
  if (spec.joints < 6)
    throw ConfigError("body spec: at least 6 joints are required to form 5 parts");

  const double s = spec.height / 1.7;
  const double rl = spec.limb_radius * s;
  const double rt = spec.torso_radius * s;
  const double rh = spec.head_radius * s;

  std::vector<JointDef> defs;
  auto add = [&](const std::string& name, const std::string& parent, Vec3 pos, int part,
                 Vec3 tail, double radius) {
    defs.push_back({name, parent, pos * s, part, tail * s, radius});
  };

  const bool full = spec.joints >= 16;
  // The full template carries one spine link by itself; extra joints beyond
  // either base template subdivide the pelvis->chest chain further.
  const int links = full ? spec.joints - 15 : spec.joints - 6;

  const Vec3 pelvis_pos(0, 0.95, 0), chest_pos(0, 1.30, 0);
  std::vector<std::pair<std::string, Vec3>> chain = {{"pelvis", pelvis_pos}};
  for (int i = 0; i < links; ++i) {
    const double t = double(i + 1) / (links + 1);
    chain.push_back({"spine" + std::to_string(i), pelvis_pos + t * (chest_pos - pelvis_pos)});
  }
  chain.push_back({"chest", chest_pos});
  for (size_t i = 0; i + 1 < chain.size(); ++i)
    add(chain[i].first, i == 0 ? "" : chain[i - 1].first, chain[i].second, 0,
        chain[i + 1].second, rt * (i == 0 ? 1.0 : 0.95));
  add("chest", chain[chain.size() - 2].first, chest_pos, 0, {0, 1.44, 0}, rt);

  add("head", "chest", {0, 1.46, 0}, 2, {0, 1.64, 0}, rh);
  if (full) {
    add("l_shoulder", "chest", {0.17, 1.38, 0}, 3, {0.45, 1.38, 0}, rl);
    add("l_elbow", "l_shoulder", {0.45, 1.38, 0}, 3, {0.70, 1.38, 0}, rl * 0.9);
    add("l_wrist", "l_elbow", {0.70, 1.38, 0}, 3, {0.82, 1.38, 0}, rl * 0.8);
    add("r_shoulder", "chest", {-0.17, 1.38, 0}, 4, {-0.45, 1.38, 0}, rl);
    add("r_elbow", "r_shoulder", {-0.45, 1.38, 0}, 4, {-0.70, 1.38, 0}, rl * 0.9);
    add("r_wrist", "r_elbow", {-0.70, 1.38, 0}, 4, {-0.82, 1.38, 0}, rl * 0.8);
    add("l_hip", "pelvis", {0.10, 0.92, 0}, 1, {0.10, 0.52, 0}, rl * 1.2);
    add("l_knee", "l_hip", {0.10, 0.52, 0}, 1, {0.10, 0.12, 0}, rl * 1.05);
    add("l_ankle", "l_knee", {0.10, 0.12, 0}, 1, {0.10, 0.05, 0.14}, rl * 0.85);
    add("r_hip", "pelvis", {-0.10, 0.92, 0}, 1, {-0.10, 0.52, 0}, rl * 1.2);
    add("r_knee", "r_hip", {-0.10, 0.52, 0}, 1, {-0.10, 0.12, 0}, rl * 1.05);
    add("r_ankle", "r_knee", {-0.10, 0.12, 0}, 1, {-0.10, 0.05, 0.14}, rl * 0.85);
  } else {
    add("l_arm", "chest", {0.17, 1.38, 0}, 3, {0.72, 1.38, 0}, rl);
    add("r_arm", "chest", {-0.17, 1.38, 0}, 4, {-0.72, 1.38, 0}, rl);
    add("legs", "pelvis", {0, 0.88, 0}, 1, {0, 0.08, 0}, rl * 1.7);
  }

  std::map<std::string, int> index;
  for (int i = 0; i < int(defs.size()); ++i) index[defs[i].name] = i;
  const int j = int(defs.size());

  SkinnedBody body;
  body.joint_parents.resize(j);
  body.joint_rest_positions.resize(j, 3);
  body.part_names = {"torso", "legs", "head", "left_arm", "right_arm"};
  body.part_joint_sets.assign(5, {});
  for (int i = 0; i < j; ++i) {
    body.joint_parents[i] = defs[i].parent.empty() ? -1 : index.at(defs[i].parent);
    body.joint_rest_positions.row(i) = defs[i].pos.transpose();
    body.part_joint_sets[defs[i].part].push_back(i);
  }

  // One UV chart per bone, packed on a grid with 2-texel (2/256) gutters.
  const int cols = int(std::ceil(std::sqrt(double(j))));
  const int rows = (j + cols - 1) / cols;
  const double gutter = 2.0 / 256.0;

  std::vector<Vec3> verts;
  std::vector<Vec2> uvs;
  std::vector<std::array<int, 3>> faces;
  for (int i = 0; i < j; ++i) {
    CapsuleChart chart;
    const int cx = i % cols, cy = i / cols;
    const Vec2 cell(1.0 / cols, 1.0 / rows);
    chart.lo = Vec2(cx * cell.x() + gutter, cy * cell.y() + gutter);
    chart.size = cell - Vec2(2 * gutter, 2 * gutter);
    append_capsule(defs[i].pos, defs[i].bone_tail, defs[i].radius, spec, chart, verts, uvs, faces);
  }

  const int n = int(verts.size());
  body.vertices.resize(n, 3);
  body.uv_coords.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    body.vertices.row(i) = verts[i].transpose();
    body.uv_coords.row(i) = uvs[i].transpose();
  }
  body.faces.resize(int(faces.size()), 3);
  for (int f = 0; f < int(faces.size()); ++f)
    body.faces.row(f) << faces[f][0], faces[f][1], faces[f][2];

  // Smooth weights: inverse-square falloff to the two nearest bones.
  body.blend_weights = MatX::Zero(n, j);
  const double eps = 0.01 * s;
  for (int i = 0; i < n; ++i) {
    int b0 = -1, b1 = -1;
    double d0 = 1e30, d1 = 1e30;
    for (int a = 0; a < j; ++a) {
      const double d = point_segment_distance(verts[i], defs[a].pos, defs[a].bone_tail);
      if (d < d0) {
        d1 = d0; b1 = b0;
        d0 = d; b0 = a;
      } else if (d < d1) {
        d1 = d; b1 = a;
      }
    }
    const double w0 = 1.0 / ((d0 + eps) * (d0 + eps));
    const double w1 = b1 >= 0 ? 1.0 / ((d1 + eps) * (d1 + eps)) : 0.0;
    body.blend_weights(i, b0) = w0 / (w0 + w1);
    if (b1 >= 0) body.blend_weights(i, b1) = w1 / (w0 + w1);
  }

  body.part_labels = segment_parts(body.blend_weights, body.joint_to_part());
  body.validate();
  return body;
}

// ---------------------------------------------------------------------------
// Serialization: <prefix>.json + <prefix>.bin
// Binary layout, little-endian, in order:
//   float32 vertices[N*3], float32 blend_weights[N*J], float32 uv[N*2],
//   int32 faces[F*3], int32 part_labels[N]

namespace {

std::string bin_path_for(const std::string& json_path) {
  std::string p = json_path;
  const auto dot = p.rfind(".json");
  if (dot != std::string::npos) p = p.substr(0, dot);
  return p + ".bin";
}

void write_f32(std::ofstream& os, const double* data, size_t count) {
  std::vector<float> buf(count);
  for (size_t i = 0; i < count; ++i) buf[i] = float(data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(count * 4));
}

void write_i32(std::ofstream& os, const int* data, size_t count) {
  os.write(reinterpret_cast<const char*>(data), std::streamsize(count * 4));
}

}  // namespace

void save_skinned_body(const SkinnedBody& body, const std::string& json_path) {
  body.validate();
  const int n = body.vertex_count(), j = body.joint_count(), f = body.face_count();

  // Quantize weights to float32 with the row sum pinned: after rounding every
  // entry, the largest entry is recomputed as 1 - (sum of the others), which
  // makes the operation idempotent and keeps rows stochastic within 1e-6.
  MatX qw = body.blend_weights;
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    double rest = 0;
    for (int a = 0; a < j; ++a) {
      qw(i, a) = double(float(qw(i, a)));
      if (qw(i, a) > qw(i, arg)) arg = a;
    }
    for (int a = 0; a < j; ++a)
      if (a != arg) rest += qw(i, a);
    qw(i, arg) = double(float(1.0 - rest));
  }

  json meta;
  meta["format"] = "partrf-body";
  meta["version"] = 1;
  meta["counts"] = {{"vertices", n}, {"joints", j}, {"faces", f}, {"parts", body.part_count()}};
  meta["joint_parents"] = body.joint_parents;
  meta["part_names"] = body.part_names;
  meta["part_joint_sets"] = body.part_joint_sets;
  json jr = json::array();
  for (int a = 0; a < j; ++a)
    jr.push_back({body.joint_rest_positions(a, 0), body.joint_rest_positions(a, 1),
                  body.joint_rest_positions(a, 2)});
  meta["joint_rest_positions"] = jr;
  meta["binary"] = bin_path_for(json_path).substr(bin_path_for(json_path).rfind('/') + 1);

  std::ofstream js(json_path);
  if (!js) throw DataError("save_skinned_body: cannot write " + json_path);
  js << meta.dump(2) << "\n";

  std::ofstream bs(bin_path_for(json_path), std::ios::binary);
  if (!bs) throw DataError("save_skinned_body: cannot write " + bin_path_for(json_path));
  MatX3 qv = body.vertices;
  MatX2 quv = body.uv_coords;
  write_f32(bs, qv.data(), size_t(n) * 3);
  {
    // weights are stored row-major
    std::vector<float> buf(size_t(n) * j);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < j; ++a) buf[size_t(i) * j + a] = float(qw(i, a));
    bs.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  }
  write_f32(bs, quv.data(), size_t(n) * 2);
  write_i32(bs, body.faces.data(), size_t(f) * 3);
  write_i32(bs, body.part_labels.data(), size_t(n));
}

SkinnedBody load_skinned_body(const std::string& json_path) {
  std::ifstream js(json_path);
  if (!js) throw DataError("load_skinned_body: cannot open " + json_path);
  json meta;
  try {
    meta = json::parse(js);
  } catch (const std::exception& e) {
    throw DataError(std::string("load_skinned_body: bad json: ") + e.what());
  }

  auto require = [&](const char* key) {
    if (!meta.contains(key)) throw DataError(std::string("body.json: missing field '") + key + "'");
  };
  require("format");
  require("version");
  require("counts");
  require("joint_parents");
  require("part_joint_sets");
  require("part_names");
  require("joint_rest_positions");
  require("binary");
  if (meta["format"] != "partrf-body") throw DataError("body.json: format is not 'partrf-body'");
  if (meta["version"] != 1) throw DataError("body.json: unsupported version");

  for (const char* key : {"vertices", "joints", "faces", "parts"})
    if (!meta["counts"].contains(key))
      throw DataError(std::string("body.json: counts missing '") + key + "'");
  const int n = meta["counts"]["vertices"], j = meta["counts"]["joints"];
  const int f = meta["counts"]["faces"], k = meta["counts"]["parts"];
  if (n <= 0 || j <= 0 || f < 0 || k <= 0) throw DataError("body.json: nonpositive counts");

  SkinnedBody body;
  body.joint_parents = meta["joint_parents"].get<std::vector<int>>();
  body.part_joint_sets = meta["part_joint_sets"].get<std::vector<std::vector<int>>>();
  body.part_names = meta["part_names"].get<std::vector<std::string>>();
  if (int(body.joint_parents.size()) != j) throw DataError("body.json: joint_parents length mismatch");
  if (int(body.part_joint_sets.size()) != k) throw DataError("body.json: part_joint_sets length mismatch");
  body.joint_rest_positions.resize(j, 3);
  const auto& jr = meta["joint_rest_positions"];
  if (int(jr.size()) != j) throw DataError("body.json: joint_rest_positions length mismatch");
  for (int a = 0; a < j; ++a)
    for (int c = 0; c < 3; ++c) body.joint_rest_positions(a, c) = jr[a][c].get<double>();

  const std::string bin = bin_path_for(json_path);
  std::ifstream bs(bin, std::ios::binary);
  if (!bs) throw DataError("load_skinned_body: cannot open " + bin);

  auto read_f32 = [&](size_t count, const char* field) {
    std::vector<float> buf(count);
    bs.read(reinterpret_cast<char*>(buf.data()), std::streamsize(count * 4));
    if (!bs) throw DataError(std::string("body.bin: truncated reading ") + field);
    return buf;
  };
  auto read_i32 = [&](size_t count, const char* field) {
    std::vector<int> buf(count);
    bs.read(reinterpret_cast<char*>(buf.data()), std::streamsize(count * 4));
    if (!bs) throw DataError(std::string("body.bin: truncated reading ") + field);
    return buf;
  };

  const auto v = read_f32(size_t(n) * 3, "vertices");
  const auto w = read_f32(size_t(n) * j, "blend_weights");
  const auto uv = read_f32(size_t(n) * 2, "uv_coords");
  const auto fc = read_i32(size_t(f) * 3, "faces");
  const auto lb = read_i32(size_t(n), "part_labels");
  char extra;
  if (bs.read(&extra, 1)) throw DataError("body.bin: trailing bytes");

  body.vertices.resize(n, 3);
  body.blend_weights.resize(n, j);
  body.uv_coords.resize(n, 2);
  body.faces.resize(f, 3);
  body.part_labels.assign(lb.begin(), lb.end());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) body.vertices(i, c) = v[size_t(i) * 3 + c];
    for (int a = 0; a < j; ++a) body.blend_weights(i, a) = w[size_t(i) * j + a];
    for (int c = 0; c < 2; ++c) body.uv_coords(i, c) = uv[size_t(i) * 2 + c];
  }
  for (int ff = 0; ff < f; ++ff)
    for (int c = 0; c < 3; ++c) body.faces(ff, c) = fc[size_t(ff) * 3 + c];

  body.validate();
  return body;
}

const std::vector<int>& smpl24_parents() {
  static const std::vector<int> parents = {-1, 0, 0, 0,  1,  2,  3,  4,  5,  6,  7,  8,
                                           9,  9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  return parents;
}

const std::vector<std::vector<int>>& smpl24_part_joint_sets() {
  // torso, legs, head, left arm, right arm
  static const std::vector<std::vector<int>> sets = {
      {0, 3, 6, 9, 13, 14}, {1, 2, 4, 5, 7, 8, 10, 11}, {12, 15}, {16, 18, 20, 22},
      {17, 19, 21, 23}};
  return sets;
}

}  // namespace partrf

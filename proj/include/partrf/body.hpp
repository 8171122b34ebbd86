// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "partrf/common.hpp"

namespace partrf {

/// Parametric skinned body: rest mesh, skeleton, blend weights, UV atlas and
/// the five-part segmentation (torso, legs, head, left arm, right arm).
struct SkinnedBody {
  MatX3 vertices;                                // N x 3, rest pose, meters
  MatX3i faces;                                  // F x 3
  MatX blend_weights;                            // N x J, row-stochastic
  std::vector<int> joint_parents;                // J, root = -1
  MatX3 joint_rest_positions;                    // J x 3
  MatX2 uv_coords;                               // N x 2 in [0,1]^2
  std::vector<int> part_labels;                  // N, values in [0, K)
  std::vector<std::vector<int>> part_joint_sets; // K disjoint sets covering all joints
  std::vector<std::string> part_names;           // K

  int vertex_count() const { return int(vertices.rows()); }
  int face_count() const { return int(faces.rows()); }
  int joint_count() const { return int(joint_parents.size()); }
  int part_count() const { return int(part_joint_sets.size()); }

  /// Joint index -> part index, derived from part_joint_sets.
  std::vector<int> joint_to_part() const;

  /// Radius of the rest-pose bounding sphere around the centroid.
  double bounding_radius() const;

  Aabb rest_bounds() const;

  /// Checks every type invariant; throws DataError naming the offending field.
  void validate() const;
};

/// Per-frame articulation: axis-angle per joint, root offset, normalized time.
struct Pose {
  MatX3 joint_rotations;         // J x 3 axis-angle, |aa| < pi + eps
  Vec3 root_translation = Vec3::Zero();
  double time = 0.0;             // in [0, 1], monotone in frame order
  int frame_index = 0;

  static Pose rest(int joints) {
    Pose p;
    p.joint_rotations = MatX3::Zero(joints, 3);
    return p;
  }
  void validate(int joints) const;
};

/// Parameters for the procedural capsule-limb figure.
struct BodySpec {
  int joints = 16;               // >= 6; extras extend the spine chain
  int rings = 12;                // radial segments per capsule
  double segment_length = 0.06;  // target axial spacing (controls vertex count)
  double height = 1.7;           // overall figure height, meters
  double limb_radius = 0.05;
  double torso_radius = 0.11;
  double head_radius = 0.09;
};

/// Builds the procedural toy body: capsule per bone, smooth two-bone
/// distance-falloff blend weights, per-limb cylindrical UV charts packed into
/// [0,1]^2 with 2-texel gutters, K=5 parts.
SkinnedBody build_toy_body(const BodySpec& spec = {});

/// Reads `<prefix>.json` + the binary blob it references. Validates all type
/// invariants and rejects files that violate them.
SkinnedBody load_skinned_body(const std::string& json_path);

/// Writes `<prefix>.json` + `<prefix>.bin`. Arrays are stored little-endian
/// float32/int32 in the documented order; save/load round-trips bit-exactly.
void save_skinned_body(const SkinnedBody& body, const std::string& json_path);

/// label[i] = joint_to_part[argmax_j weights(i,j)], ties to the lowest joint index.
std::vector<int> segment_parts(const MatX& weights, const std::vector<int>& joint_to_part);

/// Per-joint skinning matrices T_j = A_j(pose) * A_j(rest)^-1.
std::vector<Mat4> skinning_transforms(const SkinnedBody& body, const Pose& pose);

/// All rest vertices moved by LBS under `pose`.
MatX3 pose_vertices(const SkinnedBody& body, const Pose& pose);

enum class LbsDirection { kForward, kInverse };

/// Applies the blended bone transform G(x) = sum_j w_j T_j (forward) or its
/// single-matrix inverse G^-1 (inverse) to each point. Throws NumericError if
/// the blended matrix is singular (|det| < 1e-9).
MatX3 lbs_transform(const SkinnedBody& body, const Pose& pose, LbsDirection direction,
                    const MatX3& points, const MatX& point_weights);

/// Single-point variant.
Vec3 lbs_transform_point(const SkinnedBody& body, const std::vector<Mat4>& transforms,
                         LbsDirection direction, const Vec3& point, const VecX& weights);

/// Static AABB tree over triangles for nearest-surface queries. Read-only
/// after build; safe to share across concurrent queries.
class MeshBvh {
 public:
  MeshBvh() = default;
  MeshBvh(const MatX3& vertices, const MatX3i& faces);

  struct Hit {
    int face = -1;
    Vec3 closest = Vec3::Zero();
    Vec3 barycentric = Vec3::Zero();
    double distance = std::numeric_limits<double>::infinity();
  };
  Hit nearest(const Vec3& query) const;

  /// Ray / dilated-mesh-AABB intersection; returns [near, far] or nullopt.
  std::optional<std::pair<double, double>> ray_aabb(const Vec3& origin, const Vec3& dir,
                                                    double dilation) const;
  const Aabb& bounds() const { return nodes_.empty() ? empty_bounds_ : nodes_[0].box; }
  bool empty() const { return tri_count_ == 0; }

 private:
  struct Node {
    Aabb box;
    int left = -1, right = -1;   // children, or
    int first = 0, count = 0;    // leaf triangle range
  };
  int build(int first, int count, int depth);
  void nearest_rec(int node, const Vec3& q, Hit& best) const;

  const double* verts_ = nullptr;
  std::vector<std::array<int, 3>> tris_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  std::vector<Vec3> centroids_;
  MatX3 vertex_copy_;
  int tri_count_ = 0;
  Aabb empty_bounds_;
};

/// Result of a nearest-surface lookup: interpolated skinning weights, surface
/// UV, distance, dominant part, and the local Jacobians of (uv, weights) with
/// respect to the query point (piecewise-affine; exact within the closest
/// face/edge/vertex region).
struct SurfaceQuery {
  VecX weights;                  // J, row-stochastic
  Vec2 uv = Vec2::Zero();
  double distance = 0.0;
  int part = 0;
  int face = -1;
  Vec3 closest = Vec3::Zero();
  Eigen::Matrix<double, 2, 3> duv_dx = Eigen::Matrix<double, 2, 3>::Zero();
  MatX dweights_dx;              // J x 3
};

/// Finds the nearest triangle of `posed_vertices` to `query` and interpolates
/// that triangle's blend-weight rows (renormalized) and UVs barycentrically.
/// `index`, when given, must have been built over the same posed vertices;
/// `joint_to_part_map` skips the per-call map derivation on hot paths.
SurfaceQuery nearest_surface_weights(const SkinnedBody& body, const MatX3& posed_vertices,
                                     const Vec3& query, const MeshBvh* index = nullptr,
                                     const std::vector<int>* joint_to_part_map = nullptr);

/// SMPL-24 conventions accepted by the loader: standard kinematic-tree parent
/// list and the joint -> five-part assignment used for segmentation.
const std::vector<int>& smpl24_parents();
const std::vector<std::vector<int>>& smpl24_part_joint_sets();

}  // namespace partrf

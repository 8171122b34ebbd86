// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "partrf/body.hpp"
#include "partrf/nets.hpp"

namespace partrf {

/// Immutable per-body derived data shared by everything downstream.
struct BodyContext {
  const SkinnedBody* body = nullptr;
  std::vector<int> joint_to_part;
  MeshBvh rest_bvh;
  std::vector<Aabb> part_rest_boxes;  // undilated AABBs of each part's rest vertices
  Aabb rest_bounds;
};
BodyContext make_body_context(const SkinnedBody& body);

/// Per-(body, pose) derived data: skinning matrices, posed mesh, spatial index.
struct PoseContext {
  Pose pose;
  std::vector<Mat4> transforms;
  MatX3 posed_vertices;
  MeshBvh posed_bvh;
  std::vector<Aabb> part_posed_boxes;
  Aabb posed_bounds;
};
PoseContext make_pose_context(const SkinnedBody& body, const Pose& pose);

struct OffsetFieldConfig {
  int hidden_width = 128;
  int hidden_layers = 4;
  int frequency_bands = 6;
  double cap = 0.1;      // meters; scaled-tanh bound on the offset norm
  bool use_uvt = true;   // false: encode (x,y,z,t) instead (spatial ablation)
};

/// One learned non-rigid offset field (one direction of one part):
/// offset = (cap / sqrt(3)) * tanh(mlp(encode(input))), so the offset norm is
/// bounded by cap. Zero-initialized nets start at the pure-LBS solution.
class OffsetField {
 public:
  OffsetField() = default;
  OffsetField(std::string name, const OffsetFieldConfig& cfg);

  void init(Rng& rng, double final_scale = 0.0);

  int input_dim() const { return cfg_.use_uvt ? 3 : 4; }

  struct Cache {
    MatX input;     // input_dim x B
    MatX encoded;
    DenseNet::Cache net;
    MatX squashed;  // tanh of the net output, 3 x B
  };

  /// input: input_dim x B -> offsets 3 x B.
  MatX forward(const MatX& input, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients; returns dL/d(input) for the
  /// surface-coordinate chain.
  MatX backward(const Cache& cache, const MatX& dout);

  void zero_grad() { net_.zero_grad(); }
  void collect(ParamRefs& out) { net_.collect(out); }
  void zero_weights();
  const OffsetFieldConfig& config() const { return cfg_; }
  DenseNet& net() { return net_; }

 private:
  OffsetFieldConfig cfg_;
  SinusoidalEncoding enc_;
  DenseNet net_;
};

/// Encoder input feature for the offset fields: sinusoidal features of
/// (u,v,t), or of (x,y,z,t) when `ablate_uvt` is set.
VecX uvt_input(const Vec2& uv, double t, bool ablate_uvt, const Vec3& xyz,
               int frequency_bands = 6);

struct DeformConfig {
  OffsetFieldConfig field;
  double surface_cutoff = 0.1;  // meters; beyond this a sample is empty space
  double theta = 0.02;          // consistency hinge threshold, meters
};

/// Bidirectional non-rigid deformation: an (inverse, forward) offset-field
/// pair per part. Evaluation is pure given parameters.
class DeformationModel {
 public:
  DeformationModel() = default;
  DeformationModel(int parts, const DeformConfig& cfg, Rng& rng, double init_scale = 0.0);

  OffsetField& inverse_field(int part) { return inverse_[size_t(part)]; }
  OffsetField& forward_field(int part) { return forward_[size_t(part)]; }
  const OffsetField& inverse_field(int part) const { return inverse_[size_t(part)]; }
  const OffsetField& forward_field(int part) const { return forward_[size_t(part)]; }
  int parts() const { return int(inverse_.size()); }
  const DeformConfig& config() const { return cfg_; }

  void zero_grad();
  void collect(ParamRefs& out);

 private:
  DeformConfig cfg_;
  std::vector<OffsetField> inverse_, forward_;
};

struct ObsToCanonical {
  bool inside = false;  // within the surface cutoff of the posed mesh
  Vec3 x_c = Vec3::Zero();
  Vec2 uv = Vec2::Zero();
  int part = 0;
  double surface_distance = 0;
  VecX weights;
};

/// Eq-style inverse mapping: x_c = rigid_inverse(x_o) + inverse_offset(u,v,t),
/// with weights/uv/part from the nearest posed surface point. Points beyond
/// the cutoff return inside=false (empty space, never an exception).
ObsToCanonical deform_obs_to_canonical(const BodyContext& bc, const PoseContext& pc,
                                       const DeformationModel& model, const Vec3& x_o);

struct CanonicalToObs {
  bool inside = false;
  Vec3 x_o = Vec3::Zero();
  Vec2 uv = Vec2::Zero();
  int part = 0;
  double surface_distance = 0;
};

/// Forward mapping: x_o' = rigid_forward(x_c) + forward_offset(u_c,v_c,t),
/// with (u_c,v_c) looked up on the rest mesh.
CanonicalToObs deform_canonical_to_obs(const BodyContext& bc, const PoseContext& pc,
                                       const DeformationModel& model, const Vec3& x_c);

struct DeformationResidual {
  double d = 0;          // ||x_o - x_o'||_2
  double threshold = 0;  // theta carried alongside for the loss reduction
};

/// Round-trip residuals d = ||x_o - forward(inverse(x_o))|| for each sample.
std::vector<DeformationResidual> consistency_residuals(const BodyContext& bc,
                                                       const PoseContext& pc,
                                                       const DeformationModel& model,
                                                       const MatX3& samples);

/// Differentiable round-trip pass: per-part batched evaluation of both field
/// directions with every cache needed to push dL/d(residual) back into the
/// field parameters, including the piecewise-affine dependence of the forward
/// leg on x_c through the rest-surface lookup.
struct ConsistencyBatch {
  struct Sample {
    Vec3 x_o, x_c, x_o_prime;
    double d = 0;
    int inv_part = 0, fwd_part = 0;
    int inv_slot = 0, fwd_slot = 0;  // column in the per-part batches
    Mat3 dxo_dxc;                    // rigid forward + weight-field term
    Eigen::Matrix<double, 2, 3> duv_dxc;
  };
  std::vector<Sample> samples;
  std::vector<DeformationResidual> residuals;
  // Per-part batched field caches (inverse direction indexed by inv_part,
  // forward by fwd_part) and the column -> sample maps.
  std::vector<OffsetField::Cache> inv_caches, fwd_caches;
  std::vector<std::vector<int>> inv_members, fwd_members;
  double theta = 0;
};

ConsistencyBatch consistency_forward(const BodyContext& bc, const PoseContext& pc,
                                     const DeformationModel& model, const MatX3& obs_samples);

/// Accumulates parameter gradients for dL/dd per retained sample (aligned
/// with batch.residuals).
void consistency_backward(const PoseContext& pc, DeformationModel& model,
                          const ConsistencyBatch& batch, const std::vector<double>& dL_dd);

}  // namespace partrf

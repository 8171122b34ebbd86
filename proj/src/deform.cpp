// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#include "partrf/deform.hpp"

namespace partrf {

BodyContext make_body_context(const SkinnedBody& body) {
  BodyContext bc;
  bc.body = &body;
  bc.joint_to_part = body.joint_to_part();
  bc.rest_bvh = MeshBvh(body.vertices, body.faces);
  bc.part_rest_boxes.assign(size_t(body.part_count()), Aabb{});
  for (int i = 0; i < body.vertex_count(); ++i)
    bc.part_rest_boxes[size_t(body.part_labels[size_t(i)])].expand(body.vertices.row(i));
  bc.rest_bounds = body.rest_bounds();
  return bc;
}

PoseContext make_pose_context(const SkinnedBody& body, const Pose& pose) {
  PoseContext pc;
  pc.pose = pose;
  pc.transforms = skinning_transforms(body, pose);
  pc.posed_vertices = pose_vertices(body, pose);
  pc.posed_bvh = MeshBvh(pc.posed_vertices, body.faces);
  pc.part_posed_boxes.assign(size_t(body.part_count()), Aabb{});
  for (int i = 0; i < body.vertex_count(); ++i) {
    pc.part_posed_boxes[size_t(body.part_labels[size_t(i)])].expand(pc.posed_vertices.row(i));
    pc.posed_bounds.expand(pc.posed_vertices.row(i));
  }
  return pc;
}

OffsetField::OffsetField(std::string name, const OffsetFieldConfig& cfg) : cfg_(cfg) {
  enc_.input_dim = input_dim();
  enc_.bands = cfg.frequency_bands;
  std::vector<int> hidden(size_t(cfg.hidden_layers), cfg.hidden_width);
  net_ = DenseNet(std::move(name), enc_.output_dim(), hidden, 3);
}

void OffsetField::init(Rng& rng, double final_scale) { net_.init(rng, final_scale); }

void OffsetField::zero_weights() {
  auto& w = net_.weights.back();
  w.setZero();
  net_.biases.back().setZero();
}

MatX OffsetField::forward(const MatX& input, Cache* cache) const {
  const double scale = cfg_.cap / std::sqrt(3.0);  // norm of the output stays <= cap
  const MatX encoded = enc_.encode(input);
  MatX raw = net_.forward(encoded, cache ? &cache->net : nullptr);
  MatX squashed = raw.array().tanh();
  if (cache) {
    cache->input = input;
    cache->encoded = encoded;
    cache->squashed = squashed;
  }
  return scale * squashed;
}

MatX OffsetField::backward(const Cache& cache, const MatX& dout) {
  const double scale = cfg_.cap / std::sqrt(3.0);
  const MatX draw =
      dout.array() * scale * (1.0 - cache.squashed.array() * cache.squashed.array());
  const MatX denc = net_.backward(cache.net, draw);
  return enc_.backward_input(cache.input, denc);
}

VecX uvt_input(const Vec2& uv, double t, bool ablate_uvt, const Vec3& xyz,
               int frequency_bands) {
  SinusoidalEncoding enc;
  enc.bands = frequency_bands;
  MatX in;
  if (ablate_uvt) {
    enc.input_dim = 4;
    in.resize(4, 1);
    in << xyz.x(), xyz.y(), xyz.z(), t;
  } else {
    enc.input_dim = 3;
    in.resize(3, 1);
    in << uv.x(), uv.y(), t;
  }
  return enc.encode(in).col(0);
}

DeformationModel::DeformationModel(int parts, const DeformConfig& cfg, Rng& rng,
                                   double init_scale)
    : cfg_(cfg) {
  for (int k = 0; k < parts; ++k) {
    inverse_.emplace_back("deform/inv" + std::to_string(k), cfg.field);
    forward_.emplace_back("deform/fwd" + std::to_string(k), cfg.field);
    inverse_.back().init(rng, init_scale);
    forward_.back().init(rng, init_scale);
  }
}

void DeformationModel::zero_grad() {
  for (auto& f : inverse_) f.zero_grad();
  for (auto& f : forward_) f.zero_grad();
}

void DeformationModel::collect(ParamRefs& out) {
  for (auto& f : inverse_) f.collect(out);
  for (auto& f : forward_) f.collect(out);
}

namespace {

MatX field_input(const OffsetFieldConfig& cfg, const Vec2& uv, double t, const Vec3& xyz) {
  MatX in(cfg.use_uvt ? 3 : 4, 1);
  if (cfg.use_uvt)
    in << uv.x(), uv.y(), t;
  else
    in << xyz.x(), xyz.y(), xyz.z(), t;
  return in;
}

}  // namespace

ObsToCanonical deform_obs_to_canonical(const BodyContext& bc, const PoseContext& pc,
                                       const DeformationModel& model, const Vec3& x_o) {
  ObsToCanonical out;
  const auto q = nearest_surface_weights(*bc.body, pc.posed_vertices, x_o, &pc.posed_bvh);
  out.surface_distance = q.distance;
  out.uv = q.uv;
  out.part = q.part;
  out.weights = q.weights;
  if (q.distance > model.config().surface_cutoff) return out;  // empty space
  out.inside = true;

  const Vec3 rigid =
      lbs_transform_point(*bc.body, pc.transforms, LbsDirection::kInverse, x_o, q.weights);
  const auto& field = model.inverse_field(out.part);
  const MatX offset =
      field.forward(field_input(field.config(), q.uv, pc.pose.time, x_o), nullptr);
  out.x_c = rigid + Vec3(offset.col(0));
  return out;
}

CanonicalToObs deform_canonical_to_obs(const BodyContext& bc, const PoseContext& pc,
                                       const DeformationModel& model, const Vec3& x_c) {
  CanonicalToObs out;
  const auto q = nearest_surface_weights(*bc.body, bc.body->vertices, x_c, &bc.rest_bvh);
  out.surface_distance = q.distance;
  out.uv = q.uv;
  out.part = q.part;
  if (q.distance > model.config().surface_cutoff) return out;
  out.inside = true;

  const Vec3 rigid =
      lbs_transform_point(*bc.body, pc.transforms, LbsDirection::kForward, x_c, q.weights);
  const auto& field = model.forward_field(out.part);
  const MatX offset =
      field.forward(field_input(field.config(), q.uv, pc.pose.time, x_c), nullptr);
  out.x_o = rigid + Vec3(offset.col(0));
  return out;
}

std::vector<DeformationResidual> consistency_residuals(const BodyContext& bc,
                                                       const PoseContext& pc,
                                                       const DeformationModel& model,
                                                       const MatX3& samples) {
  std::vector<DeformationResidual> out;
  out.reserve(size_t(samples.rows()));
  for (int i = 0; i < samples.rows(); ++i) {
    const Vec3 x_o = samples.row(i);
    const auto inv = deform_obs_to_canonical(bc, pc, model, x_o);
    if (!inv.inside) continue;
    const auto fwd = deform_canonical_to_obs(bc, pc, model, inv.x_c);
    if (!fwd.inside) continue;
    out.push_back({(x_o - fwd.x_o).norm(), model.config().theta});
  }
  return out;
}

ConsistencyBatch consistency_forward(const BodyContext& bc, const PoseContext& pc,
                                     const DeformationModel& model, const MatX3& obs_samples) {
  const auto& body = *bc.body;
  const auto& cfg = model.config();
  const bool uvt = cfg.field.use_uvt;
  const int in_dim = uvt ? 3 : 4;
  const int parts = model.parts();

  ConsistencyBatch batch;
  batch.theta = cfg.theta;
  batch.inv_caches.resize(size_t(parts));
  batch.fwd_caches.resize(size_t(parts));
  batch.inv_members.resize(size_t(parts));
  batch.fwd_members.resize(size_t(parts));

  // Leg 1: posed-surface lookup, rigid inverse, group by dominant part.
  struct Pending {
    Vec3 x_o, rigid;
    Vec2 uv;
    int part;
  };
  std::vector<Pending> pending;
  for (int i = 0; i < obs_samples.rows(); ++i) {
    const Vec3 x_o = obs_samples.row(i);
    const auto q =
        nearest_surface_weights(body, pc.posed_vertices, x_o, &pc.posed_bvh, &bc.joint_to_part);
    if (q.distance > cfg.surface_cutoff) continue;
    const Vec3 rigid =
        lbs_transform_point(body, pc.transforms, LbsDirection::kInverse, x_o, q.weights);
    pending.push_back({x_o, rigid, q.uv, q.part});
  }

  std::vector<MatX> inv_inputs(size_t(parts));
  {
    std::vector<int> counts(size_t(parts), 0);
    for (const auto& p : pending) counts[size_t(p.part)]++;
    for (int k = 0; k < parts; ++k) inv_inputs[size_t(k)].resize(in_dim, counts[size_t(k)]);
    std::vector<int> cursor(size_t(parts), 0);
    for (const auto& p : pending) {
      const int k = p.part, c = cursor[size_t(k)]++;
      if (uvt)
        inv_inputs[size_t(k)].col(c) << p.uv.x(), p.uv.y(), pc.pose.time;
      else
        inv_inputs[size_t(k)].col(c) << p.x_o.x(), p.x_o.y(), p.x_o.z(), pc.pose.time;
    }
  }
  std::vector<MatX> inv_offsets(size_t(parts));
  for (int k = 0; k < parts; ++k)
    if (inv_inputs[size_t(k)].cols() > 0)
      inv_offsets[size_t(k)] =
          model.inverse_field(k).forward(inv_inputs[size_t(k)], &batch.inv_caches[size_t(k)]);

  // Leg 2: rest-surface lookup at x_c with Jacobians, rigid forward, group by
  // canonical dominant part.
  std::vector<int> inv_cursor(size_t(parts), 0);
  struct Pending2 {
    ConsistencyBatch::Sample s;
    Vec2 uv_c;
    VecX w_c;
  };
  std::vector<Pending2> pending2;
  for (const auto& p : pending) {
    const int slot = inv_cursor[size_t(p.part)]++;
    ConsistencyBatch::Sample s;
    s.x_o = p.x_o;
    s.inv_part = p.part;
    s.inv_slot = slot;
    s.x_c = p.rigid + Vec3(inv_offsets[size_t(p.part)].col(slot));

    const auto q =
        nearest_surface_weights(body, body.vertices, s.x_c, &bc.rest_bvh, &bc.joint_to_part);
    if (q.distance > cfg.surface_cutoff) continue;
    s.fwd_part = q.part;
    s.duv_dxc = q.duv_dx;

    // Rigid forward and its Jacobian: d(G(w(x)) x)/dx = R_blend +
    // sum_j (R_j x + t_j) grad w_j(x)^T.
    Mat3 r_blend = Mat3::Zero();
    Vec3 t_blend = Vec3::Zero();
    Mat3 dxo = Mat3::Zero();
    for (int j = 0; j < body.joint_count(); ++j) {
      const double w = q.weights[j];
      const Mat3 rj = pc.transforms[size_t(j)].topLeftCorner<3, 3>();
      const Vec3 tj = pc.transforms[size_t(j)].topRightCorner<3, 1>();
      if (w != 0.0) {
        r_blend += w * rj;
        t_blend += w * tj;
      }
      const Eigen::RowVector3d gw = q.dweights_dx.row(j);
      if (gw.squaredNorm() > 0) dxo += (rj * s.x_c + tj) * gw;
    }
    s.dxo_dxc = r_blend + dxo;
    Pending2 p2;
    p2.s = s;
    p2.s.x_o_prime = r_blend * s.x_c + t_blend;  // offset added after batching
    p2.uv_c = q.uv;
    p2.w_c = q.weights;
    pending2.push_back(std::move(p2));
  }

  std::vector<MatX> fwd_inputs(size_t(parts));
  {
    std::vector<int> counts(size_t(parts), 0);
    for (const auto& p : pending2) counts[size_t(p.s.fwd_part)]++;
    for (int k = 0; k < parts; ++k) fwd_inputs[size_t(k)].resize(in_dim, counts[size_t(k)]);
    std::vector<int> cursor(size_t(parts), 0);
    for (auto& p : pending2) {
      const int k = p.s.fwd_part;
      p.s.fwd_slot = cursor[size_t(k)]++;
      if (uvt)
        fwd_inputs[size_t(k)].col(p.s.fwd_slot) << p.uv_c.x(), p.uv_c.y(), pc.pose.time;
      else
        fwd_inputs[size_t(k)].col(p.s.fwd_slot) << p.s.x_c.x(), p.s.x_c.y(), p.s.x_c.z(),
            pc.pose.time;
    }
  }
  std::vector<MatX> fwd_offsets(size_t(parts));
  for (int k = 0; k < parts; ++k)
    if (fwd_inputs[size_t(k)].cols() > 0)
      fwd_offsets[size_t(k)] =
          model.forward_field(k).forward(fwd_inputs[size_t(k)], &batch.fwd_caches[size_t(k)]);

  for (auto& p : pending2) {
    ConsistencyBatch::Sample s = p.s;
    s.x_o_prime += Vec3(fwd_offsets[size_t(s.fwd_part)].col(s.fwd_slot));
    s.d = (s.x_o - s.x_o_prime).norm();
    batch.inv_members[size_t(s.inv_part)].push_back(int(batch.samples.size()));
    batch.fwd_members[size_t(s.fwd_part)].push_back(int(batch.samples.size()));
    batch.residuals.push_back({s.d, cfg.theta});
    batch.samples.push_back(std::move(s));
  }
  return batch;
}

void consistency_backward(const PoseContext& pc, DeformationModel& model,
                          const ConsistencyBatch& batch, const std::vector<double>& dL_dd) {
  (void)pc;
  if (dL_dd.size() != batch.samples.size())
    throw std::invalid_argument("consistency_backward: gradient count mismatch");
  const bool uvt = model.config().field.use_uvt;
  const int parts = model.parts();

  // d = |x_o - x_o'|  =>  dL/dx_o' = dL/dd * (x_o' - x_o) / d.
  std::vector<Vec3> dxo_prime(batch.samples.size(), Vec3::Zero());
  for (size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& s = batch.samples[i];
    if (s.d > 1e-12 && dL_dd[i] != 0.0)
      dxo_prime[i] = dL_dd[i] * (s.x_o_prime - s.x_o) / s.d;
  }

  // Forward fields first: parameter grads plus the chain back into x_c.
  std::vector<Vec3> dxc(batch.samples.size(), Vec3::Zero());
  for (int k = 0; k < parts; ++k) {
    const auto& members = batch.fwd_members[size_t(k)];
    if (members.empty()) continue;
    MatX dout(3, int(members.size()));
    for (size_t m = 0; m < members.size(); ++m) dout.col(int(m)) = dxo_prime[size_t(members[m])];
    const MatX din = model.forward_field(k).backward(batch.fwd_caches[size_t(k)], dout);
    for (size_t m = 0; m < members.size(); ++m) {
      const auto& s = batch.samples[size_t(members[m])];
      Vec3 g = s.dxo_dxc.transpose() * dxo_prime[size_t(members[m])];
      if (uvt) {
        g += s.duv_dxc.transpose() * Vec2(din(0, int(m)), din(1, int(m)));
      } else {
        g += Vec3(din(0, int(m)), din(1, int(m)), din(2, int(m)));
      }
      dxc[size_t(members[m])] = g;
    }
  }

  // Inverse fields: dL/d(inverse offset) = dL/dx_c.
  for (int k = 0; k < parts; ++k) {
    const auto& members = batch.inv_members[size_t(k)];
    if (members.empty()) continue;
    // Columns in the inverse cache follow inv_slot order, which may include
    // samples dropped in leg 2; rebuild the dense gradient by slot.
    const int cols = int(batch.inv_caches[size_t(k)].input.cols());
    MatX dout = MatX::Zero(3, cols);
    for (int idx : members) dout.col(batch.samples[size_t(idx)].inv_slot) = dxc[size_t(idx)];
    model.inverse_field(k).backward(batch.inv_caches[size_t(k)], dout);
  }
}

}  // namespace partrf

#include "crowdmesh/body_model.hpp"

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace {

template <typename Matrix>
torch::Tensor to_tensor(const Matrix& m, std::vector<std::int64_t> shape, torch::Dtype dtype) {
  torch::Tensor t = torch::empty({static_cast<std::int64_t>(m.size())}, torch::kFloat64);
  std::copy(m.data(), m.data() + m.size(), t.data_ptr<double>());
  return t.reshape(shape).to(dtype);
}

}  // namespace

torch::Tensor batch_rodrigues(const torch::Tensor& axis_angle) {
  // R = I + A [v]x + B [v]x^2 with A = sin(t)/t, B = (1 - cos t)/t^2; Taylor
  // expansions near zero keep values and gradients finite.
  const auto v = axis_angle.reshape({-1, 3});
  const auto sq = (v * v).sum(-1);
  const auto small = sq < 1e-8;
  const auto safe_sq = torch::where(small, torch::ones_like(sq), sq);
  const auto angle = safe_sq.sqrt();
  const auto a = torch::where(small, 1.0 - sq / 6.0, torch::sin(angle) / angle);
  const auto b = torch::where(small, 0.5 - sq / 24.0, (1.0 - torch::cos(angle)) / safe_sq);

  const auto x = v.select(1, 0), y = v.select(1, 1), z = v.select(1, 2);
  const auto zero = torch::zeros_like(x);
  const auto skew = torch::stack({zero, -z, y, z, zero, -x, -y, x, zero}, 1).reshape({-1, 3, 3});
  const auto eye = torch::eye(3, v.options()).expand({v.size(0), 3, 3});
  return eye + a.view({-1, 1, 1}) * skew + b.view({-1, 1, 1}) * torch::bmm(skew, skew);
}

ParamBatch ParamBatch::to(torch::Dtype dtype) const {
  return {theta_g.to(dtype), theta.to(dtype), beta.to(dtype), cam.to(dtype)};
}

ParamBatch ParamBatch::detach() const {
  return {theta_g.detach(), theta.detach(), beta.detach(), cam.detach()};
}

ParamBatch ParamBatch::from_params(const std::vector<BodyParams>& params, torch::Dtype dtype) {
  if (params.empty()) throw ShapeError("empty parameter batch");
  const auto B = static_cast<std::int64_t>(params.size());
  const auto Kp = static_cast<std::int64_t>(params.front().theta.rows());
  auto tg = torch::empty({B, 3}, torch::kFloat64);
  auto th = torch::empty({B, Kp, 3}, torch::kFloat64);
  auto be = torch::empty({B, kShapeDims}, torch::kFloat64);
  auto ca = torch::empty({B, 3}, torch::kFloat64);
  auto atg = tg.accessor<double, 2>();
  auto ath = th.accessor<double, 3>();
  auto abe = be.accessor<double, 2>();
  auto aca = ca.accessor<double, 2>();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& p = params[static_cast<size_t>(b)];
    if (p.theta.rows() != Kp) throw ShapeError("inconsistent pose joint counts in batch");
    for (int c = 0; c < 3; ++c) {
      atg[b][c] = p.theta_g[c];
      aca[b][c] = p.cam[c];
    }
    for (std::int64_t k = 0; k < Kp; ++k) {
      for (int c = 0; c < 3; ++c) ath[b][k][c] = p.theta(k, c);
    }
    for (int c = 0; c < kShapeDims; ++c) abe[b][c] = p.beta[c];
  }
  return ParamBatch{tg, th, be, ca}.to(dtype);
}

BodyParams ParamBatch::at(std::int64_t index) const {
  const auto d = to(torch::kFloat64).detach();
  const auto Kp = static_cast<int>(d.theta.size(1));
  BodyParams p = BodyParams::zeros(Kp);
  auto atg = d.theta_g.accessor<double, 2>();
  auto ath = d.theta.accessor<double, 3>();
  auto abe = d.beta.accessor<double, 2>();
  auto aca = d.cam.accessor<double, 2>();
  for (int c = 0; c < 3; ++c) {
    p.theta_g[c] = atg[index][c];
    p.cam[c] = aca[index][c];
  }
  for (int k = 0; k < Kp; ++k) {
    for (int c = 0; c < 3; ++c) p.theta(k, c) = ath[index][k][c];
  }
  for (int c = 0; c < kShapeDims; ++c) p.beta[c] = abe[index][c];
  return p;
}

BodyLayer::BodyLayer(const BodyModel& model, torch::Dtype dtype)
    : dtype_(dtype), parents_(model.parents) {
  const auto V = static_cast<std::int64_t>(model.num_vertices());
  const auto K = static_cast<std::int64_t>(model.num_joints());
  const auto J = static_cast<std::int64_t>(model.num_regressed_joints());
  template_ = to_tensor(model.template_vertices, {V, 3}, dtype);
  shape_dirs_ = to_tensor(model.shape_dirs, {V, 3, kShapeDims}, dtype);
  skin_weights_ = to_tensor(model.skin_weights, {V, K}, dtype);
  joint_regressor_ = to_tensor(model.joint_regressor, {J, V}, dtype);
  std::vector<std::int64_t> rows(model.kinematic_to_superset.begin(),
                                 model.kinematic_to_superset.end());
  kin_regressor_ = joint_regressor_.index_select(0, torch::tensor(rows, torch::kInt64));
  rest_joints_ = to_tensor(model.rest_joints, {K, 3}, dtype);
}

torch::Tensor BodyLayer::shaped_vertices(const torch::Tensor& beta) const {
  // B x V x 3 = template + shape_dirs . beta
  return template_.unsqueeze(0) + torch::einsum("vcs,bs->bvc", {shape_dirs_, beta});
}

torch::Tensor BodyLayer::shaped_joints(const torch::Tensor& beta) const {
  return torch::matmul(kin_regressor_, shaped_vertices(beta));
}

RigidTransforms BodyLayer::forward_kinematics(const torch::Tensor& theta_g,
                                              const torch::Tensor& theta,
                                              const torch::Tensor& joints) const {
  const auto B = theta_g.size(0);
  const auto K = static_cast<std::int64_t>(parents_.size());
  if (theta.size(1) != K - 1) {
    throw ShapeError("theta has " + std::to_string(theta.size(1)) + " joints, model expects " +
                     std::to_string(K - 1));
  }
  const auto local = batch_rodrigues(torch::cat({theta_g.unsqueeze(1), theta}, 1))
                         .reshape({B, K, 3, 3});
  std::vector<torch::Tensor> rot(static_cast<size_t>(K)), trans(static_cast<size_t>(K));
  for (std::int64_t k = 0; k < K; ++k) {
    const auto r_local = local.select(1, k);
    const auto j = joints.select(1, k).unsqueeze(-1);  // B x 3 x 1
    // rotation about the rest joint: p -> R (p - j) + j
    const auto t_local = (j - torch::matmul(r_local, j)).squeeze(-1);
    const int parent = parents_[static_cast<size_t>(k)];
    if (parent < 0) {
      rot[static_cast<size_t>(k)] = r_local;
      trans[static_cast<size_t>(k)] = t_local;
    } else {
      const auto& rp = rot[static_cast<size_t>(parent)];
      const auto& tp = trans[static_cast<size_t>(parent)];
      rot[static_cast<size_t>(k)] = torch::matmul(rp, r_local);
      trans[static_cast<size_t>(k)] = torch::matmul(rp, t_local.unsqueeze(-1)).squeeze(-1) + tp;
    }
  }
  return {torch::stack(rot, 1), torch::stack(trans, 1)};
}

RigidTransforms BodyLayer::forward_kinematics(const torch::Tensor& theta_g,
                                              const torch::Tensor& theta) const {
  const auto joints = rest_joints_.unsqueeze(0).expand({theta_g.size(0), -1, -1});
  return forward_kinematics(theta_g, theta, joints);
}

torch::Tensor BodyLayer::posed_joints(const RigidTransforms& transforms,
                                      const torch::Tensor& joints) const {
  return torch::matmul(transforms.rotation, joints.unsqueeze(-1)).squeeze(-1) +
         transforms.translation;
}

torch::Tensor BodyLayer::decode(const ParamBatch& params) const {
  const auto shaped = shaped_vertices(params.beta);
  const auto joints = torch::matmul(kin_regressor_, shaped);
  const auto tf = forward_kinematics(params.theta_g, params.theta, joints);
  // blend the per-joint affine maps, then apply them per vertex
  const auto B = params.theta_g.size(0);
  const auto K = static_cast<std::int64_t>(parents_.size());
  const auto affine = torch::cat({tf.rotation.reshape({B, K, 9}), tf.translation}, 2);  // B x K x 12
  const auto blended = torch::matmul(skin_weights_, affine);                              // B x V x 12
  const auto V = blended.size(1);
  const auto r = blended.narrow(2, 0, 9).reshape({B, V, 3, 3});
  const auto t = blended.narrow(2, 9, 3);
  return torch::matmul(r, shaped.unsqueeze(-1)).squeeze(-1) + t;
}

torch::Tensor BodyLayer::regress_joints(const torch::Tensor& vertices) const {
  return torch::matmul(joint_regressor_, vertices);
}

Mesh decode_mesh(const BodyModel& model, const BodyParams& params) {
  const BodyLayer layer(model, torch::kFloat64);
  const auto verts = layer.decode(ParamBatch::from_params({params}, torch::kFloat64))
                         .squeeze(0)
                         .contiguous();
  Mesh mesh;
  mesh.vertices.resize(verts.size(0), 3);
  std::copy(verts.data_ptr<double>(), verts.data_ptr<double>() + verts.numel(),
            mesh.vertices.data());
  mesh.faces = model.faces;
  return mesh;
}

MatrixX3dR regress_joints(const BodyModel& model, const Mesh& mesh) {
  if (mesh.vertices.rows() != model.num_vertices()) {
    throw ShapeError("mesh vertex count does not match the body model");
  }
  return model.joint_regressor * mesh.vertices;
}

}  // namespace crowdmesh

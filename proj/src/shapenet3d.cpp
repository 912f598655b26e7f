#include "crowdmesh/shapenet3d.hpp"

#include <cmath>
#include <queue>
#include <set>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace nn = torch::nn;

torch::Tensor SkeletonGraph::normalized_tensor(torch::Dtype dtype) const {
  const auto n = static_cast<std::int64_t>(normalized.rows());
  auto t = torch::empty({n, n}, torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) acc[i][j] = normalized(i, j);
  }
  return t.to(dtype);
}

SkeletonGraph build_skeleton_graph(int num_vertices,
                                   const std::vector<std::pair<int, int>>& edges) {
  if (num_vertices < 1) throw ConfigError("skeleton graph needs at least one vertex");
  SkeletonGraph g;
  g.adjacency = Eigen::MatrixXd::Zero(num_vertices, num_vertices);
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= num_vertices || b >= num_vertices) {
      throw ConfigError("skeleton edge (" + std::to_string(a) + ", " + std::to_string(b) +
                        ") is out of range");
    }
    if (a == b) throw ConfigError("skeleton edges must not be self loops");
    g.adjacency(a, b) = g.adjacency(b, a) = 1.0;
  }
  g.neighbors.assign(static_cast<size_t>(num_vertices), {});
  for (int i = 0; i < num_vertices; ++i) {
    for (int j = 0; j < num_vertices; ++j) {
      if (g.adjacency(i, j) != 0.0) g.neighbors[static_cast<size_t>(i)].push_back(j);
    }
  }
  // connectivity by breadth-first search from vertex 0
  std::vector<bool> seen(static_cast<size_t>(num_vertices), false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  int reached = 1;
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop();
    for (int n : g.neighbors[static_cast<size_t>(v)]) {
      if (!seen[static_cast<size_t>(n)]) {
        seen[static_cast<size_t>(n)] = true;
        ++reached;
        frontier.push(n);
      }
    }
  }
  if (reached != num_vertices) {
    throw ConfigError("skeleton graph is disconnected (" + std::to_string(reached) + " of " +
                      std::to_string(num_vertices) + " vertices reachable)");
  }
  const Eigen::MatrixXd a_hat =
      g.adjacency + Eigen::MatrixXd::Identity(num_vertices, num_vertices);
  const Eigen::VectorXd inv_sqrt_deg = a_hat.rowwise().sum().cwiseSqrt().cwiseInverse();
  g.normalized = inv_sqrt_deg.asDiagonal() * a_hat * inv_sqrt_deg.asDiagonal();
  return g;
}

torch::Tensor sample_joint_features(const FeatureMap& features, const torch::Tensor& xy) {
  const auto& f = features.data;
  if (f.dim() != 4 || xy.dim() != 3 || xy.size(2) != 2 || xy.size(0) != f.size(0)) {
    throw ShapeError("sample_joint_features expects B x C x h x w features and B x J x 2 positions");
  }
  const auto B = f.size(0), C = f.size(1), h = f.size(2), w = f.size(3);
  const auto J = xy.size(1);
  const double stride = features.stride;
  const auto gx = (xy.select(2, 0) / stride - 0.5).clamp(0.0, static_cast<double>(w - 1));
  const auto gy = (xy.select(2, 1) / stride - 0.5).clamp(0.0, static_cast<double>(h - 1));
  // NaN positions propagate through the weights, never into the indices
  const auto x0 = gx.detach().nan_to_num(0.0).floor().clamp(0.0, static_cast<double>(std::max<std::int64_t>(w - 2, 0)));
  const auto y0 = gy.detach().nan_to_num(0.0).floor().clamp(0.0, static_cast<double>(std::max<std::int64_t>(h - 2, 0)));
  const auto x1 = (x0 + 1.0).clamp_max(static_cast<double>(w - 1));
  const auto y1 = (y0 + 1.0).clamp_max(static_cast<double>(h - 1));
  const auto fx = (gx - x0).unsqueeze(1);  // B x 1 x J
  const auto fy = (gy - y0).unsqueeze(1);

  const auto flat = f.flatten(2);  // B x C x hw
  auto gather = [&](const torch::Tensor& yy, const torch::Tensor& xx) {
    const auto idx = (yy * static_cast<double>(w) + xx).to(torch::kInt64);
    return flat.gather(2, idx.unsqueeze(1).expand({B, C, J}));
  };
  const auto v00 = gather(y0, x0), v01 = gather(y0, x1);
  const auto v10 = gather(y1, x0), v11 = gather(y1, x1);
  const auto out = (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v01 +
                   (1.0 - fx) * fy * v10 + fx * fy * v11;
  return out.permute({0, 2, 1});
}

torch::Tensor assemble_joint_features(const torch::Tensor& sampled, const Pose3D& pose,
                                      const JointFeatureLayout& layout) {
  if (sampled.dim() != 3 || pose.joints.dim() != 3 || sampled.size(0) != pose.joints.size(0) ||
      sampled.size(1) != pose.joints.size(1)) {
    throw ShapeError("joint features and 3D pose disagree in batch or joint count");
  }
  const double xy_scale = layout.normalize_xy ? 1.0 / layout.crop_size : 1.0;
  const auto xy = pose.joints.narrow(2, 0, 2) * xy_scale;
  const auto z = pose.joints.narrow(2, 2, 1) / layout.depth_range;
  return torch::cat({sampled, xy.to(sampled.dtype()), z.to(sampled.dtype()),
                     pose.confidence.unsqueeze(-1).to(sampled.dtype())},
                    2);
}

JointGraphConvImpl::JointGraphConvImpl(const SkeletonGraph& graph, int in_channels,
                                       int out_channels) {
  const auto J = static_cast<std::int64_t>(graph.size());
  weight = register_parameter(
      "weight", torch::randn({J, out_channels, in_channels}) * std::sqrt(2.0 / in_channels));
  bn = register_module("bn", nn::BatchNorm1d(J * out_channels));
  adjacency_ = register_buffer("adjacency", graph.normalized_tensor(torch::kFloat32));
}

torch::Tensor JointGraphConvImpl::forward(const torch::Tensor& x) {
  const auto J = weight.size(0), C_out = weight.size(1);
  if (x.dim() != 3 || x.size(1) != J || x.size(2) != weight.size(2)) {
    throw ShapeError("graph conv input must be B x " + std::to_string(J) + " x " +
                     std::to_string(weight.size(2)));
  }
  const auto B = x.size(0);
  auto y = torch::einsum("joc,bjc->bjo", {weight, x});
  y = bn->forward(y.reshape({B, J * C_out})).reshape({B, J, C_out});
  return torch::relu(torch::matmul(adjacency_.to(y.dtype()), y));
}

GraphResidualBlockImpl::GraphResidualBlockImpl(const SkeletonGraph& graph, int channels) {
  conv1 = register_module("conv1", JointGraphConv(graph, channels, channels));
  conv2 = register_module("conv2", JointGraphConv(graph, channels, channels));
}

torch::Tensor GraphResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2->forward(conv1->forward(x));
}

GraphNetworkImpl::GraphNetworkImpl(const SkeletonGraph& graph, int in_channels,
                                   int hidden_channels, int num_residual_blocks) {
  input = register_module("input", JointGraphConv(graph, in_channels, hidden_channels));
  for (int i = 0; i < num_residual_blocks; ++i) {
    blocks.push_back(register_module("block" + std::to_string(i),
                                     GraphResidualBlock(graph, hidden_channels)));
  }
}

torch::Tensor GraphNetworkImpl::forward(const torch::Tensor& features) {
  auto x = input->forward(features);
  for (auto& block : blocks) x = block->forward(x);
  return x;
}

PoseParamHeadImpl::PoseParamHeadImpl(int num_graph_joints, int hidden_channels,
                                     int num_pose_joints)
    : num_pose_joints_(num_pose_joints) {
  const int in = num_graph_joints * hidden_channels;
  global_rot = register_module("global_rot", nn::Linear(in, 3));
  pose = register_module("pose", nn::Linear(in, 3 * num_pose_joints));
}

std::pair<torch::Tensor, torch::Tensor> PoseParamHeadImpl::forward(const torch::Tensor& hidden) {
  const auto flat = hidden.flatten(1);
  return {global_rot->forward(flat),
          pose->forward(flat).reshape({hidden.size(0), num_pose_joints_, 3})};
}

ShapeCamHeadImpl::ShapeCamHeadImpl(int feature_channels) {
  shape = register_module("shape", nn::Linear(feature_channels, kShapeDims));
  camera = register_module("camera", nn::Linear(feature_channels, 3));
}

std::pair<torch::Tensor, torch::Tensor> ShapeCamHeadImpl::forward(const FeatureMap& features) {
  const auto pooled = features.data.mean({2, 3});
  const auto raw = camera->forward(pooled);
  const auto cam = torch::cat({torch::softplus(raw.narrow(1, 0, 1)), raw.narrow(1, 1, 2)}, 1);
  return {shape->forward(pooled), cam};
}

HmrRegressorImpl::HmrRegressorImpl(int feature_channels, int hidden, int num_pose_joints)
    : num_pose_joints_(num_pose_joints) {
  mlp_ = register_module(
      "mlp", nn::Sequential(nn::Linear(feature_channels, hidden), nn::ReLU(),
                            nn::Linear(hidden, hidden), nn::ReLU(),
                            nn::Linear(hidden, 3 + 3 * num_pose_joints + kShapeDims + 3)));
}

ParamBatch HmrRegressorImpl::forward(const FeatureMap& features) {
  const auto out = mlp_->forward(features.data.mean({2, 3}));
  const auto B = out.size(0);
  const std::int64_t np = 3 * num_pose_joints_;
  ParamBatch p;
  p.theta_g = out.narrow(1, 0, 3);
  p.theta = out.narrow(1, 3, np).reshape({B, num_pose_joints_, 3});
  p.beta = out.narrow(1, 3 + np, kShapeDims);
  const auto raw = out.narrow(1, 3 + np + kShapeDims, 3);
  p.cam = torch::cat({torch::softplus(raw.narrow(1, 0, 1)), raw.narrow(1, 1, 2)}, 1);
  return p;
}

torch::Tensor project_weak_persp(const torch::Tensor& points, const torch::Tensor& cam,
                                 double crop_size) {
  if (points.dim() != 3 || points.size(2) != 3 || cam.dim() != 2 || cam.size(1) != 3) {
    throw ShapeError("project_weak_persp expects B x N x 3 points and B x 3 cameras");
  }
  const auto B = points.size(0);
  const auto s = cam.narrow(1, 0, 1).view({B, 1, 1});
  const auto t = cam.narrow(1, 1, 2).view({B, 1, 2});
  const double half = 0.5 * crop_size;
  return s * points.narrow(2, 0, 2) * half + half + t;
}

}  // namespace crowdmesh

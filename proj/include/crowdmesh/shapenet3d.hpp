#pragma once

// Joint-based body parameter regression.
//
// Per-joint image features are sampled from F' at the predicted 2D joint
// positions, concatenated with the 3D joint coordinates and confidences, and
// processed by a joint-specific graph convolution network on the skeleton.

#include <utility>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/guided_backbone.hpp"
#include "crowdmesh/posenet3d.hpp"

namespace crowdmesh {

struct SkeletonGraph {
  Eigen::MatrixXd adjacency;   // A, 0/1, symmetric, zero diagonal
  Eigen::MatrixXd normalized;  // D^-1/2 (A + I) D^-1/2
  std::vector<std::vector<int>> neighbors;  // N_j (excluding j)

  int size() const { return static_cast<int>(adjacency.rows()); }
  torch::Tensor normalized_tensor(torch::Dtype dtype = torch::kFloat32) const;
};

/// Throws ConfigError for out-of-range vertices, self loops, or a disconnected graph.
SkeletonGraph build_skeleton_graph(int num_vertices, const std::vector<std::pair<int, int>>& edges);

/// Bilinear sample of F' at crop-pixel positions xy (B x J x 2) -> B x J x C.
/// Sampling happens at (x / stride - 0.5, y / stride - 0.5) in cell units,
/// clamped to the border cells.
torch::Tensor sample_joint_features(const FeatureMap& features, const torch::Tensor& xy);

struct JointFeatureLayout {
  double crop_size = 64.0;
  double depth_range = 1000.0;
  bool normalize_xy = true;  // x, y divided by crop_size
};

/// [sampled | x, y, z | confidence] per joint -> B x J x (C + 4). z is divided
/// by depth_range; the last column is the confidence unchanged.
torch::Tensor assemble_joint_features(const torch::Tensor& sampled, const Pose3D& pose,
                                      const JointFeatureLayout& layout);

/// F_out_j = ReLU( sum_{i in N_j + j} a~_ji BN(W_i F_in_i) ), one W_i per vertex.
class JointGraphConvImpl : public torch::nn::Module {
 public:
  JointGraphConvImpl(const SkeletonGraph& graph, int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);  // B x J x C_in -> B x J x C_out

  torch::Tensor weight;  // J x C_out x C_in
  torch::nn::BatchNorm1d bn{nullptr};  // J * C_out features, statistics per joint and channel

 private:
  torch::Tensor adjacency_;  // buffer, J x J
};
TORCH_MODULE(JointGraphConv);

/// Two graph convolutions with an identity skip.
class GraphResidualBlockImpl : public torch::nn::Module {
 public:
  GraphResidualBlockImpl(const SkeletonGraph& graph, int channels);
  torch::Tensor forward(const torch::Tensor& x);

  JointGraphConv conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(GraphResidualBlock);

/// One graph convolution block followed by residual blocks.
class GraphNetworkImpl : public torch::nn::Module {
 public:
  GraphNetworkImpl(const SkeletonGraph& graph, int in_channels, int hidden_channels,
                   int num_residual_blocks = 4);
  torch::Tensor forward(const torch::Tensor& features);

  JointGraphConv input{nullptr};
  std::vector<GraphResidualBlock> blocks;
};
TORCH_MODULE(GraphNetwork);

/// Two independent affine heads on the flattened graph features.
class PoseParamHeadImpl : public torch::nn::Module {
 public:
  PoseParamHeadImpl(int num_graph_joints, int hidden_channels, int num_pose_joints);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& hidden);  // theta_g, theta

  torch::nn::Linear global_rot{nullptr};
  torch::nn::Linear pose{nullptr};

 private:
  int num_pose_joints_;
};
TORCH_MODULE(PoseParamHead);

/// Spatial average of F' followed by independent beta and camera heads.
/// The camera scale goes through softplus to stay positive.
class ShapeCamHeadImpl : public torch::nn::Module {
 public:
  explicit ShapeCamHeadImpl(int feature_channels);
  std::pair<torch::Tensor, torch::Tensor> forward(const FeatureMap& features);  // beta, cam

  torch::nn::Linear shape{nullptr};
  torch::nn::Linear camera{nullptr};
};
TORCH_MODULE(ShapeCamHead);

/// Baseline: global-average-pooled F' -> MLP -> all body parameters.
class HmrRegressorImpl : public torch::nn::Module {
 public:
  HmrRegressorImpl(int feature_channels, int hidden, int num_pose_joints);
  ParamBatch forward(const FeatureMap& features);

 private:
  int num_pose_joints_;
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(HmrRegressor);

/// Weak perspective: s * (x, y) * crop_size / 2 + crop_center + (tx, ty).
torch::Tensor project_weak_persp(const torch::Tensor& points, const torch::Tensor& cam,
                                 double crop_size);

}  // namespace crowdmesh

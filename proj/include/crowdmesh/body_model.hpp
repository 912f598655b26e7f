#pragma once

// Procedural capsule body with an SMPL-style parameter interface.
//
// The template is a chain of tapered tubes, one per canonical bone. Pose is
// per-joint axis-angle (global rotation plus one triplet per non-root joint),
// shape is a 10-dimensional blend space, and vertices are posed with linear
// blend skinning. Units are meters.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

namespace crowdmesh {

inline constexpr int kShapeDims = 10;

using MatrixX3dR = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatrixX3iR = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BodyModelConfig {
  int num_joints = 16;       // kinematic joints K, 8..16
  int rings_per_bone = 3;
  int verts_per_ring = 8;
  int regressor_neighbors = 8;
  double shape_rms = 0.03;   // RMS vertex displacement of a unit shape coefficient (m)

  int vertices_per_bone() const { return rings_per_bone * verts_per_ring; }
  void validate() const;
};

struct BodyModel {
  std::uint64_t seed = 0;
  BodyModelConfig config;

  MatrixX3dR template_vertices;     // V x 3
  MatrixXdR shape_dirs;             // (3V) x 10, row 3v+c is vertex v, coordinate c
  MatrixXdR skin_weights;           // V x K
  MatrixXdR joint_regressor;        // J_s x V
  std::vector<int> parents;         // K, -1 for root
  MatrixX3dR rest_joints;           // K x 3
  MatrixX3iR faces;                 // F x 3
  std::vector<int> kinematic_to_superset;  // K
  std::vector<int> vertex_bone;     // V, canonical bone owning each vertex

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int num_pose_joints() const { return num_joints() - 1; }
  int num_regressed_joints() const { return static_cast<int>(joint_regressor.rows()); }
  int num_bones() const;
};

/// Throws ConfigError for K outside [8, 16] or an empty ring layout.
BodyModel build_body_model(std::uint64_t seed, const BodyModelConfig& config = {});

void save_body_model(const BodyModel& model, const std::filesystem::path& path);
BodyModel load_body_model(const std::filesystem::path& path);

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle);
Eigen::Vector3d rotation_to_axis_angle(const Eigen::Matrix3d& rotation);

struct BodyParams {
  Eigen::Vector3d theta_g = Eigen::Vector3d::Zero();
  MatrixX3dR theta;  // K_pose x 3
  Eigen::Matrix<double, kShapeDims, 1> beta = Eigen::Matrix<double, kShapeDims, 1>::Zero();
  Eigen::Vector3d cam = Eigen::Vector3d::Zero();  // weak-perspective (s, tx, ty)

  static BodyParams zeros(int num_pose_joints);
  /// Flattened [theta_g | theta | beta | cam].
  std::vector<double> flatten() const;
  static BodyParams unflatten(const std::vector<double>& values, int num_pose_joints);
};

struct Mesh {
  MatrixX3dR vertices;
  MatrixX3iR faces;
};

/// Batched parameters as tensors: theta_g Bx3, theta BxK_posex3, beta Bx10, cam Bx3.
struct ParamBatch {
  torch::Tensor theta_g;
  torch::Tensor theta;
  torch::Tensor beta;
  torch::Tensor cam;

  std::int64_t batch_size() const { return theta_g.size(0); }
  ParamBatch to(torch::Dtype dtype) const;
  ParamBatch detach() const;
  static ParamBatch from_params(const std::vector<BodyParams>& params, torch::Dtype dtype);
  BodyParams at(std::int64_t index) const;
};

/// Per-joint rigid skinning transforms: posed = rotation * rest + translation.
struct RigidTransforms {
  torch::Tensor rotation;     // B x K x 3 x 3
  torch::Tensor translation;  // B x K x 3
};

/// Axis-angle N x 3 to rotation matrices N x 3 x 3. Smooth through zero.
torch::Tensor batch_rodrigues(const torch::Tensor& axis_angle);

/// Differentiable decoder over a fixed BodyModel. Immutable and shareable.
class BodyLayer {
 public:
  explicit BodyLayer(const BodyModel& model, torch::Dtype dtype = torch::kFloat32);

  torch::Dtype dtype() const { return dtype_; }
  int num_joints() const { return static_cast<int>(parents_.size()); }
  int num_pose_joints() const { return num_joints() - 1; }

  torch::Tensor shaped_vertices(const torch::Tensor& beta) const;  // B x V x 3
  torch::Tensor shaped_joints(const torch::Tensor& beta) const;    // B x K x 3

  RigidTransforms forward_kinematics(const torch::Tensor& theta_g, const torch::Tensor& theta,
                                     const torch::Tensor& joints) const;
  /// Forward kinematics about the unshaped rest joints.
  RigidTransforms forward_kinematics(const torch::Tensor& theta_g,
                                     const torch::Tensor& theta) const;
  torch::Tensor posed_joints(const RigidTransforms& transforms,
                             const torch::Tensor& joints) const;  // B x K x 3

  torch::Tensor decode(const ParamBatch& params) const;  // B x V x 3
  torch::Tensor regress_joints(const torch::Tensor& vertices) const;  // B x J_s x 3

  const torch::Tensor& template_vertices() const { return template_; }
  const torch::Tensor& rest_joints() const { return rest_joints_; }

 private:
  torch::Dtype dtype_;
  std::vector<int> parents_;
  torch::Tensor template_;        // V x 3
  torch::Tensor shape_dirs_;      // V x 3 x 10
  torch::Tensor skin_weights_;    // V x K
  torch::Tensor joint_regressor_; // J_s x V
  torch::Tensor kin_regressor_;   // K x V
  torch::Tensor rest_joints_;     // K x 3
};

Mesh decode_mesh(const BodyModel& model, const BodyParams& params);
MatrixX3dR regress_joints(const BodyModel& model, const Mesh& mesh);

}  // namespace crowdmesh

#pragma once

// End-to-end mesh recovery network and its ablation variants.
//
//   crop + 2D heatmaps -> guided backbone -> F'
//   F' -> 3D pose head -> soft-argmax -> P3D
//   F' sampled at P3D (x, y) + P3D + confidence -> graph network -> theta_g, theta
//   F' pooled -> beta, camera
//   body parameters -> mesh -> regressed joints -> weak-perspective 2D joints

#include <memory>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/guided_backbone.hpp"
#include "crowdmesh/posenet3d.hpp"
#include "crowdmesh/shapenet3d.hpp"

namespace crowdmesh {

enum class Variant {
  kGuided,     // full model
  kUnguided,   // heatmap input multiplied by zero
  kHmrStyle,   // pooled F' -> MLP -> all body parameters
  kNoPoseNet,  // joint features sampled at the input 2D pose, no 3D pose head
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::kGuided;
  int crop_size = 256;
  int early_channels = 64;      // C
  int feature_channels = 512;   // C'
  int blocks_per_stage = 2;
  int depth_bins = 16;          // D
  double depth_range_mm = 1000.0;
  int graph_hidden = 64;
  int graph_blocks = 4;
  int hmr_hidden = 256;
  bool normalize_xy = true;
  double heatmap_sigma = 2.5;   // heatmap cells
  double head_init_scale = 0.1;

  int heatmap_size() const { return crop_size / 4; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
  static ModelConfig desk();
};

/// Network input for a batch of person crops.
struct NetInput {
  torch::Tensor crop;       // B x 3 x S x S
  torch::Tensor heatmaps;   // B x J_s x S/4 x S/4
  torch::Tensor pose2d;     // B x J_c x 3: (x, y) crop pixels + confidence of the input pose
};

struct NetOutput {
  Pose3D pose3d;          // P3D (absent for kNoPoseNet)
  ParamBatch params;
  torch::Tensor vertices; // B x V x 3, model space
  torch::Tensor joints;   // B x J_s x 3, regressed from the mesh
  torch::Tensor joints2d; // B x J_s x 2, crop pixels
  FeatureMap early;       // F
  FeatureMap guided;      // F'
};

class CrowdMeshNetImpl : public torch::nn::Module {
 public:
  CrowdMeshNetImpl(const ModelConfig& config, const BodyModel& body);

  NetOutput forward(const NetInput& input);

  const ModelConfig& config() const { return config_; }
  const BodyLayer& body_layer() const { return *body_; }
  const BodyModel& body_model() const { return body_model_; }
  /// Moves parameters and the body decoder to `dtype`.
  void set_dtype(torch::Dtype dtype);

  GuidedBackbone backbone{nullptr};
  PoseHead pose_head{nullptr};
  GraphNetwork graph{nullptr};
  PoseParamHead pose_params{nullptr};
  ShapeCamHead shape_cam{nullptr};
  HmrRegressor hmr{nullptr};

 private:
  ModelConfig config_;
  BodyModel body_model_;
  std::shared_ptr<BodyLayer> body_;
};
TORCH_MODULE(CrowdMeshNet);

/// Backbone Kaiming init, default-initialized heads scaled by head_init_scale.
void initialize_network(CrowdMeshNetImpl& net);

}  // namespace crowdmesh

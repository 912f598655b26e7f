#include "crowdmesh/network.hpp"

#include "crowdmesh/errors.hpp"
#include "crowdmesh/joints.hpp"

namespace crowdmesh {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kGuided: return "guided";
    case Variant::kUnguided: return "unguided";
    case Variant::kHmrStyle: return "hmr_style";
    case Variant::kNoPoseNet: return "no_posenet";
  }
  return "guided";
}

Variant variant_from_name(const std::string& name) {
  if (name == "guided") return Variant::kGuided;
  if (name == "unguided") return Variant::kUnguided;
  if (name == "hmr_style" || name == "hmr_style_regressor") return Variant::kHmrStyle;
  if (name == "no_posenet") return Variant::kNoPoseNet;
  throw ConfigError("unknown model variant '" + name +
                    "' (expected guided, unguided, hmr_style or no_posenet)");
}

void ModelConfig::validate() const {
  if (crop_size <= 0 || crop_size % 16 != 0) throw ConfigError("crop_size must be a positive multiple of 16");
  BackboneConfig{early_channels, feature_channels, blocks_per_stage, joints::kSupersetSize}.validate();
  if (depth_bins < 2) throw ConfigError("depth_bins must be at least 2");
  if (!(depth_range_mm > 0.0)) throw ConfigError("depth_range_mm must be positive");
  if (graph_hidden <= 0 || graph_blocks < 0 || hmr_hidden <= 0) {
    throw ConfigError("graph/hmr sizes must be positive");
  }
  if (!(heatmap_sigma > 0.0)) throw ConfigError("heatmap_sigma must be positive");
  if (!(head_init_scale >= 0.0)) throw ConfigError("head_init_scale must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", variant_name(variant)},
          {"crop_size", crop_size},
          {"early_channels", early_channels},
          {"feature_channels", feature_channels},
          {"blocks_per_stage", blocks_per_stage},
          {"depth_bins", depth_bins},
          {"depth_range_mm", depth_range_mm},
          {"graph_hidden", graph_hidden},
          {"graph_blocks", graph_blocks},
          {"hmr_hidden", hmr_hidden},
          {"normalize_xy", normalize_xy},
          {"heatmap_sigma", heatmap_sigma},
          {"head_init_scale", head_init_scale}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  c.variant = variant_from_name(doc.value("variant", variant_name(c.variant)));
  c.crop_size = doc.value("crop_size", c.crop_size);
  c.early_channels = doc.value("early_channels", c.early_channels);
  c.feature_channels = doc.value("feature_channels", c.feature_channels);
  c.blocks_per_stage = doc.value("blocks_per_stage", c.blocks_per_stage);
  c.depth_bins = doc.value("depth_bins", c.depth_bins);
  c.depth_range_mm = doc.value("depth_range_mm", c.depth_range_mm);
  c.graph_hidden = doc.value("graph_hidden", c.graph_hidden);
  c.graph_blocks = doc.value("graph_blocks", c.graph_blocks);
  c.hmr_hidden = doc.value("hmr_hidden", c.hmr_hidden);
  c.normalize_xy = doc.value("normalize_xy", c.normalize_xy);
  c.heatmap_sigma = doc.value("heatmap_sigma", c.heatmap_sigma);
  c.head_init_scale = doc.value("head_init_scale", c.head_init_scale);
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.crop_size = 64;
  c.early_channels = 32;
  c.feature_channels = 128;
  c.depth_bins = 8;
  c.heatmap_sigma = 2.0;
  return c;
}

CrowdMeshNetImpl::CrowdMeshNetImpl(const ModelConfig& config, const BodyModel& body)
    : config_(config), body_model_(body) {
  config_.validate();
  body_ = std::make_shared<BodyLayer>(body_model_, torch::kFloat32);
  if (body_model_.num_regressed_joints() != joints::kSupersetSize) {
    throw ConfigError("body model regresses " + std::to_string(body_model_.num_regressed_joints()) +
                      " joints, the network expects the " +
                      std::to_string(joints::kSupersetSize) + "-joint superset");
  }
  const int Jc = joints::kCommonSize;
  const int Kp = body_model_.num_pose_joints();
  backbone = register_module(
      "backbone", GuidedBackbone(BackboneConfig{config_.early_channels, config_.feature_channels,
                                                config_.blocks_per_stage, joints::kSupersetSize}));
  if (config_.variant != Variant::kNoPoseNet) {
    pose_head = register_module("pose_head",
                                PoseHead(config_.feature_channels, Jc, config_.depth_bins));
  }
  if (config_.variant == Variant::kHmrStyle) {
    hmr = register_module("hmr", HmrRegressor(config_.feature_channels, config_.hmr_hidden, Kp));
  } else {
    const auto skeleton = build_skeleton_graph(Jc, joints::common_skeleton_edges());
    graph = register_module("graph", GraphNetwork(skeleton, config_.feature_channels + 4,
                                                  config_.graph_hidden, config_.graph_blocks));
    pose_params = register_module("pose_params", PoseParamHead(Jc, config_.graph_hidden, Kp));
    shape_cam = register_module("shape_cam", ShapeCamHead(config_.feature_channels));
  }
}

void CrowdMeshNetImpl::set_dtype(torch::Dtype dtype) {
  this->to(dtype);
  body_ = std::make_shared<BodyLayer>(body_model_, dtype);
}

NetOutput CrowdMeshNetImpl::forward(const NetInput& input) {
  const double S = config_.crop_size;
  auto heatmaps = input.heatmaps;
  if (config_.variant == Variant::kUnguided) heatmaps = heatmaps * 0.0;

  NetOutput out;
  auto features = backbone->forward(input.crop, heatmaps);
  out.early = features.early;
  out.guided = features.guided;
  const JointFeatureLayout layout{S, config_.depth_range_mm, config_.normalize_xy};

  if (config_.variant != Variant::kNoPoseNet) {
    out.pose3d = soft_argmax3d(pose_head->forward(out.guided), out.guided.stride,
                               config_.depth_range_mm);
  }

  if (config_.variant == Variant::kHmrStyle) {
    out.params = hmr->forward(out.guided);
  } else {
    Pose3D source = out.pose3d;
    if (config_.variant == Variant::kNoPoseNet) {
      if (!input.pose2d.defined() || input.pose2d.dim() != 3 ||
          input.pose2d.size(1) != joints::kCommonSize || input.pose2d.size(2) != 3) {
        throw ShapeError("no_posenet variant needs the input 2D pose as B x J_c x 3");
      }
      const auto xy = input.pose2d.narrow(2, 0, 2).to(out.guided.data.dtype());
      source.joints = torch::cat({xy, torch::zeros_like(xy.narrow(2, 0, 1))}, 2);
      source.confidence = input.pose2d.select(2, 2).to(out.guided.data.dtype());
    }
    const auto sampled = sample_joint_features(out.guided, source.joints.narrow(2, 0, 2));
    const auto fs = assemble_joint_features(sampled, source, layout);
    const auto hidden = graph->forward(fs);
    auto [theta_g, theta] = pose_params->forward(hidden);
    auto [beta, cam] = shape_cam->forward(out.guided);
    out.params = {theta_g, theta, beta, cam};
  }

  out.vertices = body_->decode(out.params);
  out.joints = body_->regress_joints(out.vertices);
  const auto centered = out.joints - out.joints.select(1, joints::kRoot).unsqueeze(1);
  out.joints2d = project_weak_persp(centered, out.params.cam, S);
  return out;
}

void initialize_network(CrowdMeshNetImpl& net) {
  torch::NoGradGuard no_grad;
  kaiming_init(*net.backbone);
  const double s = net.config().head_init_scale;
  auto scale = [s](torch::nn::Linear& l) {
    l->weight.mul_(s);
    if (l->bias.defined()) l->bias.mul_(s);
  };
  if (net.pose_params) {
    scale(net.pose_params->global_rot);
    scale(net.pose_params->pose);
  }
  if (net.shape_cam) {
    scale(net.shape_cam->shape);
    scale(net.shape_cam->camera);
  }
  if (net.hmr) {
    for (auto& m : net.hmr->modules(false)) {
      if (auto* l = m->as<torch::nn::Linear>()) {
        if (l->weight.size(0) != net.config().hmr_hidden) {
          l->weight.mul_(s);
          l->bias.mul_(s);
        }
      }
    }
  }
}

}  // namespace crowdmesh

#include "crowdmesh/guided_backbone.hpp"

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

}  // namespace

void BackboneConfig::validate() const {
  if (early_channels <= 0 || feature_channels <= 0 || heatmap_channels < 0) {
    throw ConfigError("backbone channel counts must be positive");
  }
  if (feature_channels % 2 != 0) throw ConfigError("feature_channels must be even");
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be at least 1");
}

EarlyStageImpl::EarlyStageImpl(int out_channels) {
  conv_ = register_module("conv", conv(3, out_channels, 7, 2, 3));
  bn_ = register_module("bn", nn::BatchNorm2d(out_channels));
}

FeatureMap EarlyStageImpl::forward(const torch::Tensor& crop) {
  if (crop.dim() != 4 || crop.size(1) != 3) throw ShapeError("crop must be B x 3 x H x W");
  if (crop.size(2) % 16 != 0 || crop.size(3) % 16 != 0) {
    throw ShapeError("crop height and width must be divisible by 16, got " +
                     std::to_string(crop.size(2)) + "x" + std::to_string(crop.size(3)));
  }
  auto x = torch::relu(bn_->forward(conv_->forward(crop)));
  x = torch::max_pool2d(x, {3, 3}, {2, 2}, {1, 1});
  return {x, 4};
}

FusionBlockImpl::FusionBlockImpl(int feature_channels, int heatmap_channels)
    : feature_channels_(feature_channels), heatmap_channels_(heatmap_channels) {
  conv_ = register_module("conv", conv(feature_channels + heatmap_channels, feature_channels, 3, 1, 1));
  bn_ = register_module("bn", nn::BatchNorm2d(feature_channels));
}

FeatureMap FusionBlockImpl::forward(const FeatureMap& features, const torch::Tensor& heatmaps) {
  const auto& f = features.data;
  if (heatmaps.dim() != 4 || heatmaps.size(1) != heatmap_channels_) {
    throw ShapeError("heatmaps must be B x " + std::to_string(heatmap_channels_) + " x H x W");
  }
  if (f.size(0) != heatmaps.size(0) || f.size(2) != heatmaps.size(2) ||
      f.size(3) != heatmaps.size(3)) {
    throw ShapeError("heatmap spatial size " + std::to_string(heatmaps.size(2)) + "x" +
                     std::to_string(heatmaps.size(3)) + " does not match feature size " +
                     std::to_string(f.size(2)) + "x" + std::to_string(f.size(3)));
  }
  const auto cat = torch::cat({f, heatmaps.to(f.dtype())}, 1);
  return {torch::relu(bn_->forward(conv_->forward(cat))), features.stride};
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int out_channels, int stride) {
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3, stride, 1));
  bn1_ = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3, 1, 1));
  bn2_ = register_module("bn2", nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    proj_ = register_module("proj", conv(in_channels, out_channels, 1, stride, 0));
    proj_bn_ = register_module("proj_bn", nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_->forward(conv1_->forward(x)));
  y = bn2_->forward(conv2_->forward(y));
  const auto skip = proj_ ? proj_bn_->forward(proj_->forward(x)) : x;
  return torch::relu(y + skip);
}

LateStageImpl::LateStageImpl(int in_channels, int out_channels, int blocks_per_stage) {
  blocks_ = register_module("blocks", nn::Sequential());
  int channels = in_channels;
  for (int target : {out_channels / 2, out_channels}) {
    for (int b = 0; b < blocks_per_stage; ++b) {
      blocks_->push_back(ResidualBlock(channels, target, b == 0 ? 2 : 1));
      channels = target;
    }
  }
}

FeatureMap LateStageImpl::forward(const FeatureMap& fused) {
  if (fused.data.size(2) % 4 != 0 || fused.data.size(3) % 4 != 0) {
    throw ShapeError("late stage input must have spatial dims divisible by 4");
  }
  return {blocks_->forward(fused.data), fused.stride * 4};
}

GuidedBackboneImpl::GuidedBackboneImpl(const BackboneConfig& config) : config_(config) {
  config.validate();
  early_ = register_module("early", EarlyStage(config.early_channels));
  fusion_ = register_module("fusion", FusionBlock(config.early_channels, config.heatmap_channels));
  late_ = register_module(
      "late", LateStage(config.early_channels, config.feature_channels, config.blocks_per_stage));
}

BackboneOutput GuidedBackboneImpl::forward(const torch::Tensor& crop, const torch::Tensor& heatmaps) {
  BackboneOutput out;
  out.early = early_->forward(crop);
  out.guided = late_->forward(fusion_->forward(out.early, heatmaps));
  return out;
}

void kaiming_init(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/true)) {
    if (auto* c = child->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* l = child->as<nn::Linear>()) {
      nn::init::kaiming_normal_(l->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (l->bias.defined()) l->bias.zero_();
    }
  }
}

}  // namespace crowdmesh

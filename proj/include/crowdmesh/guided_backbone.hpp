#pragma once

// 2D-pose-guided image feature extractor.
//
// The residual backbone is split after its stem: early features F (stride 4)
// are concatenated with the 2D pose heatmaps, fused back to C channels by a
// 3x3 conv block, and the remaining residual stages produce F' (stride 16).

#include <cstdint>

#include <torch/torch.h>

namespace crowdmesh {

struct BackboneConfig {
  int early_channels = 32;     // C
  int feature_channels = 128;  // C'
  int blocks_per_stage = 2;
  int heatmap_channels = 19;   // J_s

  void validate() const;
};

/// Backbone activations with their stride in crop pixels.
struct FeatureMap {
  torch::Tensor data;  // B x C x h x w
  int stride = 4;
};

/// First convolution (stride 2) and max-pooling (stride 2).
class EarlyStageImpl : public torch::nn::Module {
 public:
  explicit EarlyStageImpl(int out_channels);
  FeatureMap forward(const torch::Tensor& crop);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(EarlyStage);

/// Channel concat of F and H2D followed by conv3x3-BN-ReLU back to C channels.
class FusionBlockImpl : public torch::nn::Module {
 public:
  FusionBlockImpl(int feature_channels, int heatmap_channels);
  FeatureMap forward(const FeatureMap& features, const torch::Tensor& heatmaps);

 private:
  int feature_channels_;
  int heatmap_channels_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(FusionBlock);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in_channels, int out_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Conv2d proj_{nullptr};
  torch::nn::BatchNorm2d proj_bn_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Two residual stages, each opening with a stride-2 block.
class LateStageImpl : public torch::nn::Module {
 public:
  LateStageImpl(int in_channels, int out_channels, int blocks_per_stage);
  FeatureMap forward(const FeatureMap& fused);

 private:
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(LateStage);

struct BackboneOutput {
  FeatureMap early;   // F
  FeatureMap guided;  // F'
};

class GuidedBackboneImpl : public torch::nn::Module {
 public:
  explicit GuidedBackboneImpl(const BackboneConfig& config);
  BackboneOutput forward(const torch::Tensor& crop, const torch::Tensor& heatmaps);

  EarlyStage early() const { return early_; }
  FusionBlock fusion() const { return fusion_; }
  LateStage late() const { return late_; }

 private:
  BackboneConfig config_;
  EarlyStage early_{nullptr};
  FusionBlock fusion_{nullptr};
  LateStage late_{nullptr};
};
TORCH_MODULE(GuidedBackbone);

/// Kaiming fan-in normal init for every conv/linear weight, zero biases.
void kaiming_init(torch::nn::Module& module);

}  // namespace crowdmesh

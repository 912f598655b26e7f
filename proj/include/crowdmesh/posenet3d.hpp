#pragma once

#include <torch/torch.h>

#include "crowdmesh/guided_backbone.hpp"

namespace crowdmesh {

/// Volumetric heatmap logits, B x J_c x D x h x w (before softmax).
struct Heatmap3D {
  torch::Tensor volume;
  int depth_bins() const { return static_cast<int>(volume.size(2)); }
};

/// Per-joint coordinates: x, y in crop pixels, z root-relative depth in mm.
struct Pose3D {
  torch::Tensor joints;      // B x J x 3
  torch::Tensor confidence;  // B x J, in (0, 1]
};

/// 1x1 convolution producing J_c * D channels, reshaped into a volume.
class PoseHeadImpl : public torch::nn::Module {
 public:
  PoseHeadImpl(int in_channels, int num_joints, int depth_bins);
  Heatmap3D forward(const FeatureMap& features);

  int num_joints() const { return num_joints_; }
  int depth_bins() const { return depth_bins_; }

 private:
  int num_joints_;
  int depth_bins_;
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(PoseHead);

/// Integral (soft-argmax) decoding of a logit volume.
///
/// Per joint the volume is softmax-normalized over all D*h*w cells.
/// x = (E[col] + 0.5) * stride, y = (E[row] + 0.5) * stride,
/// z = (E[bin] / (D - 1) - 0.5) * 2 * depth_range, confidence = max probability.
Pose3D soft_argmax3d(const Heatmap3D& heatmap, int stride, double depth_range);

/// Softmax-normalized probability volume with the input's shape.
torch::Tensor normalize_volume(const Heatmap3D& heatmap);

}  // namespace crowdmesh

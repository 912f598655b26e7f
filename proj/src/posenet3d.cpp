#include "crowdmesh/posenet3d.hpp"

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

PoseHeadImpl::PoseHeadImpl(int in_channels, int num_joints, int depth_bins)
    : num_joints_(num_joints), depth_bins_(depth_bins) {
  if (num_joints <= 0 || depth_bins < 2) {
    throw ConfigError("pose head needs at least one joint and two depth bins");
  }
  conv_ = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, num_joints * depth_bins, 1)));
}

Heatmap3D PoseHeadImpl::forward(const FeatureMap& features) {
  const auto& x = features.data;
  const auto out = conv_->forward(x);
  return {out.reshape({x.size(0), num_joints_, depth_bins_, x.size(2), x.size(3)})};
}

torch::Tensor normalize_volume(const Heatmap3D& heatmap) {
  const auto& v = heatmap.volume;
  return torch::softmax(v.flatten(2), 2).reshape(v.sizes());
}

Pose3D soft_argmax3d(const Heatmap3D& heatmap, int stride, double depth_range) {
  const auto& v = heatmap.volume;
  if (v.dim() != 5) throw ShapeError("3D heatmap must be B x J x D x h x w");
  if (!(depth_range > 0.0)) throw ConfigError("depth_range must be positive");
  const auto D = v.size(2), h = v.size(3), w = v.size(4);
  if (D < 2) throw ShapeError("3D heatmap needs at least two depth bins");

  const auto prob = normalize_volume(heatmap);
  const auto opts = v.options();
  const auto px = prob.sum({2, 3});  // B x J x w
  const auto py = prob.sum({2, 4});  // B x J x h
  const auto pz = prob.sum({3, 4});  // B x J x D
  const auto ex = (px * torch::arange(w, opts)).sum(-1);
  const auto ey = (py * torch::arange(h, opts)).sum(-1);
  const auto ez = (pz * torch::arange(D, opts)).sum(-1);

  Pose3D pose;
  pose.joints = torch::stack({(ex + 0.5) * stride, (ey + 0.5) * stride,
                              (ez / static_cast<double>(D - 1) - 0.5) * (2.0 * depth_range)},
                             -1);
  pose.confidence = std::get<0>(prob.flatten(2).max(2));
  return pose;
}

}  // namespace crowdmesh

#include "crowdmesh/losses.hpp"

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace {

LossTerm masked_l1(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid) {
  if (pred.sizes() != gt.sizes() || pred.sizes() != valid.sizes()) {
    throw ShapeError("loss inputs disagree in shape");
  }
  const auto gt_safe = torch::where(valid, gt.to(pred.dtype()), pred.detach());
  const auto diff = torch::where(valid, (pred - gt_safe).abs(), torch::zeros_like(pred));
  const auto count = valid.sum().item<std::int64_t>();
  if (count == 0) return {(diff.sum() * 0.0), true};
  return {diff.sum() / static_cast<double>(count), false};
}

torch::Tensor per_sample(const torch::Tensor& flags, const torch::Tensor& like) {
  // B -> B x (broadcast to like)
  auto f = flags.to(torch::kBool);
  for (std::int64_t d = 1; d < like.dim(); ++d) f = f.unsqueeze(-1);
  return f.expand(like.sizes());
}

}  // namespace

SupervisionMask SupervisionMask::all_valid(std::int64_t batch, std::int64_t joints) {
  const auto opts = torch::TensorOptions().dtype(torch::kBool);
  return {torch::ones({batch, joints}, opts), torch::ones({batch, joints}, opts),
          torch::ones({batch}, opts), torch::ones({batch}, opts), torch::ones({batch}, opts)};
}

void SupervisionMask::validate() const {
  if (z_valid.defined() && xy_valid.defined()) {
    if ((z_valid.to(torch::kBool) & ~xy_valid.to(torch::kBool)).any().item<bool>()) {
      throw ShapeError("z-valid joints must also be xy-valid");
    }
  }
}

LossTerm loss_pose(const torch::Tensor& pred, const torch::Tensor& gt, const SupervisionMask& mask) {
  mask.validate();
  if (pred.dim() != 3 || pred.size(2) != 3) throw ShapeError("pose loss expects B x J x 3");
  const auto xy = mask.xy_valid.to(torch::kBool).unsqueeze(-1).expand({-1, -1, 2});
  const auto z = mask.z_valid.to(torch::kBool).unsqueeze(-1);
  return masked_l1(pred, gt, torch::cat({xy, z}, 2));
}

LossTerm loss_param(const ParamBatch& pred, const ParamBatch& gt, const SupervisionMask& mask) {
  const auto p = torch::cat({pred.theta_g, pred.theta.flatten(1), pred.beta}, 1);
  const auto g = torch::cat({gt.theta_g, gt.theta.flatten(1), gt.beta}, 1);
  const auto valid = torch::cat({per_sample(mask.theta_g_valid, pred.theta_g),
                                 per_sample(mask.theta_valid, pred.theta.flatten(1)),
                                 per_sample(mask.beta_valid, pred.beta)},
                                1);
  return masked_l1(p, g, valid);
}

CoordShapeLoss loss_coord_shape(const torch::Tensor& pred3d, const torch::Tensor& pred2d,
                                const torch::Tensor& gt3d, const torch::Tensor& gt2d,
                                const SupervisionMask& mask, int root_index) {
  mask.validate();
  if (root_index < 0 || root_index >= pred3d.size(1)) throw ShapeError("root index out of range");
  // a sample's 3D term needs its root so that centering never reads masked GT
  const auto z = mask.z_valid.to(torch::kBool);
  const auto valid3d = (z & z.select(1, root_index).unsqueeze(1)).unsqueeze(-1).expand_as(pred3d);
  const auto root_valid = valid3d.select(1, root_index).unsqueeze(1).expand_as(gt3d);
  const auto gt_root = torch::where(root_valid, gt3d.select(1, root_index).unsqueeze(1).expand_as(gt3d),
                                    torch::zeros_like(gt3d));
  const auto pred_c = pred3d - pred3d.select(1, root_index).unsqueeze(1);
  const auto gt_c = torch::where(valid3d, gt3d - gt_root, torch::zeros_like(gt3d));

  CoordShapeLoss out;
  out.coord3d = masked_l1(pred_c, gt_c, valid3d);
  const auto valid2d = mask.xy_valid.to(torch::kBool).unsqueeze(-1).expand_as(pred2d);
  out.coord2d = masked_l1(pred2d, gt2d, valid2d);
  out.value = out.coord3d.value + out.coord2d.value;
  return out;
}

torch::Tensor total_loss(std::span<const torch::Tensor> parts, std::span<const double> weights) {
  if (parts.size() != weights.size() || parts.empty()) {
    throw ShapeError("total_loss needs one weight per part");
  }
  torch::Tensor sum;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw ConfigError("loss weights must be non-negative");
    const auto term = parts[i] * weights[i];
    sum = sum.defined() ? sum + term : term;
  }
  return sum;
}

}  // namespace crowdmesh

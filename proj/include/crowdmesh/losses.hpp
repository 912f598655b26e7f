#pragma once

// Masked L1 training losses with mixed 2D/3D supervision.
//
// Every term is a mean over its valid entries only; masked-out entries never
// reach the arithmetic, so their values cannot influence the loss.

#include <span>
#include <vector>

#include <torch/torch.h>

#include "crowdmesh/body_model.hpp"

namespace crowdmesh {

struct SupervisionMask {
  torch::Tensor xy_valid;  // B x J bool
  torch::Tensor z_valid;   // B x J bool, implies xy_valid
  torch::Tensor theta_g_valid;  // B bool
  torch::Tensor theta_valid;    // B bool
  torch::Tensor beta_valid;     // B bool

  static SupervisionMask all_valid(std::int64_t batch, std::int64_t joints);
  /// Throws ShapeError when z_valid is set on a joint whose xy is invalid.
  void validate() const;
};

struct LossTerm {
  torch::Tensor value;        // scalar
  bool no_valid_entries = false;
};

/// L1 between predicted and GT joint coordinates; z dropped where z-invalid.
LossTerm loss_pose(const torch::Tensor& pred, const torch::Tensor& gt, const SupervisionMask& mask);

/// L1 over theta_g, theta and beta entries of valid samples (the camera is excluded).
LossTerm loss_param(const ParamBatch& pred, const ParamBatch& gt, const SupervisionMask& mask);

struct CoordShapeLoss {
  LossTerm coord3d;
  LossTerm coord2d;
  torch::Tensor value;  // coord3d + coord2d
};

/// 3D term on root-centered joints (z_valid mask, root must be valid) plus a
/// 2D reprojection term (xy_valid mask).
CoordShapeLoss loss_coord_shape(const torch::Tensor& pred3d, const torch::Tensor& pred2d,
                                const torch::Tensor& gt3d, const torch::Tensor& gt2d,
                                const SupervisionMask& mask, int root_index);

/// Weighted sum; weights must be non-negative and match the part count.
torch::Tensor total_loss(std::span<const torch::Tensor> parts, std::span<const double> weights);

}  // namespace crowdmesh

#pragma once

// Per-person input preparation, training targets and batching.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "crowdmesh/config.hpp"
#include "crowdmesh/losses.hpp"
#include "crowdmesh/network.hpp"
#include "crowdmesh/scenegen.hpp"

namespace crowdmesh {

/// Network input for one person, derived from an image and a superset 2D pose.
struct PreparedInput {
  torch::Tensor crop;      // 3 x S x S
  torch::Tensor heatmaps;  // J_s x S/4 x S/4
  torch::Tensor pose2d;    // J_c x 3: crop pixels + confidence (0 below keep threshold)
  Affine2 affine;          // image pixels -> crop pixels
  BBox bbox;
  Pose2D pose;             // the superset pose that was used, image pixels
};

/// Throws DegeneratePoseError when too few joints pass the keep threshold.
/// `bbox` replaces the pose-derived box when given.
PreparedInput prepare_input(const torch::Tensor& image, const Pose2D& superset_pose,
                            const ModelConfig& model, const DataConfig& data,
                            const std::optional<BBox>& bbox = std::nullopt);

struct PreparedSample {
  std::string id;          // "<scene id>/<person index>"
  PreparedInput input;
  torch::Tensor pose_target;   // J_c x 3: x/S, y/S, root-relative z / depth range
  torch::Tensor pose_xy_valid; // J_c bool: GT joint inside the crop
  torch::Tensor pose_z_valid;  // J_c bool
  BodyParams params;
  torch::Tensor joints3d;      // J_s x 3, root-relative, meters
  torch::Tensor joints2d;      // J_s x 2, crop pixels / S
};

/// Targets for person `index` of `scene`. With `rng`, the input pose gets
/// synthesized estimator errors and the box gets the configured jitter; if the
/// errors leave a degenerate pose the clean pose is used instead.
PreparedSample prepare_sample(const SceneSample& scene, std::size_t index,
                              const ModelConfig& model, const DataConfig& data,
                              std::mt19937_64* rng);

struct Batch {
  std::vector<std::string> ids;
  NetInput input;
  torch::Tensor pose_target;
  SupervisionMask pose_mask;   // J_c
  ParamBatch params;
  torch::Tensor joints3d;
  torch::Tensor joints2d;
  SupervisionMask shape_mask;  // J_s
};

Batch collate(std::span<const PreparedSample> samples);

struct LossBreakdown {
  torch::Tensor total;
  double pose = 0.0;
  double param = 0.0;
  double coord = 0.0;
  double coord3d = 0.0;
  double coord2d = 0.0;
};

/// Weighted pose + param + coordinate loss. The pose term is skipped for
/// variants without a 3D pose head.
LossBreakdown compute_losses(const NetOutput& out, const Batch& batch, const ModelConfig& model,
                             const LossWeights& weights);

struct PersonRef {
  std::size_t scene = 0;
  std::size_t person = 0;
};

struct LoadedSplit {
  std::string name;
  std::vector<SceneSample> scenes;
  std::vector<PersonRef> persons;
};

/// Reads every scene of a split. `max_persons` > 0 keeps the first persons only.
LoadedSplit load_split(const DatasetIndex& index, const std::string& split,
                       std::size_t max_persons = 0);

}  // namespace crowdmesh

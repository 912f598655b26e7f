#pragma once

// 2D pose input preparation: superset mapping, error synthesis, masked
// Gaussian heatmaps, pose-derived boxes and crops.
//
// Pixel convention: continuous coordinates, pixel (i, j) covers
// [i, i+1) x [j, j+1) and its center is (i + 0.5, j + 0.5).

#include <random>
#include <span>
#include <string>

#include <Eigen/Core>
#include <torch/torch.h>

#include "crowdmesh/joints.hpp"

namespace crowdmesh {

using MatrixX2dR = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Affine2 = Eigen::Matrix<double, 2, 3>;

inline constexpr double kDefaultKeepThreshold = 0.1;

struct Pose2D {
  MatrixX2dR joints;          // J x 2, pixels
  Eigen::VectorXd confidence; // J, in [0, 1]
  std::string joint_set = "superset";

  int size() const { return static_cast<int>(joints.rows()); }
  static Pose2D empty(int num_joints, std::string joint_set = "superset");
  Pose2D transformed(const Affine2& affine) const;
};

struct Heatmap2D {
  torch::Tensor maps;  // J x H x W, float32
  double sigma = 2.0;  // heatmap pixels
};

struct BBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Eigen::Vector2d center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  bool valid() const { return x_max > x_min && y_max > y_min; }
};

Pose2D map_to_superset(const Pose2D& pose, const JointSetRegistry& registry);
/// Inverse direction: pick the joints of `joint_set` out of a superset pose.
/// Joints of the set without a superset counterpart get confidence 0.
Pose2D project_from_superset(const Pose2D& superset_pose, const std::string& joint_set,
                             const JointSetRegistry& registry);

struct PoseErrorConfig {
  double jitter_prob = 0.25;
  double jitter_sigma = 0.0;            // pixels; used when > 0
  double jitter_sigma_bbox_frac = 0.05; // otherwise this fraction of the tight box diagonal
  double miss_prob = 0.1;
  double inversion_prob = 0.05;
  double swap_prob = 0.05;
  double keep_threshold = kDefaultKeepThreshold;

  void validate() const;
  static PoseErrorConfig none();
};

/// Mimics a bottom-up 2D estimator. Only joints with confidence >= keep_threshold
/// are perturbed. `others` are superset poses of other people in the scene.
Pose2D synthesize_pose_errors(const Pose2D& gt, std::mt19937_64& rng,
                              const PoseErrorConfig& config,
                              std::span<const Pose2D> others = {});

/// Amplitude-1 Gaussian per joint on an H x W grid. `input_width/height` is
/// the resolution the pose coordinates live in (the crop).
Heatmap2D make_heatmaps(const Pose2D& pose, int height, int width, double sigma,
                        double keep_threshold, double input_width, double input_height);

/// Tight box over the joints with confidence >= keep_threshold.
BBox tight_bbox(const Pose2D& pose, double keep_threshold = kDefaultKeepThreshold);

/// Tight box, scaled by margin_factor about its center, then padded on the
/// short side to the width:height aspect ratio.
BBox bbox_from_pose(const Pose2D& pose, double margin_factor,
                    double keep_threshold = kDefaultKeepThreshold, double aspect_ratio = 1.0);

struct CropResult {
  torch::Tensor image;  // 3 x out_h x out_w, float32
  Affine2 affine;       // original pixels -> crop pixels
};

/// Bilinear resampling of `bbox` from an H x W x 3 image; zeros outside.
CropResult crop_and_resize(const torch::Tensor& image, const BBox& bbox, int out_height,
                           int out_width);

Eigen::Vector2d apply_affine(const Affine2& affine, const Eigen::Vector2d& p);
Affine2 invert_affine(const Affine2& affine);

}  // namespace crowdmesh

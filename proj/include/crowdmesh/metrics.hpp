#pragma once

// Evaluation metrics (millimeters) and crowd statistics.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/pose2d_prep.hpp"

namespace crowdmesh {

inline constexpr double kDefaultPckThresholdMm = 150.0;

/// Mean Euclidean distance per row. Inputs are expected root-centered.
double mpjpe(const MatrixX3dR& pred, const MatrixX3dR& gt);

struct SimilarityAlignment {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  MatrixX3dR aligned;  // scale * rotation * pred + translation
};

/// Least-squares similarity (Umeyama) with det(rotation) = +1.
/// Throws AlignmentError for fewer than 3 points, collinear gt, or a collapsed pred.
SimilarityAlignment procrustes_align(const MatrixX3dR& pred, const MatrixX3dR& gt);

double pa_mpjpe(const MatrixX3dR& pred, const MatrixX3dR& gt);

/// Percentage of rows within threshold (inclusive) of gt, no alignment.
double pck3d(const MatrixX3dR& pred, const MatrixX3dR& gt,
             double threshold_mm = kDefaultPckThresholdMm);

/// Mean per-vertex distance; throws ShapeError on a topology mismatch.
double mpvpe(const Mesh& pred, const Mesh& gt);

MatrixX3dR root_center(const MatrixX3dR& points, int root_index);

/// Other people's joints over the target's joints, both counted inside `box`
/// (boundary inclusive, joints with confidence > 0).
double crowd_index(const Pose2D& target, std::span<const Pose2D> others, const BBox& box);

double bbox_iou(const BBox& a, const BBox& b);

/// Per-sample prediction/GT interchange record. Coordinates in mm, root-centered.
struct PredictionRecord {
  std::string sample_id;
  std::string sequence;
  MatrixX3dR pred_joints;
  MatrixX3dR gt_joints;
  MatrixX3dR pred_vertices;  // may be empty
  MatrixX3dR gt_vertices;

  nlohmann::json to_json() const;
  static PredictionRecord from_json(const nlohmann::json& doc);
};

struct SampleMetrics {
  std::string sample_id;
  std::string sequence;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double pck3d_percent = 0.0;
  double mpvpe_mm = 0.0;
};

struct SequenceMetrics {
  std::string sequence;
  std::size_t n_samples = 0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double pck3d_percent = 0.0;
  double mpvpe_mm = 0.0;
};

struct MetricsReport {
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double pck3d_percent = 0.0;
  double mpvpe_mm = 0.0;
  std::size_t n_samples = 0;
  double pck_threshold_mm = kDefaultPckThresholdMm;
  std::vector<SequenceMetrics> sequences;
  std::vector<SampleMetrics> samples;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& doc);
  /// Fixed-width text table: summary line followed by the per-sequence rows.
  std::string to_table() const;
};

MetricsReport compute_report(std::span<const PredictionRecord> records,
                             double pck_threshold_mm = kDefaultPckThresholdMm);

}  // namespace crowdmesh

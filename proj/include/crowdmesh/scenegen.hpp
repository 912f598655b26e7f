#pragma once

// Synthetic crowd scenes: posed body-model instances placed with a target
// bounding-box overlap, rendered by z-buffered triangle rasterization, with
// exact 3D/2D ground truth.
//
// Camera space: meters, x right, y down, z forward (away from the camera).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/pose2d_prep.hpp"

namespace crowdmesh {

inline constexpr int kSceneFormatVersion = 1;

struct PinholeCamera {
  double focal = 500.0;  // pixels
  double cx = 128.0;
  double cy = 128.0;
  int width = 256;
  int height = 256;

  Eigen::Vector2d project(const Eigen::Vector3d& p) const {
    return {focal * p.x() / p.z() + cx, focal * p.y() / p.z() + cy};
  }
};

struct SceneConfig {
  int image_size = 256;
  double focal = 500.0;
  int n_persons = 2;
  double overlap_target = 0.4;
  double iou_tolerance = 0.15;
  int max_attempts = 100;
  double depth_min = 4.5;   // m
  double depth_max = 6.0;
  double pose_range = 0.6;  // rad, per axis-angle component
  double shape_range = 2.0;
  double yaw_range = 0.8;   // rad, global rotation about the vertical axis
  double tilt_range = 0.15; // rad, about the other two axes
  double background_noise = 0.03;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& doc);
};

struct ScenePerson {
  BodyParams params;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // model origin in camera space
  MatrixX3dR joints3d;   // J_s x 3, camera space (m)
  MatrixX3dR gt_pose3d;  // J_s x 3, root-relative (mm)
  MatrixX2dR gt_pose2d;  // J_s x 2, image pixels
  std::vector<std::uint8_t> visibility;  // J_s
  torch::Tensor silhouette;  // H x W uint8, pixels this person owns in the render

  /// Tight box over all projected joints.
  BBox bbox() const;
  /// Superset Pose2D; confidence 1 inside the image and 0 outside.
  Pose2D pose2d(int image_width, int image_height) const;
};

struct SceneSample {
  std::string id;
  std::uint64_t seed = 0;
  PinholeCamera camera;
  torch::Tensor image;  // H x W x 3 float32 in [0, 1]
  std::vector<ScenePerson> persons;
  bool placement_best_effort = false;
  double overlap_target = 0.0;

  int width() const { return camera.width; }
  int height() const { return camera.height; }
};

struct RenderPerson {
  MatrixX3dR vertices;  // camera space
  std::array<float, 3> color{0.8f, 0.3f, 0.3f};
};

struct RenderResult {
  torch::Tensor image;        // H x W x 3 float32
  torch::Tensor owner;        // H x W int32, -1 for background
  torch::Tensor depth;        // H x W float32, +inf for background
  std::vector<torch::Tensor> silhouettes;  // per person, H x W uint8
};

/// Z-buffered rasterization of every person's mesh over `canvas` (H x W x 3).
/// Shading is flat per face; left-side parts are lightened and right-side
/// parts darkened so the sides stay distinguishable.
RenderResult render(const BodyModel& model, std::span<const RenderPerson> persons,
                    const PinholeCamera& camera, const torch::Tensor& canvas);

/// Deterministic for a given rng state. Placement that misses the overlap
/// target after max_attempts is kept best-effort and flagged.
SceneSample generate_scene(std::mt19937_64& rng, const SceneConfig& config,
                           const BodyModel& model);

/// Camera-space mesh of a scene person.
Mesh person_mesh(const BodyModel& model, const ScenePerson& person);

/// Largest bounding-box IoU between persons i and any other person (0 for n = 1).
double max_pairwise_iou(const SceneSample& sample, std::size_t i);
/// CrowdIndex of person i inside its tight joint box.
double scene_crowd_index(const SceneSample& sample, std::size_t i);

void write_sample(const SceneSample& sample, const std::filesystem::path& dir);
/// Throws ParseError (with byte offset) on corrupt files and
/// UnsupportedVersionError on a format version mismatch.
SceneSample read_sample(const std::filesystem::path& dir);

nlohmann::json body_model_config_to_json(const BodyModelConfig& config);
BodyModelConfig body_model_config_from_json(const nlohmann::json& doc);

struct SplitSpec {
  std::string name;
  int count = 0;
  double overlap_target = 0.4;
  int n_persons = 2;
};

struct DatasetConfig {
  SceneConfig scene;
  std::uint64_t base_seed = 1000;
  std::uint64_t body_model_seed = 0;
  BodyModelConfig body_model;
  std::vector<SplitSpec> splits;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& doc);
};

/// Writes <root>/index.json, <root>/body_model.bin and one directory per
/// sample. Sample k (counted across splits in order) uses seed base_seed + k.
void generate_dataset(const DatasetConfig& config, const std::filesystem::path& root,
                      const std::function<void(const std::string&)>& progress = {});

struct DatasetIndex {
  std::filesystem::path root;
  DatasetConfig config;
  std::map<std::string, std::vector<std::string>> splits;

  const std::vector<std::string>& split(const std::string& name) const;
  std::filesystem::path sample_dir(const std::string& id) const { return root / id; }
  std::filesystem::path body_model_path() const { return root / "body_model.bin"; }
};

/// Throws IoError when the directory or index is missing.
DatasetIndex load_dataset_index(const std::filesystem::path& root);

struct SplitStatistics {
  std::size_t n_scenes = 0;
  std::size_t n_persons = 0;
  double mean_max_iou = 0.0;
  double mean_crowd_index = 0.0;
  double best_effort_fraction = 0.0;
};

SplitStatistics split_statistics(std::span<const SceneSample> samples);

}  // namespace crowdmesh

#pragma once

// Training, evaluation, inference and ablation entry points.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "crowdmesh/config.hpp"
#include "crowdmesh/metrics.hpp"
#include "crowdmesh/network.hpp"
#include "crowdmesh/pipeline.hpp"

namespace crowdmesh {

inline constexpr std::string_view kCheckpointMagic = "CMCKPT01";

/// Seeds torch with train.seed, then constructs and initializes the network.
CrowdMeshNet build_network(const ExperimentConfig& config, const BodyModel& body);

/// Parameters and buffers as float32 blocks; the header carries the full
/// config (including the body model seed) and `state`.
void save_checkpoint(const std::filesystem::path& path, CrowdMeshNetImpl& net,
                     const ExperimentConfig& config, const nlohmann::json& state = {});

struct LoadedCheckpoint {
  ExperimentConfig config;
  BodyModel body;
  CrowdMeshNet net{nullptr};
  nlohmann::json state;
};

/// Rebuilds the body model and the network from the header and copies every
/// tensor in. Throws ParseError on missing blocks or shape mismatches.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Body model a dataset was generated with.
BodyModel dataset_body_model(const DatasetIndex& index);

/// Learning rate of a (0-based) epoch: lr / factor^(decay epochs <= epoch).
double learning_rate_at_epoch(const TrainConfig& config, int epoch);

struct StepRecord {
  int epoch = 0;
  int step = 0;  // global, 0-based
  double lr = 0.0;
  double total = 0.0;
  double pose = 0.0;
  double param = 0.0;
  double coord = 0.0;
  double coord3d = 0.0;
  double coord2d = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ExperimentConfig config;  // body model fields taken from the dataset
  BodyModel body;
  CrowdMeshNet net{nullptr};
  std::vector<StepRecord> steps;
  std::filesystem::path log_path;
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> epoch_checkpoints;
};

/// Adam on the weighted total loss. Deterministic for a given config: the
/// shuffle order and each sample's pose-error draw derive from train.seed.
/// Fails before the first step when the dataset or split is missing, and
/// throws TrainingDivergedError on a non-finite loss (the log is kept).
TrainResult train(const ExperimentConfig& config,
                  const std::function<void(const StepRecord&)>& on_step = {});

struct EvaluationResult {
  std::string split;
  MetricsReport report;
  std::vector<PredictionRecord> records;
};

/// Predictions are the joints regressed from the decoded mesh, root-centered,
/// in mm. Throws ConfigError when the checkpoint's body model or joint set
/// does not match the dataset.
EvaluationResult evaluate(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                          const DatasetIndex& index, const std::string& split);
EvaluationResult evaluate(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                          const LoadedSplit& split);

struct InferOutputs {
  std::filesystem::path params_json;
  std::filesystem::path mesh_obj;
  std::filesystem::path overlay_png;
};

/// Pose file: {"joint_set": name, "joints": [[x, y], ...], "confidence": [...]}.
/// Joint sets other than the superset are mapped through the registry.
Pose2D read_pose2d_json(const std::filesystem::path& path);

/// Writes <out_dir>/<stem>_params.json, <stem>_mesh.obj and <stem>_overlay.png.
InferOutputs infer(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                   const std::filesystem::path& image_path, const std::filesystem::path& pose_path,
                   const std::filesystem::path& out_dir, const std::string& stem = "person");

/// Wavefront text geometry: one v line per vertex, 1-based f lines.
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct AblationReport {
  std::string split;
  std::vector<AblationRow> rows;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Trains every (variant, seed) pair with otherwise identical settings and
/// evaluates on data.eval_split. Run outputs go to <train.output_dir>/<variant>_s<seed>.
AblationReport ablation_run(const ExperimentConfig& config, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const std::string&)>& progress = {});

/// Mean channel-averaged |F'| over the image pixels of a silhouette, each
/// pixel mapped into the crop and onto its feature cell.
struct ActivationComparison {
  double target = 0.0;
  double other = 0.0;
  std::size_t target_pixels = 0;
  std::size_t other_pixels = 0;
  bool evaluable() const { return target_pixels > 0 && other_pixels > 0; }
};

/// `target` is the person the crop is built for; `other` the person whose
/// silhouette pixels are compared (only pixels inside the crop count).
ActivationComparison guided_activation(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                                       const SceneSample& scene, std::size_t target,
                                       std::size_t other);

/// Scene image with every person's 2D skeleton, plus predicted skeletons when
/// a network is given.
void visualize_scene(const SceneSample& scene, const std::filesystem::path& out_png,
                     CrowdMeshNetImpl* net = nullptr, const ExperimentConfig* config = nullptr);

}  // namespace crowdmesh

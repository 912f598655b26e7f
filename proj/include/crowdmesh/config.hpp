#pragma once

// Experiment configuration: one JSON document, profile defaults underneath,
// dotted-path overrides on top ("train.learning_rate=1e-3").

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/network.hpp"
#include "crowdmesh/pose2d_prep.hpp"
#include "crowdmesh/scenegen.hpp"

namespace crowdmesh {

struct DataConfig {
  std::string dataset = "data/crowd";
  std::string train_split = "train";
  std::string eval_split = "test";
  double bbox_margin = 1.2;
  double keep_threshold = kDefaultKeepThreshold;
  bool train_errors = true;   // synthesize 2D pose errors on every training sample
  bool eval_errors = false;
  std::uint64_t eval_error_seed = 7;
  double augment_scale = 0.0;  // training box side scaled by 1 + U(-a, a)
  double augment_shift = 0.0;  // training box center moved by U(-a, a) box sides per axis
  PoseErrorConfig errors;

  void validate() const;
};

struct LossWeights {
  double pose = 1.0;
  double param = 1.0;
  double coord = 1.0;
};

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-4;
  int epochs = 6;
  std::vector<int> lr_decay_epochs = {3, 5};
  double lr_decay_factor = 10.0;
  int max_steps = 0;          // 0: no limit
  int max_train_persons = 0;  // 0: whole split
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  bool checkpoint_every_epoch = true;
  bool shuffle = true;
  int num_threads = 1;

  void validate() const;
};

struct EvalConfig {
  double pck_threshold_mm = 150.0;
  int batch_size = 32;
  int max_persons = 0;  // 0: whole split
};

struct AblationConfig {
  std::vector<std::string> variants = {"guided", "unguided", "hmr_style", "no_posenet"};
  std::vector<std::uint64_t> seeds = {0};
};

struct ExperimentConfig {
  std::string profile = "paper";
  std::uint64_t body_model_seed = 0;
  BodyModelConfig body_model;
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  AblationConfig ablation;
  DatasetConfig generate;

  /// Full-size settings (crop 256, C 64, C' 512, D 16, batch 64).
  static ExperimentConfig paper();
  /// CPU-sized settings (crop 64, C 32, C' 128, D 8, batch 16).
  static ExperimentConfig desk();
  static ExperimentConfig for_profile(const std::string& name);

  void validate() const;
  nlohmann::json to_json() const;
  /// Values missing from `doc` keep the defaults of doc["profile"].
  static ExperimentConfig from_json(const nlohmann::json& doc);
};

/// Sets one dotted key. The value is parsed as JSON when possible, otherwise
/// taken as a string. Throws ConfigError for keys outside the schema.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// Throws ConfigError naming the first key of `doc` absent from `schema`.
void check_known_keys(const nlohmann::json& schema, const nlohmann::json& doc,
                      const std::string& prefix = "");

/// Profile defaults (desk unless the file or overrides pick another), then
/// the file, then the overrides.
ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& file,
                                        const std::vector<std::string>& overrides = {},
                                        const std::string& default_profile = "desk");

}  // namespace crowdmesh

#include "crowdmesh/config.hpp"

#include <algorithm>
#include <fstream>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace {

using nlohmann::json;

json errors_to_json(const PoseErrorConfig& e) {
  return {{"jitter_prob", e.jitter_prob},
          {"jitter_sigma", e.jitter_sigma},
          {"jitter_sigma_bbox_frac", e.jitter_sigma_bbox_frac},
          {"miss_prob", e.miss_prob},
          {"inversion_prob", e.inversion_prob},
          {"swap_prob", e.swap_prob}};
}

PoseErrorConfig errors_from_json(const json& doc, PoseErrorConfig e) {
  e.jitter_prob = doc.value("jitter_prob", e.jitter_prob);
  e.jitter_sigma = doc.value("jitter_sigma", e.jitter_sigma);
  e.jitter_sigma_bbox_frac = doc.value("jitter_sigma_bbox_frac", e.jitter_sigma_bbox_frac);
  e.miss_prob = doc.value("miss_prob", e.miss_prob);
  e.inversion_prob = doc.value("inversion_prob", e.inversion_prob);
  e.swap_prob = doc.value("swap_prob", e.swap_prob);
  return e;
}

std::vector<SplitSpec> default_splits() {
  return {{"train", 256, 0.4, 2}, {"test", 64, 0.4, 2}, {"test_sparse", 64, 0.0, 2}};
}

}  // namespace

void DataConfig::validate() const {
  if (dataset.empty()) throw ConfigError("data.dataset must be set");
  if (!(bbox_margin >= 1.0)) throw ConfigError("data.bbox_margin must be >= 1");
  if (!(keep_threshold >= 0.0 && keep_threshold <= 1.0)) {
    throw ConfigError("data.keep_threshold must lie in [0, 1]");
  }
  if (!(augment_scale >= 0.0 && augment_scale < 1.0) || !(augment_shift >= 0.0 && augment_shift <= 0.5)) {
    throw ConfigError("data.augment_scale must lie in [0, 1) and data.augment_shift in [0, 0.5]");
  }
  errors.validate();
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (!(lr_decay_factor >= 1.0)) throw ConfigError("train.lr_decay_factor must be >= 1");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    const int e = lr_decay_epochs[i];
    if (e <= 0 || e >= epochs) {
      throw ConfigError("train.lr_decay_epochs entries must lie in [1, epochs); got " +
                        std::to_string(e) + " with epochs=" + std::to_string(epochs));
    }
    if (i > 0 && e <= lr_decay_epochs[i - 1]) {
      throw ConfigError("train.lr_decay_epochs must be strictly increasing");
    }
  }
  if (max_steps < 0 || max_train_persons < 0) {
    throw ConfigError("train.max_steps and train.max_train_persons must be >= 0");
  }
  if (loss_weights.pose < 0 || loss_weights.param < 0 || loss_weights.coord < 0) {
    throw ConfigError("train.loss_weights must be non-negative");
  }
  if (output_dir.empty()) throw ConfigError("train.output_dir must be set");
  if (num_threads <= 0) throw ConfigError("train.num_threads must be positive");
}

ExperimentConfig ExperimentConfig::paper() {
  ExperimentConfig c;
  c.profile = "paper";
  c.generate.splits = default_splits();
  return c;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.profile = "desk";
  c.model = ModelConfig::desk();
  c.model.graph_hidden = 16;
  c.train.batch_size = 16;
  c.train.learning_rate = 1e-3;
  c.train.epochs = 40;
  c.train.lr_decay_epochs = {24, 34};
  c.data.augment_scale = 0.15;
  c.data.augment_shift = 0.1;
  c.generate.splits = default_splits();
  return c;
}

ExperimentConfig ExperimentConfig::for_profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

void ExperimentConfig::validate() const {
  body_model.validate();
  model.validate();
  data.validate();
  train.validate();
  if (!(eval.pck_threshold_mm > 0.0)) throw ConfigError("eval.pck_threshold_mm must be positive");
  if (eval.batch_size <= 0 || eval.max_persons < 0) {
    throw ConfigError("eval.batch_size must be positive and eval.max_persons >= 0");
  }
  if (ablation.variants.empty() || ablation.seeds.empty()) {
    throw ConfigError("ablation.variants and ablation.seeds must be non-empty");
  }
  for (const auto& v : ablation.variants) variant_from_name(v);
  generate.validate();
}

json ExperimentConfig::to_json() const {
  json bm = body_model_config_to_json(body_model);
  bm["seed"] = body_model_seed;
  json generate_json = generate.to_json();
  generate_json.erase("body_model");
  generate_json.erase("body_model_seed");
  return {
      {"profile", profile},
      {"body_model", bm},
      {"model", model.to_json()},
      {"data",
       {{"dataset", data.dataset},
        {"train_split", data.train_split},
        {"eval_split", data.eval_split},
        {"bbox_margin", data.bbox_margin},
        {"keep_threshold", data.keep_threshold},
        {"train_errors", data.train_errors},
        {"eval_errors", data.eval_errors},
        {"eval_error_seed", data.eval_error_seed},
        {"augment_scale", data.augment_scale},
        {"augment_shift", data.augment_shift},
        {"errors", errors_to_json(data.errors)}}},
      {"train",
       {{"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"epochs", train.epochs},
        {"lr_decay_epochs", train.lr_decay_epochs},
        {"lr_decay_factor", train.lr_decay_factor},
        {"max_steps", train.max_steps},
        {"max_train_persons", train.max_train_persons},
        {"loss_weights",
         {{"pose", train.loss_weights.pose},
          {"param", train.loss_weights.param},
          {"coord", train.loss_weights.coord}}},
        {"seed", train.seed},
        {"output_dir", train.output_dir},
        {"checkpoint_every_epoch", train.checkpoint_every_epoch},
        {"shuffle", train.shuffle},
        {"num_threads", train.num_threads}}},
      {"eval",
       {{"pck_threshold_mm", eval.pck_threshold_mm},
        {"batch_size", eval.batch_size},
        {"max_persons", eval.max_persons}}},
      {"ablation", {{"variants", ablation.variants}, {"seeds", ablation.seeds}}},
      {"generate", generate_json},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  try {
    ExperimentConfig c = for_profile(doc.value("profile", std::string("desk")));
    if (doc.contains("body_model")) {
      const auto& bm = doc["body_model"];
      json base = body_model_config_to_json(c.body_model);
      base.update(bm);
      base.erase("seed");
      c.body_model = body_model_config_from_json(base);
      c.body_model_seed = bm.value("seed", c.body_model_seed);
    }
    if (doc.contains("model")) {
      json base = c.model.to_json();
      base.update(doc["model"]);
      c.model = ModelConfig::from_json(base);
    }
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      c.data.dataset = d.value("dataset", c.data.dataset);
      c.data.train_split = d.value("train_split", c.data.train_split);
      c.data.eval_split = d.value("eval_split", c.data.eval_split);
      c.data.bbox_margin = d.value("bbox_margin", c.data.bbox_margin);
      c.data.keep_threshold = d.value("keep_threshold", c.data.keep_threshold);
      c.data.train_errors = d.value("train_errors", c.data.train_errors);
      c.data.eval_errors = d.value("eval_errors", c.data.eval_errors);
      c.data.eval_error_seed = d.value("eval_error_seed", c.data.eval_error_seed);
      c.data.augment_scale = d.value("augment_scale", c.data.augment_scale);
      c.data.augment_shift = d.value("augment_shift", c.data.augment_shift);
      if (d.contains("errors")) c.data.errors = errors_from_json(d["errors"], c.data.errors);
    }
    c.data.errors.keep_threshold = c.data.keep_threshold;
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.lr_decay_epochs = t.value("lr_decay_epochs", c.train.lr_decay_epochs);
      c.train.lr_decay_factor = t.value("lr_decay_factor", c.train.lr_decay_factor);
      c.train.max_steps = t.value("max_steps", c.train.max_steps);
      c.train.max_train_persons = t.value("max_train_persons", c.train.max_train_persons);
      if (t.contains("loss_weights")) {
        const auto& w = t["loss_weights"];
        c.train.loss_weights.pose = w.value("pose", c.train.loss_weights.pose);
        c.train.loss_weights.param = w.value("param", c.train.loss_weights.param);
        c.train.loss_weights.coord = w.value("coord", c.train.loss_weights.coord);
      }
      c.train.seed = t.value("seed", c.train.seed);
      c.train.output_dir = t.value("output_dir", c.train.output_dir);
      c.train.checkpoint_every_epoch =
          t.value("checkpoint_every_epoch", c.train.checkpoint_every_epoch);
      c.train.shuffle = t.value("shuffle", c.train.shuffle);
      c.train.num_threads = t.value("num_threads", c.train.num_threads);
    }
    if (doc.contains("eval")) {
      const auto& e = doc["eval"];
      c.eval.pck_threshold_mm = e.value("pck_threshold_mm", c.eval.pck_threshold_mm);
      c.eval.batch_size = e.value("batch_size", c.eval.batch_size);
      c.eval.max_persons = e.value("max_persons", c.eval.max_persons);
    }
    if (doc.contains("ablation")) {
      const auto& a = doc["ablation"];
      c.ablation.variants = a.value("variants", c.ablation.variants);
      c.ablation.seeds = a.value("seeds", c.ablation.seeds);
    }
    if (doc.contains("generate")) {
      json base = c.generate.to_json();
      base.erase("body_model");
      base.merge_patch(doc["generate"]);
      c.generate = DatasetConfig::from_json(base);
    }
    c.generate.body_model = c.body_model;
    c.generate.body_model_seed = c.body_model_seed;
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

void check_known_keys(const json& schema, const json& doc, const std::string& prefix) {
  if (!doc.is_object()) return;
  if (!schema.is_object()) {
    throw ConfigError("config key '" + prefix + "' is a value, not a section");
  }
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const auto& sub = schema[it.key()];
    if (sub.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be a section");
      check_known_keys(sub, it.value(), path);
    }
  }
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a value");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& file,
                                        const std::vector<std::string>& overrides,
                                        const std::string& default_profile) {
  json user = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError("cannot open config file " + file->string());
    user = json::parse(in, nullptr, false, true);
    if (user.is_discarded() || !user.is_object()) {
      throw ConfigError("config file " + file->string() + " is not a JSON object");
    }
  }
  for (const auto& o : overrides) apply_override(user, o);
  if (!user.contains("profile")) user["profile"] = default_profile;
  if (!user["profile"].is_string()) throw ConfigError("profile must be a string");

  const auto schema = ExperimentConfig::for_profile(user["profile"].get<std::string>()).to_json();
  check_known_keys(schema, user);
  auto config = ExperimentConfig::from_json(user);
  config.validate();
  return config;
}

}  // namespace crowdmesh

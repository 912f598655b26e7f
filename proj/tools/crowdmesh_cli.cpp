// crowdmesh: generate data, train, evaluate, run inference, ablate, visualize.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crowdmesh/archive.hpp"
#include "crowdmesh/config.hpp"
#include "crowdmesh/errors.hpp"
#include "crowdmesh/harness.hpp"
#include "crowdmesh/scenegen.hpp"

namespace fs = std::filesystem;
using namespace crowdmesh;

namespace {

struct ConfigArgs {
  std::string file;
  std::string profile = "desk";
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "JSON config file");
    app->add_option("--profile", profile, "Default profile when the file sets none (desk, paper)");
    app->add_option("-s,--set", overrides, "Override a key by dotted path, e.g. train.epochs=3");
  }

  ExperimentConfig load() const {
    std::optional<fs::path> path;
    if (!file.empty()) path = file;
    return load_experiment_config(path, overrides, profile);
  }
};

/// Checkpoint config with data/eval overrides; the model section must not change.
ExperimentConfig checkpoint_config(const LoadedCheckpoint& ck,
                                   const std::vector<std::string>& overrides) {
  if (overrides.empty()) return ck.config;
  nlohmann::json tree = ck.config.to_json();
  for (const auto& o : overrides) apply_override(tree, o);
  auto config = ExperimentConfig::from_json(tree);
  if (config.model.to_json() != ck.config.model.to_json() ||
      body_model_config_to_json(config.body_model) !=
          body_model_config_to_json(ck.config.body_model)) {
    throw ConfigError("model and body_model settings come from the checkpoint and cannot be overridden");
  }
  config.validate();
  return config;
}

void print(const std::string& line) { std::cout << line << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowdmesh: 3D human mesh recovery in crowded scenes"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic crowd dataset");
  ConfigArgs gen_cfg;
  gen_cfg.attach(gen);
  std::string gen_out;
  gen->add_option("-o,--out", gen_out, "Dataset directory (default: data.dataset)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  ConfigArgs tr_cfg;
  tr_cfg.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_dataset, ev_split, ev_out, ev_records;
  std::vector<std::string> ev_overrides;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--dataset", ev_dataset, "Dataset directory (default: from the checkpoint config)");
  ev->add_option("--split", ev_split, "Split name (default: data.eval_split)");
  ev->add_option("-o,--out", ev_out, "Report JSON path");
  ev->add_option("--records", ev_records, "Per-sample prediction records JSON path");
  ev->add_option("-s,--set", ev_overrides, "Override data.* or eval.* keys");

  // infer
  auto* inf = app.add_subcommand("infer", "Recover a mesh for one person");
  std::string inf_ckpt, inf_image, inf_pose, inf_out = "infer_out", inf_stem = "person";
  inf->add_option("--checkpoint", inf_ckpt, "Checkpoint file")->required();
  inf->add_option("--image", inf_image, "PNG image")->required();
  inf->add_option("--pose", inf_pose, "2D pose JSON")->required();
  inf->add_option("-o,--out", inf_out, "Output directory");
  inf->add_option("--stem", inf_stem, "Output file prefix");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and compare model variants");
  ConfigArgs ab_cfg;
  ab_cfg.attach(ab);
  std::string ab_out;
  ab->add_option("-o,--out", ab_out, "Report JSON path (default: <train.output_dir>/ablation.json)");

  // visualize
  auto* vis = app.add_subcommand("visualize", "Render dataset samples with skeleton overlays");
  std::string vis_dataset, vis_split = "test", vis_ckpt, vis_out = "vis";
  std::vector<std::string> vis_samples;
  int vis_count = 4;
  vis->add_option("--dataset", vis_dataset, "Dataset directory")->required();
  vis->add_option("--split", vis_split, "Split to draw samples from");
  vis->add_option("--sample", vis_samples, "Sample id (repeatable; default: first --count of the split)");
  vis->add_option("--count", vis_count, "Number of samples when no --sample is given");
  vis->add_option("--checkpoint", vis_ckpt, "Also draw predicted skeletons");
  vis->add_option("-o,--out", vis_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto config = gen_cfg.load();
      const fs::path root = gen_out.empty() ? fs::path(config.data.dataset) : fs::path(gen_out);
      generate_dataset(config.generate, root, [](const std::string& msg) { print(msg); });
      const auto index = load_dataset_index(root);
      for (const auto& [name, ids] : index.splits) {
        const auto split = load_split(index, name);
        const auto st = split_statistics(split.scenes);
        std::printf("%-12s scenes %4zu  persons %4zu  mean IoU %.3f  mean CrowdIndex %.3f  best-effort %.1f%%\n",
                    name.c_str(), st.n_scenes, st.n_persons, st.mean_max_iou,
                    st.mean_crowd_index, 100.0 * st.best_effort_fraction);
      }
    } else if (*tr) {
      const auto config = tr_cfg.load();
      const auto result = train(config, [](const StepRecord& r) {
        if (r.step % 10 == 0) {
          std::printf("epoch %d step %5d lr %.1e total %.5f pose %.5f param %.5f coord %.5f\n",
                      r.epoch, r.step, r.lr, r.total, r.pose, r.param, r.coord);
          std::fflush(stdout);
        }
      });
      print("checkpoint: " + result.final_checkpoint.string());
      print("log: " + result.log_path.string());
    } else if (*ev) {
      auto ck = load_checkpoint(ev_ckpt);
      auto config = checkpoint_config(ck, ev_overrides);
      const fs::path dataset = ev_dataset.empty() ? fs::path(config.data.dataset) : fs::path(ev_dataset);
      const std::string split = ev_split.empty() ? config.data.eval_split : ev_split;
      const auto index = load_dataset_index(dataset);
      const auto result = evaluate(*ck.net, config, index, split);
      std::cout << result.report.to_table();
      if (!ev_out.empty()) write_json_file(ev_out, result.report.to_json());
      if (!ev_records.empty()) {
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : result.records) recs.push_back(r.to_json());
        write_json_file(ev_records, recs);
      }
    } else if (*inf) {
      auto ck = load_checkpoint(inf_ckpt);
      const auto files = infer(*ck.net, ck.config, inf_image, inf_pose, inf_out, inf_stem);
      print("params: " + files.params_json.string());
      print("mesh: " + files.mesh_obj.string());
      print("overlay: " + files.overlay_png.string());
    } else if (*ab) {
      const auto config = ab_cfg.load();
      std::vector<Variant> variants;
      for (const auto& v : config.ablation.variants) variants.push_back(variant_from_name(v));
      const auto report = ablation_run(config, variants, config.ablation.seeds,
                                       [](const std::string& msg) { print(msg); });
      std::cout << report.to_table();
      const fs::path out = ab_out.empty() ? fs::path(config.train.output_dir) / "ablation.json"
                                          : fs::path(ab_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_json_file(out, report.to_json());
      print("report: " + out.string());
    } else if (*vis) {
      const auto index = load_dataset_index(vis_dataset);
      std::optional<LoadedCheckpoint> ck;
      if (!vis_ckpt.empty()) ck = load_checkpoint(vis_ckpt);
      std::vector<std::string> ids = vis_samples;
      if (ids.empty()) {
        const auto& all = index.split(vis_split);
        for (int i = 0; i < vis_count && i < static_cast<int>(all.size()); ++i) ids.push_back(all[i]);
      }
      for (const auto& id : ids) {
        const auto scene = read_sample(index.sample_dir(id));
        const fs::path out = fs::path(vis_out) / (id + ".png");
        visualize_scene(scene, out, ck ? ck->net.get() : nullptr, ck ? &ck->config : nullptr);
        print(out.string());
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "crowdmesh: error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

#include "fixtures.hpp"

#include <map>

namespace fs = std::filesystem;
using namespace crowdmesh;

namespace fixture {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("crowdmesh_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path dataset(const std::string& name, const std::vector<SplitSpec>& splits, std::uint64_t base_seed) {
  static std::map<std::string, fs::path> made;
  if (const auto it = made.find(name); it != made.end()) return it->second;
  const auto root = scratch_dir("data_" + name) / "ds";
  DatasetConfig c;
  c.base_seed = base_seed;
  c.splits = splits;
  generate_dataset(c, root);
  made[name] = root;
  return root;
}

ExperimentConfig tiny_config(const fs::path& dataset, const fs::path& output_dir) {
  auto c = ExperimentConfig::desk();
  c.model.early_channels = 8;
  c.model.feature_channels = 16;
  c.model.blocks_per_stage = 1;
  c.model.graph_hidden = 8;
  c.model.graph_blocks = 1;
  c.model.hmr_hidden = 16;
  c.data.dataset = dataset.string();
  c.train.batch_size = 4;
  c.train.epochs = 2;
  c.train.lr_decay_epochs = {1};
  c.train.output_dir = output_dir.string();
  c.eval.batch_size = 4;
  c.validate();
  return c;
}

}  // namespace fixture

#pragma once

// Temporary directories, small generated datasets and a tiny model config.

#include <filesystem>
#include <string>
#include <vector>

#include "crowdmesh/config.hpp"
#include "crowdmesh/scenegen.hpp"

namespace fixture {

/// Fresh, empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// Generates a dataset the first time `name` is requested in this process.
std::filesystem::path dataset(const std::string& name, const std::vector<crowdmesh::SplitSpec>& splits,
                              std::uint64_t base_seed = 1000);

/// Desk profile shrunk to a few thousand parameters: fast enough for unit tests.
crowdmesh::ExperimentConfig tiny_config(const std::filesystem::path& dataset,
                                        const std::filesystem::path& output_dir);

}  // namespace fixture

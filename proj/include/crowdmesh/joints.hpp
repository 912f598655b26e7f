#pragma once

// Joint conventions shared by every module.
//
// The superset (19 joints) is the union of all supported skeleton
// conventions. Its first 16 entries coincide with the kinematic joints of the
// canonical body model, so a full-size body model maps 1:1 onto them. The
// common subset (15 joints) is what the 3D pose head predicts and what the
// skeleton graph is built on.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace crowdmesh {

namespace joints {

inline constexpr int kSupersetSize = 19;
inline constexpr int kCommonSize = 15;
inline constexpr int kCanonicalKinematic = 16;

enum Superset : int {
  kPelvis = 0,
  kSpine,
  kNeck,
  kHead,
  kLShoulder,
  kLElbow,
  kLWrist,
  kRShoulder,
  kRElbow,
  kRWrist,
  kLHip,
  kLKnee,
  kLAnkle,
  kRHip,
  kRKnee,
  kRAnkle,
  kHeadTop,
  kLToe,
  kRToe,
};

inline constexpr int kRoot = kPelvis;

const std::array<std::string_view, kSupersetSize>& superset_names();

/// Parent of each canonical kinematic joint (-1 for the root).
const std::array<int, kCanonicalKinematic>& canonical_parents();

/// Superset index of each common-subset joint.
const std::array<int, kCommonSize>& common_to_superset();

/// Left/right counterpart of every superset joint (itself for center joints).
const std::array<int, kSupersetSize>& superset_flip();

/// Edges of the common-subset skeleton, in common-subset indices.
const std::vector<std::pair<int, int>>& common_skeleton_edges();

/// Position of the root (pelvis) inside the common subset.
inline constexpr int kCommonRoot = 0;

}  // namespace joints

/// Named skeleton conventions mapped onto the superset.
///
/// Entry i of a set is the superset index of that set's joint i, or nullopt
/// when the joint has no superset counterpart and is dropped.
class JointSetRegistry {
 public:
  using Mapping = std::vector<std::optional<int>>;

  JointSetRegistry() = default;

  /// Registry with "superset", "common", "limbs12" and "coco17".
  static JointSetRegistry defaults();

  static JointSetRegistry from_json(const nlohmann::json& doc);
  static JointSetRegistry load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  void add(const std::string& name, Mapping mapping);
  bool contains(const std::string& name) const;
  const Mapping& at(const std::string& name) const;
  int size_of(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Mapping> sets_;
};

}  // namespace crowdmesh

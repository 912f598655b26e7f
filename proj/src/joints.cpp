#include "crowdmesh/joints.hpp"

#include <fstream>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace joints {

const std::array<std::string_view, kSupersetSize>& superset_names() {
  static const std::array<std::string_view, kSupersetSize> names = {
      "pelvis",     "spine",    "neck",    "head",    "l_shoulder",
      "l_elbow",    "l_wrist",  "r_shoulder", "r_elbow", "r_wrist",
      "l_hip",      "l_knee",   "l_ankle", "r_hip",   "r_knee",
      "r_ankle",    "head_top", "l_toe",   "r_toe"};
  return names;
}

const std::array<int, kCanonicalKinematic>& canonical_parents() {
  static const std::array<int, kCanonicalKinematic> parents = {
      -1, kPelvis, kSpine, kNeck, kNeck, kLShoulder, kLElbow, kNeck,
      kRShoulder, kRElbow, kPelvis, kLHip, kLKnee, kPelvis, kRHip, kRKnee};
  return parents;
}

const std::array<int, kCommonSize>& common_to_superset() {
  static const std::array<int, kCommonSize> map = {
      kPelvis, kNeck,  kHead,  kLShoulder, kLElbow, kLWrist, kRShoulder, kRElbow,
      kRWrist, kLHip,  kLKnee, kLAnkle,    kRHip,   kRKnee,  kRAnkle};
  return map;
}

const std::array<int, kSupersetSize>& superset_flip() {
  static const std::array<int, kSupersetSize> flip = {
      kPelvis,    kSpine,  kNeck,   kHead,  kRShoulder, kRElbow, kRWrist,
      kLShoulder, kLElbow, kLWrist, kRHip,  kRKnee,     kRAnkle, kLHip,
      kLKnee,     kLAnkle, kHeadTop, kRToe, kLToe};
  return flip;
}

const std::vector<std::pair<int, int>>& common_skeleton_edges() {
  // common indices: 0 pelvis, 1 neck, 2 head, 3-5 left arm, 6-8 right arm,
  // 9-11 left leg, 12-14 right leg
  static const std::vector<std::pair<int, int>> edges = {
      {0, 1}, {1, 2},  {1, 3},   {3, 4},   {4, 5},   {1, 6},   {6, 7},
      {7, 8}, {0, 9},  {9, 10},  {10, 11}, {0, 12},  {12, 13}, {13, 14}};
  return edges;
}

}  // namespace joints

JointSetRegistry JointSetRegistry::defaults() {
  JointSetRegistry reg;
  Mapping superset;
  for (int i = 0; i < joints::kSupersetSize; ++i) superset.emplace_back(i);
  reg.add("superset", std::move(superset));

  Mapping common;
  for (int s : joints::common_to_superset()) common.emplace_back(s);
  reg.add("common", std::move(common));

  Mapping limbs;
  for (int s = joints::kLShoulder; s <= joints::kRAnkle; ++s) limbs.emplace_back(s);
  reg.add("limbs12", std::move(limbs));

  using namespace joints;
  // nose, eyes and ears have no superset counterpart
  reg.add("coco17", Mapping{std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                            std::nullopt, kLShoulder,   kRShoulder,   kLElbow,
                            kRElbow,      kLWrist,      kRWrist,      kLHip,
                            kRHip,        kLKnee,       kRKnee,       kLAnkle,
                            kRAnkle});
  return reg;
}

JointSetRegistry JointSetRegistry::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("joint-set registry must be a JSON object");
  JointSetRegistry reg;
  for (const auto& [name, entries] : doc.items()) {
    if (!entries.is_array()) {
      throw ConfigError("joint set '" + name + "' must be an array");
    }
    Mapping mapping;
    for (const auto& e : entries) {
      if (e.is_null()) {
        mapping.emplace_back(std::nullopt);
      } else if (e.is_number_integer()) {
        mapping.emplace_back(e.get<int>());
      } else {
        throw ConfigError("joint set '" + name + "' has a non-integer entry");
      }
    }
    reg.add(name, std::move(mapping));
  }
  return reg;
}

JointSetRegistry JointSetRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open joint-set registry " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("joint-set registry " + path.string() + ": " + e.what(), e.byte);
  }
}

nlohmann::json JointSetRegistry::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [name, mapping] : sets_) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : mapping) {
      if (m) arr.push_back(*m);
      else arr.push_back(nullptr);
    }
    doc[name] = std::move(arr);
  }
  return doc;
}

void JointSetRegistry::add(const std::string& name, Mapping mapping) {
  std::vector<bool> used(joints::kSupersetSize, false);
  for (const auto& m : mapping) {
    if (!m) continue;
    if (*m < 0 || *m >= joints::kSupersetSize) {
      throw ConfigError("joint set '" + name + "' maps outside the superset");
    }
    if (used[static_cast<size_t>(*m)]) {
      throw ConfigError("joint set '" + name + "' maps two joints to superset index " +
                        std::to_string(*m));
    }
    used[static_cast<size_t>(*m)] = true;
  }
  sets_[name] = std::move(mapping);
}

bool JointSetRegistry::contains(const std::string& name) const {
  return sets_.count(name) != 0;
}

const JointSetRegistry::Mapping& JointSetRegistry::at(const std::string& name) const {
  auto it = sets_.find(name);
  if (it == sets_.end()) throw ConfigError("unknown joint set '" + name + "'");
  return it->second;
}

int JointSetRegistry::size_of(const std::string& name) const {
  return static_cast<int>(at(name).size());
}

std::vector<std::string> JointSetRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sets_) out.push_back(name);
  return out;
}

}  // namespace crowdmesh

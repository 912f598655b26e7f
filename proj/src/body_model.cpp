#include "crowdmesh/body_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Geometry>

#include "crowdmesh/archive.hpp"
#include "crowdmesh/errors.hpp"
#include "crowdmesh/joints.hpp"

namespace crowdmesh {

namespace {

constexpr std::string_view kModelMagic = "CMBODY01";
constexpr int kModelFormatVersion = 1;

// End-of-tube radius relative to the mid radius. Small enough that a joint's
// nearest vertices are the ring that starts at it.
constexpr double kRingTaper = 0.35;

struct BoneSpec {
  Eigen::Vector3d start;
  Eigen::Vector3d end;
  double radius;
};

// Canonical rest skeleton, meters; x to image right, y down, person faces -z.
std::array<Eigen::Vector3d, joints::kSupersetSize> canonical_landmarks() {
  using namespace joints;
  std::array<Eigen::Vector3d, kSupersetSize> p;
  p[kPelvis] = {0.0, 0.0, 0.0};
  p[kSpine] = {0.0, -0.25, 0.0};
  p[kNeck] = {0.0, -0.50, 0.0};
  p[kHead] = {0.0, -0.62, 0.0};
  p[kLShoulder] = {0.18, -0.47, 0.0};
  p[kLElbow] = {0.23, -0.20, 0.0};
  p[kLWrist] = {0.26, 0.05, -0.02};
  p[kLHip] = {0.10, 0.05, 0.0};
  p[kLKnee] = {0.11, 0.45, -0.01};
  p[kLAnkle] = {0.12, 0.85, 0.0};
  p[kHeadTop] = {0.0, -0.82, 0.0};
  p[kLToe] = {0.12, 0.90, -0.15};
  const std::array<std::pair<int, int>, 6> mirrored = {
      std::pair{kLShoulder, kRShoulder}, {kLElbow, kRElbow}, {kLWrist, kRWrist},
      {kLHip, kRHip},                    {kLKnee, kRKnee},   {kLAnkle, kRAnkle}};
  for (auto [l, r] : mirrored) p[static_cast<size_t>(r)] = {-p[l].x(), p[l].y(), p[l].z()};
  p[kRToe] = {-p[kLToe].x(), p[kLToe].y(), p[kLToe].z()};
  return p;
}

// One tube per canonical joint, from the joint to its primary child (or to an
// extremity point for leaves).
std::array<BoneSpec, joints::kCanonicalKinematic> canonical_bones() {
  using namespace joints;
  const auto p = canonical_landmarks();
  const Eigen::Vector3d l_hand = p[kLWrist] + Eigen::Vector3d(0.02, 0.11, -0.01);
  const Eigen::Vector3d r_hand(-l_hand.x(), l_hand.y(), l_hand.z());
  std::array<BoneSpec, kCanonicalKinematic> b;
  b[kPelvis] = {p[kPelvis], p[kSpine], 0.13};
  b[kSpine] = {p[kSpine], p[kNeck], 0.14};
  b[kNeck] = {p[kNeck], p[kHead], 0.05};
  b[kHead] = {p[kHead], p[kHeadTop], 0.09};
  b[kLShoulder] = {p[kLShoulder], p[kLElbow], 0.05};
  b[kLElbow] = {p[kLElbow], p[kLWrist], 0.04};
  b[kLWrist] = {p[kLWrist], l_hand, 0.035};
  b[kRShoulder] = {p[kRShoulder], p[kRElbow], 0.05};
  b[kRElbow] = {p[kRElbow], p[kRWrist], 0.04};
  b[kRWrist] = {p[kRWrist], r_hand, 0.035};
  b[kLHip] = {p[kLHip], p[kLKnee], 0.07};
  b[kLKnee] = {p[kLKnee], p[kLAnkle], 0.055};
  b[kLAnkle] = {p[kLAnkle], p[kLToe], 0.04};
  b[kRHip] = {p[kRHip], p[kRKnee], 0.07};
  b[kRKnee] = {p[kRKnee], p[kRAnkle], 0.055};
  b[kRAnkle] = {p[kRAnkle], p[kRToe], 0.04};
  return b;
}

// Joints removed, in order, when K < 16.
constexpr std::array<int, 8> kDropOrder = {
    joints::kLWrist, joints::kRWrist, joints::kLAnkle, joints::kRAnkle,
    joints::kHead,   joints::kSpine,  joints::kLElbow, joints::kRElbow};

bool is_arm_bone(int c) {
  return (c >= joints::kLShoulder && c <= joints::kRWrist);
}

bool is_leg_bone(int c) {
  return (c >= joints::kLHip && c <= joints::kRAnkle);
}

int limb_root(int c) {
  using namespace joints;
  if (c >= kLShoulder && c <= kLWrist) return kLShoulder;
  if (c >= kRShoulder && c <= kRWrist) return kRShoulder;
  if (c >= kLHip && c <= kLAnkle) return kLHip;
  return kRHip;
}

void normalize_rms(MatrixX3dR& d, double target_rms) {
  const double rms = std::sqrt(d.squaredNorm() / static_cast<double>(d.rows()));
  if (rms > 0.0) d *= target_rms / rms;
}

}  // namespace

void BodyModelConfig::validate() const {
  if (num_joints < 8) throw ConfigError("body model needs at least 8 joints");
  if (num_joints > joints::kCanonicalKinematic) {
    throw ConfigError("body model supports at most 16 joints");
  }
  if (rings_per_bone < 2 || verts_per_ring < 3) {
    throw ConfigError("body model needs at least 2 rings of 3 vertices per bone");
  }
  if (regressor_neighbors < 1 || regressor_neighbors > vertices_per_bone() * 16) {
    throw ConfigError("regressor_neighbors out of range");
  }
  if (!(shape_rms > 0.0) || !std::isfinite(shape_rms)) {
    throw ConfigError("shape_rms must be positive");
  }
}

int BodyModel::num_bones() const {
  return config.vertices_per_bone() == 0 ? 0 : num_vertices() / config.vertices_per_bone();
}

BodyModel build_body_model(std::uint64_t seed, const BodyModelConfig& config) {
  config.validate();
  using namespace joints;

  BodyModel model;
  model.seed = seed;
  model.config = config;

  // Kinematic subset and mapping from every canonical joint to its nearest kept ancestor.
  std::array<bool, kCanonicalKinematic> kept{};
  kept.fill(true);
  const int drops = kCanonicalKinematic - config.num_joints;
  for (int i = 0; i < drops; ++i) kept[static_cast<size_t>(kDropOrder[static_cast<size_t>(i)])] = false;
  std::array<int, kCanonicalKinematic> kin_index{};
  kin_index.fill(-1);
  for (int c = 0; c < kCanonicalKinematic; ++c) {
    if (kept[static_cast<size_t>(c)]) {
      kin_index[static_cast<size_t>(c)] = static_cast<int>(model.kinematic_to_superset.size());
      model.kinematic_to_superset.push_back(c);
    }
  }
  const auto& cparents = canonical_parents();
  auto kept_ancestor = [&](int c) {
    while (c >= 0 && !kept[static_cast<size_t>(c)]) c = cparents[static_cast<size_t>(c)];
    return c;
  };
  for (int c : model.kinematic_to_superset) {
    const int p = cparents[static_cast<size_t>(c)];
    model.parents.push_back(p < 0 ? -1 : kin_index[static_cast<size_t>(kept_ancestor(p))]);
  }
  const int K = config.num_joints;

  // Template tubes.
  const auto bones = canonical_bones();
  const int rings = config.rings_per_bone;
  const int around = config.verts_per_ring;
  const int vpb = config.vertices_per_bone();
  const int V = vpb * kCanonicalKinematic;
  model.template_vertices.resize(V, 3);
  model.vertex_bone.resize(static_cast<size_t>(V));
  std::vector<double> ring_t(static_cast<size_t>(V));
  for (int b = 0; b < kCanonicalKinematic; ++b) {
    const auto& bone = bones[static_cast<size_t>(b)];
    const Eigen::Vector3d axis = (bone.end - bone.start).normalized();
    const Eigen::Vector3d helper =
        std::abs(axis.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
    const Eigen::Vector3d u = axis.cross(helper).normalized();
    const Eigen::Vector3d w = axis.cross(u);
    for (int r = 0; r < rings; ++r) {
      const double t = static_cast<double>(r) / (rings - 1);
      const double radius =
          bone.radius * (kRingTaper + (1.0 - kRingTaper) * std::sin(std::numbers::pi * t));
      const Eigen::Vector3d center = bone.start + t * (bone.end - bone.start);
      for (int a = 0; a < around; ++a) {
        const double phi = 2.0 * std::numbers::pi * a / around;
        const int v = b * vpb + r * around + a;
        model.template_vertices.row(v) =
            center + radius * (std::cos(phi) * u + std::sin(phi) * w);
        model.vertex_bone[static_cast<size_t>(v)] = b;
        ring_t[static_cast<size_t>(v)] = t;
      }
    }
  }

  // Faces: quads between consecutive rings plus a fan on each end ring.
  std::vector<std::array<int, 3>> faces;
  for (int b = 0; b < kCanonicalKinematic; ++b) {
    const int base = b * vpb;
    for (int r = 0; r + 1 < rings; ++r) {
      for (int a = 0; a < around; ++a) {
        const int a1 = (a + 1) % around;
        const int v00 = base + r * around + a, v01 = base + r * around + a1;
        const int v10 = base + (r + 1) * around + a, v11 = base + (r + 1) * around + a1;
        faces.push_back({v00, v10, v11});
        faces.push_back({v00, v11, v01});
      }
    }
    const int last = base + (rings - 1) * around;
    for (int a = 1; a + 1 < around; ++a) {
      faces.push_back({base, base + a + 1, base + a});
      faces.push_back({last, last + a, last + a + 1});
    }
  }
  model.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) {
    for (int c = 0; c < 3; ++c) model.faces(static_cast<Eigen::Index>(f), c) = faces[f][static_cast<size_t>(c)];
  }

  // Skinning: each tube follows its kept owner joint; the ring at the joint
  // blends half-and-half with the parent so the joint stays attached.
  model.skin_weights = MatrixXdR::Zero(V, K);
  for (int v = 0; v < V; ++v) {
    const int c = model.vertex_bone[static_cast<size_t>(v)];
    const int owner = kin_index[static_cast<size_t>(kept_ancestor(c))];
    const int cp = cparents[static_cast<size_t>(c)];
    const int parent = cp < 0 ? -1 : kin_index[static_cast<size_t>(kept_ancestor(cp))];
    const double t = ring_t[static_cast<size_t>(v)];
    double w_parent = 0.0;
    if (parent >= 0 && parent != owner && t < kRingTaper) w_parent = 0.5 * (1.0 - t / kRingTaper);
    model.skin_weights(v, owner) += 1.0 - w_parent;
    if (w_parent > 0.0) model.skin_weights(v, parent) += w_parent;
  }

  // Regressor: uniform weights over the nearest template vertices of each landmark.
  const auto landmarks = canonical_landmarks();
  const int n_near = std::min(config.regressor_neighbors, V);
  model.joint_regressor = MatrixXdR::Zero(kSupersetSize, V);
  std::vector<int> order(static_cast<size_t>(V));
  for (int j = 0; j < kSupersetSize; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v) {
      dist[static_cast<size_t>(v)] =
          (model.template_vertices.row(v).transpose() - landmarks[static_cast<size_t>(j)]).squaredNorm();
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return dist[static_cast<size_t>(a)] < dist[static_cast<size_t>(b)];
    });
    for (int n = 0; n < n_near; ++n) model.joint_regressor(j, order[static_cast<size_t>(n)]) = 1.0 / n_near;
  }
  const MatrixX3dR regressed = model.joint_regressor * model.template_vertices;
  model.rest_joints.resize(K, 3);
  for (int k = 0; k < K; ++k) {
    model.rest_joints.row(k) = regressed.row(model.kinematic_to_superset[static_cast<size_t>(k)]);
  }

  // Shape space.
  model.shape_dirs = MatrixXdR::Zero(3 * V, kShapeDims);
  const Eigen::Vector3d root = model.rest_joints.row(0).transpose();
  auto set_mode = [&](int mode, MatrixX3dR d) {
    normalize_rms(d, config.shape_rms);
    for (int v = 0; v < V; ++v) {
      for (int c = 0; c < 3; ++c) model.shape_dirs(3 * v + c, mode) = d(v, c);
    }
  };
  {
    MatrixX3dR d = model.template_vertices.rowwise() - root.transpose();
    set_mode(0, std::move(d));
  }
  {
    // torso scales about the root; attached subtrees ride along rigidly
    MatrixX3dR d(V, 3);
    for (int v = 0; v < V; ++v) {
      const int c = model.vertex_bone[static_cast<size_t>(v)];
      Eigen::Vector3d anchor;
      if (c == kPelvis || c == kSpine || c == kNeck) {
        anchor = model.template_vertices.row(v).transpose();
      } else if (c == kHead) {
        anchor = landmarks[kHead];
      } else {
        anchor = landmarks[static_cast<size_t>(limb_root(c))];
      }
      d.row(v) = (anchor - root).transpose();
    }
    set_mode(1, std::move(d));
  }
  {
    // limbs stretch away from their attachment joint
    MatrixX3dR d = MatrixX3dR::Zero(V, 3);
    for (int v = 0; v < V; ++v) {
      const int c = model.vertex_bone[static_cast<size_t>(v)];
      if (is_arm_bone(c) || is_leg_bone(c)) {
        d.row(v) = model.template_vertices.row(v) - landmarks[static_cast<size_t>(limb_root(c))].transpose();
      }
    }
    set_mode(2, std::move(d));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  constexpr int kFieldTerms = 3;
  constexpr double kFieldFrequency = 2.5;  // rad/m
  for (int mode = 3; mode < kShapeDims; ++mode) {
    MatrixX3dR d = MatrixX3dR::Zero(V, 3);
    for (int term = 0; term < kFieldTerms; ++term) {
      Eigen::Vector3d amp(normal(rng), normal(rng), normal(rng));
      Eigen::Vector3d freq(normal(rng), normal(rng), normal(rng));
      freq *= kFieldFrequency;
      const double ph = phase(rng);
      for (int v = 0; v < V; ++v) {
        const double s = std::sin(freq.dot(model.template_vertices.row(v).transpose()) + ph);
        d.row(v) += (s * amp).transpose();
      }
    }
    set_mode(mode, std::move(d));
  }
  return model;
}

void save_body_model(const BodyModel& model, const std::filesystem::path& path) {
  Archive ar;
  const auto V = static_cast<std::int64_t>(model.num_vertices());
  const auto K = static_cast<std::int64_t>(model.num_joints());
  const auto F = static_cast<std::int64_t>(model.faces.rows());
  const auto J = static_cast<std::int64_t>(model.num_regressed_joints());
  ar.header = {{"format", "crowdmesh-body-model"},
               {"version", kModelFormatVersion},
               {"seed", model.seed},
               {"K", K},
               {"V", V},
               {"F", F},
               {"J", J},
               {"config",
                {{"num_joints", model.config.num_joints},
                 {"rings_per_bone", model.config.rings_per_bone},
                 {"verts_per_ring", model.config.verts_per_ring},
                 {"regressor_neighbors", model.config.regressor_neighbors},
                 {"shape_rms", model.config.shape_rms}}}};
  auto f32 = [](const auto& m) {
    std::vector<float> out(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<size_t>(i)] = static_cast<float>(m.data()[i]);
    return out;
  };
  ar.blocks.push_back(ArchiveBlock::from_f32("template_vertices", {V, 3}, f32(model.template_vertices)));
  ar.blocks.push_back(ArchiveBlock::from_f32("shape_dirs", {V, 3, kShapeDims}, f32(model.shape_dirs)));
  ar.blocks.push_back(ArchiveBlock::from_f32("skin_weights", {V, K}, f32(model.skin_weights)));
  ar.blocks.push_back(ArchiveBlock::from_f32("joint_regressor", {J, V}, f32(model.joint_regressor)));
  ar.blocks.push_back(ArchiveBlock::from_f32("rest_joints", {K, 3}, f32(model.rest_joints)));
  std::vector<std::int32_t> faces(model.faces.data(), model.faces.data() + model.faces.size());
  ar.blocks.push_back(ArchiveBlock::from_i32("faces", {F, 3}, faces));
  std::vector<std::int32_t> parents(model.parents.begin(), model.parents.end());
  ar.blocks.push_back(ArchiveBlock::from_i32("parents", {K}, parents));
  std::vector<std::int32_t> k2s(model.kinematic_to_superset.begin(), model.kinematic_to_superset.end());
  ar.blocks.push_back(ArchiveBlock::from_i32("kinematic_to_superset", {K}, k2s));
  std::vector<std::int32_t> vb(model.vertex_bone.begin(), model.vertex_bone.end());
  ar.blocks.push_back(ArchiveBlock::from_i32("vertex_bone", {V}, vb));
  write_archive(path, kModelMagic, ar);
}

BodyModel load_body_model(const std::filesystem::path& path) {
  const Archive ar = read_archive(path, kModelMagic);
  if (ar.header.value("version", -1) != kModelFormatVersion) {
    throw UnsupportedVersionError(path.string() + ": unsupported body model version");
  }
  BodyModel model;
  try {
    model.seed = ar.header.at("seed").get<std::uint64_t>();
    const auto& c = ar.header.at("config");
    model.config.num_joints = c.at("num_joints").get<int>();
    model.config.rings_per_bone = c.at("rings_per_bone").get<int>();
    model.config.verts_per_ring = c.at("verts_per_ring").get<int>();
    model.config.regressor_neighbors = c.at("regressor_neighbors").get<int>();
    model.config.shape_rms = c.at("shape_rms").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": malformed body model header: " + e.what(), 16);
  }
  const auto V = ar.header.at("V").get<Eigen::Index>();
  const auto K = ar.header.at("K").get<Eigen::Index>();
  const auto F = ar.header.at("F").get<Eigen::Index>();
  const auto J = ar.header.at("J").get<Eigen::Index>();
  auto fill = [&](auto& m, const char* name, Eigen::Index rows, Eigen::Index cols) {
    const auto values = ar.block(name).as_f32();
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
      throw ParseError(path.string() + ": block '" + name + "' has wrong size", 0);
    }
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows * cols; ++i) m.data()[i] = values[static_cast<size_t>(i)];
  };
  fill(model.template_vertices, "template_vertices", V, 3);
  fill(model.shape_dirs, "shape_dirs", 3 * V, kShapeDims);
  fill(model.skin_weights, "skin_weights", V, K);
  fill(model.joint_regressor, "joint_regressor", J, V);
  fill(model.rest_joints, "rest_joints", K, 3);
  const auto faces = ar.block("faces").as_i32();
  if (static_cast<Eigen::Index>(faces.size()) != 3 * F) {
    throw ParseError(path.string() + ": block 'faces' has wrong size", 0);
  }
  model.faces.resize(F, 3);
  std::copy(faces.begin(), faces.end(), model.faces.data());
  const auto parents = ar.block("parents").as_i32();
  model.parents.assign(parents.begin(), parents.end());
  const auto k2s = ar.block("kinematic_to_superset").as_i32();
  model.kinematic_to_superset.assign(k2s.begin(), k2s.end());
  const auto vb = ar.block("vertex_bone").as_i32();
  model.vertex_bone.assign(vb.begin(), vb.end());
  if (static_cast<Eigen::Index>(model.parents.size()) != K ||
      static_cast<Eigen::Index>(model.vertex_bone.size()) != V) {
    throw ParseError(path.string() + ": inconsistent body model arrays", 0);
  }
  return model;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Eigen::Vector3d rotation_to_axis_angle(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

BodyParams BodyParams::zeros(int num_pose_joints) {
  BodyParams p;
  p.theta = MatrixX3dR::Zero(num_pose_joints, 3);
  return p;
}

std::vector<double> BodyParams::flatten() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(3 + theta.size() + kShapeDims + 3));
  for (int i = 0; i < 3; ++i) out.push_back(theta_g[i]);
  for (Eigen::Index i = 0; i < theta.size(); ++i) out.push_back(theta.data()[i]);
  for (int i = 0; i < kShapeDims; ++i) out.push_back(beta[i]);
  for (int i = 0; i < 3; ++i) out.push_back(cam[i]);
  return out;
}

BodyParams BodyParams::unflatten(const std::vector<double>& values, int num_pose_joints) {
  const size_t expected = static_cast<size_t>(3 + 3 * num_pose_joints + kShapeDims + 3);
  if (values.size() != expected) {
    throw ShapeError("flattened body params: expected " + std::to_string(expected) +
                     " values, got " + std::to_string(values.size()));
  }
  BodyParams p = zeros(num_pose_joints);
  size_t i = 0;
  for (int c = 0; c < 3; ++c) p.theta_g[c] = values[i++];
  for (Eigen::Index c = 0; c < p.theta.size(); ++c) p.theta.data()[c] = values[i++];
  for (int c = 0; c < kShapeDims; ++c) p.beta[c] = values[i++];
  for (int c = 0; c < 3; ++c) p.cam[c] = values[i++];
  return p;
}

}  // namespace crowdmesh

#include "crowdmesh/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Geometry>

#include "crowdmesh/archive.hpp"
#include "crowdmesh/errors.hpp"
#include "crowdmesh/joints.hpp"
#include "crowdmesh/metrics.hpp"

namespace crowdmesh {

namespace {

namespace fs = std::filesystem;

// Everything stored on disk is float32; quantizing at generation time makes
// the in-memory sample identical to what read_sample returns.
double q(double x) { return static_cast<double>(static_cast<float>(x)); }

template <typename M>
void quantize(M& m) {
  m = m.unaryExpr([](double v) { return q(v); }).eval();
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int side_of_bone(int bone) {
  using namespace joints;
  if ((bone >= kLShoulder && bone <= kLWrist) || (bone >= kLHip && bone <= kLAnkle)) return 1;
  if ((bone >= kRShoulder && bone <= kRWrist) || (bone >= kRHip && bone <= kRAnkle)) return -1;
  return 0;
}

std::array<float, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), qq = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(i) % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = qq, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = qq, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = qq; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

BBox joints_box(const MatrixX2dR& pts) {
  BBox b{pts.col(0).minCoeff(), pts.col(1).minCoeff(), pts.col(0).maxCoeff(),
         pts.col(1).maxCoeff()};
  return b;
}

MatrixX2dR project_all(const PinholeCamera& cam, const MatrixX3dR& pts) {
  MatrixX2dR out(pts.rows(), 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) out.row(i) = cam.project(pts.row(i).transpose());
  return out;
}

struct PersonDraw {
  BodyParams params;
  MatrixX3dR joints_model;  // J_s x 3, model space
  MatrixX3dR verts_model;
};

struct Placement {
  std::vector<Eigen::Vector3d> translation;
  double deviation = std::numeric_limits<double>::infinity();
  bool inside = false;
};

std::vector<BBox> placed_boxes(const PinholeCamera& cam, const std::vector<PersonDraw>& people,
                               const std::vector<Eigen::Vector3d>& t) {
  std::vector<BBox> boxes;
  for (size_t i = 0; i < people.size(); ++i) {
    const MatrixX3dR pts = people[i].joints_model.rowwise() + t[i].transpose();
    boxes.push_back(joints_box(project_all(cam, pts)));
  }
  return boxes;
}

double max_iou_of(const std::vector<BBox>& boxes, size_t i) {
  double best = 0.0;
  for (size_t j = 0; j < boxes.size(); ++j) {
    if (j != i) best = std::max(best, bbox_iou(boxes[i], boxes[j]));
  }
  return best;
}

Placement try_placement(std::mt19937_64& rng, const SceneConfig& config, const PinholeCamera& cam,
                        const std::vector<PersonDraw>& people) {
  const size_t n = people.size();
  Placement pl;
  pl.translation.assign(n, Eigen::Vector3d::Zero());
  for (size_t i = 0; i < n; ++i) {
    pl.translation[i] = {0.0, uniform(rng, -0.1, 0.1), uniform(rng, config.depth_min, config.depth_max)};
  }
  auto set_root_pixel = [&](size_t i, double u) {
    pl.translation[i].x() = (u - cam.cx) * pl.translation[i].z() / cam.focal;
  };
  auto box_of = [&](size_t i) {
    const MatrixX3dR pts = people[i].joints_model.rowwise() + pl.translation[i].transpose();
    return joints_box(project_all(cam, pts));
  };
  set_root_pixel(0, cam.cx);
  for (size_t i = 1; i < n; ++i) {
    const auto anchor = static_cast<size_t>(
        std::uniform_int_distribution<std::size_t>(0, i - 1)(rng));
    const double target =
        std::clamp(config.overlap_target + uniform(rng, -0.05, 0.05), 0.0, 1.0);
    const double sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
    const double gap = uniform(rng, 0.0, 8.0);
    const BBox anchor_box = box_of(anchor);
    const double u_anchor = cam.project(pl.translation[anchor]).x();
    auto iou_at = [&](double du) {
      set_root_pixel(i, u_anchor + sign * du);
      return bbox_iou(box_of(i), anchor_box);
    };
    double du = 0.0;
    if (target <= 0.0) {
      double lo = 0.0, hi = 2.0 * cam.width;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (iou_at(mid) > 0.0 ? lo : hi) = mid;
      }
      du = hi + gap;
    } else if (iou_at(0.0) > target) {
      double lo = 0.0, hi = 2.0 * cam.width;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (iou_at(mid) > target ? lo : hi) = mid;
      }
      du = 0.5 * (lo + hi);
    }
    set_root_pixel(i, u_anchor + sign * du);
  }
  // center the group horizontally with a small jitter
  auto boxes = placed_boxes(cam, people, pl.translation);
  double x0 = boxes[0].x_min, x1 = boxes[0].x_max;
  for (const auto& b : boxes) x0 = std::min(x0, b.x_min), x1 = std::max(x1, b.x_max);
  const double shift = cam.cx - 0.5 * (x0 + x1) + uniform(rng, -0.08, 0.08) * cam.width;
  for (auto& t : pl.translation) t.x() += shift * t.z() / cam.focal;

  boxes = placed_boxes(cam, people, pl.translation);
  pl.deviation = 0.0;
  pl.inside = true;
  for (size_t i = 0; i < n; ++i) {
    if (n > 1) pl.deviation = std::max(pl.deviation, std::abs(max_iou_of(boxes, i) - config.overlap_target));
    const Eigen::Vector2d c = boxes[i].center();
    if (c.x() < 0.0 || c.x() >= cam.width || c.y() < 0.0 || c.y() >= cam.height) pl.inside = false;
  }
  return pl;
}

double edge(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py) {
  return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
}

std::string sample_array_file(const std::string& name) { return name + ".bin"; }

}  // namespace

void SceneConfig::validate() const {
  if (image_size < 16) throw ConfigError("scene image_size must be at least 16");
  if (!(focal > 0.0)) throw ConfigError("scene focal must be positive");
  if (n_persons < 1) throw ConfigError("scene needs at least one person");
  if (!(overlap_target >= 0.0 && overlap_target <= 1.0)) {
    throw ConfigError("overlap_target must lie in [0, 1]");
  }
  if (!(iou_tolerance >= 0.0) || max_attempts < 1) {
    throw ConfigError("iou_tolerance must be non-negative and max_attempts positive");
  }
  if (!(depth_min > 0.5) || !(depth_max >= depth_min)) {
    throw ConfigError("depth range must satisfy 0.5 < depth_min <= depth_max");
  }
  if (!(pose_range >= 0.0) || !(shape_range >= 0.0) || !(yaw_range >= 0.0) ||
      !(tilt_range >= 0.0) || !(background_noise >= 0.0)) {
    throw ConfigError("scene sampling ranges must be non-negative");
  }
  if (pose_range * std::sqrt(3.0) >= 2.0 * M_PI) throw ConfigError("pose_range too large");
}

nlohmann::json SceneConfig::to_json() const {
  return {{"image_size", image_size},         {"focal", focal},
          {"n_persons", n_persons},           {"overlap_target", overlap_target},
          {"iou_tolerance", iou_tolerance},   {"max_attempts", max_attempts},
          {"depth_min", depth_min},           {"depth_max", depth_max},
          {"pose_range", pose_range},         {"shape_range", shape_range},
          {"yaw_range", yaw_range},           {"tilt_range", tilt_range},
          {"background_noise", background_noise}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& doc) {
  SceneConfig c;
  c.image_size = doc.value("image_size", c.image_size);
  c.focal = doc.value("focal", c.focal);
  c.n_persons = doc.value("n_persons", c.n_persons);
  c.overlap_target = doc.value("overlap_target", c.overlap_target);
  c.iou_tolerance = doc.value("iou_tolerance", c.iou_tolerance);
  c.max_attempts = doc.value("max_attempts", c.max_attempts);
  c.depth_min = doc.value("depth_min", c.depth_min);
  c.depth_max = doc.value("depth_max", c.depth_max);
  c.pose_range = doc.value("pose_range", c.pose_range);
  c.shape_range = doc.value("shape_range", c.shape_range);
  c.yaw_range = doc.value("yaw_range", c.yaw_range);
  c.tilt_range = doc.value("tilt_range", c.tilt_range);
  c.background_noise = doc.value("background_noise", c.background_noise);
  return c;
}

BBox ScenePerson::bbox() const { return joints_box(gt_pose2d); }

Pose2D ScenePerson::pose2d(int image_width, int image_height) const {
  Pose2D p = Pose2D::empty(static_cast<int>(gt_pose2d.rows()), "superset");
  p.joints = gt_pose2d;
  for (Eigen::Index j = 0; j < gt_pose2d.rows(); ++j) {
    const double x = gt_pose2d(j, 0), y = gt_pose2d(j, 1);
    p.confidence[j] = (x >= 0.0 && x < image_width && y >= 0.0 && y < image_height) ? 1.0 : 0.0;
  }
  return p;
}

RenderResult render(const BodyModel& model, std::span<const RenderPerson> persons,
                    const PinholeCamera& camera, const torch::Tensor& canvas) {
  const int H = camera.height, W = camera.width;
  if (canvas.dim() != 3 || canvas.size(0) != H || canvas.size(1) != W || canvas.size(2) != 3) {
    throw ShapeError("canvas must be H x W x 3 matching the camera");
  }
  RenderResult out;
  out.image = canvas.to(torch::kFloat32).clone().contiguous();
  out.owner = torch::full({H, W}, -1, torch::kInt32);
  out.depth = torch::full({H, W}, std::numeric_limits<float>::infinity(), torch::kFloat32);
  auto img = out.image.accessor<float, 3>();
  auto own = out.owner.accessor<std::int32_t, 2>();
  auto dep = out.depth.accessor<float, 2>();

  for (size_t p = 0; p < persons.size(); ++p) {
    const auto& verts = persons[p].vertices;
    if (verts.rows() != model.num_vertices()) throw ShapeError("render: vertex count mismatch");
    for (Eigen::Index f = 0; f < model.faces.rows(); ++f) {
      const int ia = model.faces(f, 0), ib = model.faces(f, 1), ic = model.faces(f, 2);
      const Eigen::Vector3d A = verts.row(ia), B = verts.row(ib), C = verts.row(ic);
      if (A.z() <= 1e-3 || B.z() <= 1e-3 || C.z() <= 1e-3) continue;
      const Eigen::Vector2d a = camera.project(A), b = camera.project(B), c = camera.project(C);
      const double area = edge(a, b, c.x(), c.y());
      if (std::abs(area) < 1e-12) continue;

      const Eigen::Vector3d normal = (B - A).cross(C - A).normalized();
      const Eigen::Vector3d view = ((A + B + C) / 3.0).normalized();
      const float shade = static_cast<float>(0.45 + 0.55 * std::abs(normal.dot(view)));
      auto color = persons[p].color;
      const int side = side_of_bone(model.vertex_bone[static_cast<size_t>(ia)]);
      for (auto& ch : color) {
        if (side > 0) ch = 0.7f * ch + 0.3f;
        if (side < 0) ch = 0.7f * ch;
        ch *= shade;
      }

      const int r0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
      const int r1 = std::min(H - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
      const int c0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
      const int c1 = std::min(W - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
      for (int r = r0; r <= r1; ++r) {
        const double py = r + 0.5;
        for (int col = c0; col <= c1; ++col) {
          const double px = col + 0.5;
          const double w0 = edge(b, c, px, py) / area;
          const double w1 = edge(c, a, px, py) / area;
          const double w2 = 1.0 - w0 - w1;
          if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
          const double z = 1.0 / (w0 / A.z() + w1 / B.z() + w2 / C.z());
          if (z < dep[r][col]) {
            dep[r][col] = static_cast<float>(z);
            own[r][col] = static_cast<std::int32_t>(p);
            for (int k = 0; k < 3; ++k) img[r][col][k] = color[static_cast<size_t>(k)];
          }
        }
      }
    }
  }
  for (size_t p = 0; p < persons.size(); ++p) {
    out.silhouettes.push_back((out.owner == static_cast<std::int32_t>(p)).to(torch::kUInt8));
  }
  return out;
}

Mesh person_mesh(const BodyModel& model, const ScenePerson& person) {
  Mesh m = decode_mesh(model, person.params);
  m.vertices.rowwise() += person.translation.transpose();
  return m;
}

SceneSample generate_scene(std::mt19937_64& rng, const SceneConfig& config,
                           const BodyModel& model) {
  config.validate();
  PinholeCamera cam;
  cam.focal = config.focal;
  cam.width = cam.height = config.image_size;
  cam.cx = cam.cy = 0.5 * config.image_size;

  const int n = config.n_persons;
  const int Kp = model.num_pose_joints();
  std::vector<PersonDraw> people(static_cast<size_t>(n));
  for (auto& person : people) {
    BodyParams p = BodyParams::zeros(Kp);
    p.theta_g = {uniform(rng, -config.tilt_range, config.tilt_range),
                 uniform(rng, -config.yaw_range, config.yaw_range),
                 uniform(rng, -config.tilt_range, config.tilt_range)};
    for (int j = 0; j < Kp; ++j) {
      for (int c = 0; c < 3; ++c) p.theta(j, c) = uniform(rng, -config.pose_range, config.pose_range);
    }
    for (int k = 0; k < kShapeDims; ++k) p.beta[k] = uniform(rng, -config.shape_range, config.shape_range);
    quantize(p.theta_g);
    quantize(p.theta);
    quantize(p.beta);
    person.params = p;
    const Mesh mesh = decode_mesh(model, p);
    person.verts_model = mesh.vertices;
    person.joints_model = regress_joints(model, mesh);
  }

  Placement best;
  bool accepted = false;
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    Placement pl = try_placement(rng, config, cam, people);
    const bool better = (pl.inside && !best.inside) ||
                        (pl.inside == best.inside && pl.deviation < best.deviation);
    if (better) best = pl;
    if (pl.inside && pl.deviation <= config.iou_tolerance) {
      accepted = true;
      break;
    }
  }

  SceneSample s;
  s.camera = cam;
  s.placement_best_effort = !accepted;
  s.overlap_target = config.overlap_target;

  // background: muted base color plus per-pixel noise
  const double hue0 = uniform(rng, 0.0, 1.0);
  const auto base = hsv(hue0, uniform(rng, 0.1, 0.35), uniform(rng, 0.3, 0.6));
  auto canvas = torch::empty({cam.height, cam.width, 3}, torch::kFloat32);
  {
    auto acc = canvas.accessor<float, 3>();
    for (int r = 0; r < cam.height; ++r) {
      for (int c = 0; c < cam.width; ++c) {
        for (int k = 0; k < 3; ++k) {
          const double v = base[static_cast<size_t>(k)] +
                           uniform(rng, -config.background_noise, config.background_noise);
          acc[r][c][k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }

  std::vector<RenderPerson> draws;
  const double golden = 0.6180339887498949;
  const double hue_start = uniform(rng, 0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    auto& pd = people[static_cast<size_t>(i)];
    Eigen::Vector3d t = best.translation[static_cast<size_t>(i)];
    quantize(t);
    ScenePerson sp;
    sp.params = pd.params;
    sp.translation = t;
    sp.joints3d = pd.joints_model.rowwise() + t.transpose();
    quantize(sp.joints3d);
    sp.gt_pose3d = (sp.joints3d.rowwise() - sp.joints3d.row(joints::kRoot)) * 1000.0;
    quantize(sp.gt_pose3d);
    sp.gt_pose2d = project_all(cam, sp.joints3d);
    quantize(sp.gt_pose2d);
    // weak-perspective camera of the root-centered joints over the full image
    const Eigen::Vector3d root = sp.joints3d.row(joints::kRoot);
    sp.params.cam = {2.0 * cam.focal / (cam.width * root.z()),
                     cam.focal * root.x() / root.z() + cam.cx - 0.5 * cam.width,
                     cam.focal * root.y() / root.z() + cam.cy - 0.5 * cam.height};
    quantize(sp.params.cam);
    s.persons.push_back(std::move(sp));

    RenderPerson rp;
    rp.vertices = pd.verts_model.rowwise() + t.transpose();
    rp.color = hsv(hue_start + golden * i, 0.75, 0.95);
    draws.push_back(std::move(rp));
  }

  RenderResult rr = render(model, draws, cam, canvas);
  s.image = rr.image;
  auto own = rr.owner.accessor<std::int32_t, 2>();
  for (int i = 0; i < n; ++i) {
    auto& sp = s.persons[static_cast<size_t>(i)];
    sp.silhouette = rr.silhouettes[static_cast<size_t>(i)];
    sp.visibility.assign(static_cast<size_t>(sp.gt_pose2d.rows()), 1);
    for (Eigen::Index j = 0; j < sp.gt_pose2d.rows(); ++j) {
      const double x = sp.gt_pose2d(j, 0), y = sp.gt_pose2d(j, 1);
      if (x < 0.0 || y < 0.0 || x >= cam.width || y >= cam.height) continue;
      const int o = own[static_cast<int>(y)][static_cast<int>(x)];
      if (o >= 0 && o != i) sp.visibility[static_cast<size_t>(j)] = 0;
    }
  }
  return s;
}

double max_pairwise_iou(const SceneSample& sample, std::size_t i) {
  double best = 0.0;
  const BBox bi = sample.persons.at(i).bbox();
  for (std::size_t j = 0; j < sample.persons.size(); ++j) {
    if (j != i) best = std::max(best, bbox_iou(bi, sample.persons[j].bbox()));
  }
  return best;
}

double scene_crowd_index(const SceneSample& sample, std::size_t i) {
  auto full = [](const ScenePerson& p) {
    Pose2D pose = Pose2D::empty(static_cast<int>(p.gt_pose2d.rows()), "superset");
    pose.joints = p.gt_pose2d;
    pose.confidence.setOnes();
    return pose;
  };
  const auto& target = sample.persons.at(i);
  std::vector<Pose2D> others;
  for (std::size_t j = 0; j < sample.persons.size(); ++j) {
    if (j != i) others.push_back(full(sample.persons[j]));
  }
  return crowd_index(full(target), others, target.bbox());
}

void write_sample(const SceneSample& sample, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json arrays = nlohmann::json::array();
  auto put = [&](const ArchiveBlock& block) {
    const std::string file = sample_array_file(block.name);
    write_array_file(dir / file, block);
    arrays.push_back({{"name", block.name},
                      {"file", file},
                      {"dtype", std::string(dtype_name(block.dtype))},
                      {"shape", block.shape}});
  };
  auto f32 = [](const auto& m) {
    std::vector<float> v(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<size_t>(k++)] = static_cast<float>(m(r, c));
    }
    return v;
  };
  const auto H = static_cast<std::int64_t>(sample.height());
  const auto W = static_cast<std::int64_t>(sample.width());
  const auto img = sample.image.to(torch::kFloat32).contiguous();
  put(ArchiveBlock::from_f32("image", {H, W, 3},
                             std::span<const float>(img.data_ptr<float>(), static_cast<size_t>(img.numel()))));

  nlohmann::json persons = nlohmann::json::array();
  for (size_t i = 0; i < sample.persons.size(); ++i) {
    const auto& p = sample.persons[i];
    const std::string pre = "person" + std::to_string(i) + "_";
    const auto flat = p.params.flatten();
    std::vector<float> pf(flat.begin(), flat.end());
    put(ArchiveBlock::from_f32(pre + "params", {static_cast<std::int64_t>(pf.size())}, pf));
    const std::vector<float> t = {static_cast<float>(p.translation.x()), static_cast<float>(p.translation.y()),
                                  static_cast<float>(p.translation.z())};
    put(ArchiveBlock::from_f32(pre + "translation", {3}, t));
    const auto J = static_cast<std::int64_t>(p.joints3d.rows());
    put(ArchiveBlock::from_f32(pre + "joints3d", {J, 3}, f32(p.joints3d)));
    put(ArchiveBlock::from_f32(pre + "pose3d", {J, 3}, f32(p.gt_pose3d)));
    put(ArchiveBlock::from_f32(pre + "pose2d", {J, 2}, f32(p.gt_pose2d)));
    put(ArchiveBlock::from_u8(pre + "visibility", {J}, p.visibility));
    const auto sil = p.silhouette.to(torch::kUInt8).contiguous();
    put(ArchiveBlock::from_u8(pre + "silhouette", {H, W},
                              std::span<const std::uint8_t>(sil.data_ptr<std::uint8_t>(),
                                                            static_cast<size_t>(sil.numel()))));
    persons.push_back({{"num_pose_joints", p.params.theta.rows()}, {"num_joints", J}});
  }

  nlohmann::json meta = {{"format", "crowdmesh-scene"},
                         {"version", kSceneFormatVersion},
                         {"id", sample.id},
                         {"seed", sample.seed},
                         {"camera",
                          {{"focal", sample.camera.focal},
                           {"cx", sample.camera.cx},
                           {"cy", sample.camera.cy},
                           {"width", sample.camera.width},
                           {"height", sample.camera.height}}},
                         {"placement_best_effort", sample.placement_best_effort},
                         {"overlap_target", sample.overlap_target},
                         {"persons", persons},
                         {"arrays", arrays}};
  write_json_file(dir / "meta.json", meta);
}

SceneSample read_sample(const fs::path& dir) {
  const auto meta = read_json_file(dir / "meta.json");
  try {
    const int version = meta.at("version").get<int>();
    if (version != kSceneFormatVersion) {
      throw UnsupportedVersionError("scene sample version " + std::to_string(version) +
                                    " is not supported (expected " +
                                    std::to_string(kSceneFormatVersion) + ")");
    }
    std::map<std::string, ArchiveBlock> blocks;
    for (const auto& a : meta.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      blocks.emplace(name, read_array_file(dir / a.at("file").get<std::string>(), name,
                                           dtype_from_name(a.at("dtype").get<std::string>()),
                                           a.at("shape").get<std::vector<std::int64_t>>()));
    }
    auto block = [&](const std::string& name) -> const ArchiveBlock& {
      const auto it = blocks.find(name);
      if (it == blocks.end()) throw IoError("sample " + dir.string() + " lacks array '" + name + "'");
      return it->second;
    };
    auto rows3 = [&](const ArchiveBlock& b) {
      const auto v = b.as_f32();
      MatrixX3dR m(b.shape.at(0), 3);
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (int c = 0; c < 3; ++c) m(i, c) = v[static_cast<size_t>(i * 3 + c)];
      }
      return m;
    };

    SceneSample s;
    s.id = meta.at("id").get<std::string>();
    s.seed = meta.at("seed").get<std::uint64_t>();
    const auto& cam = meta.at("camera");
    s.camera.focal = cam.at("focal").get<double>();
    s.camera.cx = cam.at("cx").get<double>();
    s.camera.cy = cam.at("cy").get<double>();
    s.camera.width = cam.at("width").get<int>();
    s.camera.height = cam.at("height").get<int>();
    s.placement_best_effort = meta.at("placement_best_effort").get<bool>();
    s.overlap_target = meta.at("overlap_target").get<double>();
    const auto H = s.camera.height, W = s.camera.width;
    {
      const auto& b = block("image");
      if (b.shape != std::vector<std::int64_t>{H, W, 3}) throw ShapeError("image shape disagrees with camera");
      auto v = b.as_f32();
      s.image = torch::from_blob(v.data(), {H, W, 3}, torch::kFloat32).clone();
    }
    const auto& persons = meta.at("persons");
    for (size_t i = 0; i < persons.size(); ++i) {
      const std::string pre = "person" + std::to_string(i) + "_";
      ScenePerson p;
      const int Kp = persons[i].at("num_pose_joints").get<int>();
      const auto pf = block(pre + "params").as_f32();
      p.params = BodyParams::unflatten(std::vector<double>(pf.begin(), pf.end()), Kp);
      const auto t = block(pre + "translation").as_f32();
      p.translation = {t.at(0), t.at(1), t.at(2)};
      p.joints3d = rows3(block(pre + "joints3d"));
      p.gt_pose3d = rows3(block(pre + "pose3d"));
      const auto& b2 = block(pre + "pose2d");
      const auto v2 = b2.as_f32();
      p.gt_pose2d.resize(b2.shape.at(0), 2);
      for (Eigen::Index j = 0; j < p.gt_pose2d.rows(); ++j) {
        p.gt_pose2d(j, 0) = v2[static_cast<size_t>(2 * j)];
        p.gt_pose2d(j, 1) = v2[static_cast<size_t>(2 * j + 1)];
      }
      p.visibility = block(pre + "visibility").as_u8();
      auto sil = block(pre + "silhouette").as_u8();
      p.silhouette = torch::from_blob(sil.data(), {H, W}, torch::kUInt8).clone();
      s.persons.push_back(std::move(p));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed sample metadata in ") + dir.string() + ": " + e.what(), 0);
  }
}

nlohmann::json body_model_config_to_json(const BodyModelConfig& c) {
  return {{"num_joints", c.num_joints},
          {"rings_per_bone", c.rings_per_bone},
          {"verts_per_ring", c.verts_per_ring},
          {"regressor_neighbors", c.regressor_neighbors},
          {"shape_rms", c.shape_rms}};
}

BodyModelConfig body_model_config_from_json(const nlohmann::json& doc) {
  BodyModelConfig c;
  c.num_joints = doc.value("num_joints", c.num_joints);
  c.rings_per_bone = doc.value("rings_per_bone", c.rings_per_bone);
  c.verts_per_ring = doc.value("verts_per_ring", c.verts_per_ring);
  c.regressor_neighbors = doc.value("regressor_neighbors", c.regressor_neighbors);
  c.shape_rms = doc.value("shape_rms", c.shape_rms);
  return c;
}

void DatasetConfig::validate() const {
  scene.validate();
  body_model.validate();
  if (splits.empty()) throw ConfigError("dataset needs at least one split");
  for (const auto& s : splits) {
    if (s.name.empty() || s.count < 0 || s.n_persons < 1 ||
        !(s.overlap_target >= 0.0 && s.overlap_target <= 1.0)) {
      throw ConfigError("invalid split '" + s.name + "'");
    }
  }
}

nlohmann::json DatasetConfig::to_json() const {
  nlohmann::json sp = nlohmann::json::array();
  for (const auto& s : splits) {
    sp.push_back({{"name", s.name},
                  {"count", s.count},
                  {"overlap_target", s.overlap_target},
                  {"n_persons", s.n_persons}});
  }
  return {{"scene", scene.to_json()},
          {"base_seed", base_seed},
          {"body_model_seed", body_model_seed},
          {"body_model", body_model_config_to_json(body_model)},
          {"splits", sp}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& doc) {
  DatasetConfig c;
  if (doc.contains("scene")) c.scene = SceneConfig::from_json(doc.at("scene"));
  c.base_seed = doc.value("base_seed", c.base_seed);
  c.body_model_seed = doc.value("body_model_seed", c.body_model_seed);
  if (doc.contains("body_model")) c.body_model = body_model_config_from_json(doc.at("body_model"));
  for (const auto& s : doc.value("splits", nlohmann::json::array())) {
    SplitSpec sp;
    sp.name = s.at("name").get<std::string>();
    sp.count = s.at("count").get<int>();
    sp.overlap_target = s.value("overlap_target", c.scene.overlap_target);
    sp.n_persons = s.value("n_persons", c.scene.n_persons);
    c.splits.push_back(sp);
  }
  return c;
}

void generate_dataset(const DatasetConfig& config, const fs::path& root,
                      const std::function<void(const std::string&)>& progress) {
  config.validate();
  fs::create_directories(root);
  const BodyModel model = build_body_model(config.body_model_seed, config.body_model);
  save_body_model(model, root / "body_model.bin");

  nlohmann::json splits = nlohmann::json::object();
  std::uint64_t k = 0;
  for (const auto& split : config.splits) {
    SceneConfig sc = config.scene;
    sc.overlap_target = split.overlap_target;
    sc.n_persons = split.n_persons;
    nlohmann::json ids = nlohmann::json::array();
    for (int i = 0; i < split.count; ++i, ++k) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "_%05d", i);
      const std::string id = split.name + buf;
      std::mt19937_64 rng(config.base_seed + k);
      SceneSample s = generate_scene(rng, sc, model);
      s.id = id;
      s.seed = config.base_seed + k;
      write_sample(s, root / id);
      ids.push_back(id);
      if (progress) progress(id);
    }
    splits[split.name] = ids;
  }
  write_json_file(root / "index.json", {{"format", "crowdmesh-dataset"},
                                        {"version", kSceneFormatVersion},
                                        {"base_seed", config.base_seed},
                                        {"config", config.to_json()},
                                        {"splits", splits}});
}

const std::vector<std::string>& DatasetIndex::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("dataset has no split named '" + name + "'");
  return it->second;
}

DatasetIndex load_dataset_index(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory " + root.string() + " does not exist");
  if (!fs::exists(root / "index.json")) throw IoError("dataset " + root.string() + " has no index.json");
  const auto doc = read_json_file(root / "index.json");
  DatasetIndex idx;
  idx.root = root;
  try {
    const int version = doc.at("version").get<int>();
    if (version != kSceneFormatVersion) {
      throw UnsupportedVersionError("dataset version " + std::to_string(version) + " is not supported");
    }
    idx.config = DatasetConfig::from_json(doc.at("config"));
    for (const auto& [name, ids] : doc.at("splits").items()) {
      idx.splits[name] = ids.get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed dataset index: " + std::string(e.what()), 0);
  }
  return idx;
}

SplitStatistics split_statistics(std::span<const SceneSample> samples) {
  SplitStatistics st;
  st.n_scenes = samples.size();
  std::size_t best_effort = 0;
  for (const auto& s : samples) {
    if (s.placement_best_effort) ++best_effort;
    for (std::size_t i = 0; i < s.persons.size(); ++i) {
      st.mean_max_iou += max_pairwise_iou(s, i);
      st.mean_crowd_index += scene_crowd_index(s, i);
      ++st.n_persons;
    }
  }
  if (st.n_persons > 0) {
    st.mean_max_iou /= static_cast<double>(st.n_persons);
    st.mean_crowd_index /= static_cast<double>(st.n_persons);
  }
  if (st.n_scenes > 0) st.best_effort_fraction = static_cast<double>(best_effort) / st.n_scenes;
  return st;
}

}  // namespace crowdmesh

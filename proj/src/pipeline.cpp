#include "crowdmesh/pipeline.hpp"

#include <cmath>

#include "crowdmesh/errors.hpp"
#include "crowdmesh/joints.hpp"

namespace crowdmesh {

PreparedInput prepare_input(const torch::Tensor& image, const Pose2D& superset_pose,
                            const ModelConfig& model, const DataConfig& data,
                            const std::optional<BBox>& bbox) {
  if (superset_pose.size() != joints::kSupersetSize) {
    throw ShapeError("prepare_input expects a " + std::to_string(joints::kSupersetSize) +
                     "-joint superset pose, got " + std::to_string(superset_pose.size()));
  }
  const int S = model.crop_size;
  const int h = model.heatmap_size();
  PreparedInput out;
  out.pose = superset_pose;
  out.bbox = bbox ? *bbox : bbox_from_pose(superset_pose, data.bbox_margin, data.keep_threshold, 1.0);
  auto crop = crop_and_resize(image, out.bbox, S, S);
  out.crop = crop.image;
  out.affine = crop.affine;

  const Pose2D in_crop = superset_pose.transformed(out.affine);
  out.heatmaps = make_heatmaps(in_crop, h, h, model.heatmap_sigma, data.keep_threshold, S, S).maps;

  out.pose2d = torch::zeros({joints::kCommonSize, 3}, torch::kFloat32);
  auto acc = out.pose2d.accessor<float, 2>();
  const auto& map = joints::common_to_superset();
  for (int j = 0; j < joints::kCommonSize; ++j) {
    const int s = map[j];
    const double c = in_crop.confidence(s);
    if (c < data.keep_threshold) continue;
    acc[j][0] = static_cast<float>(in_crop.joints(s, 0));
    acc[j][1] = static_cast<float>(in_crop.joints(s, 1));
    acc[j][2] = static_cast<float>(c);
  }
  return out;
}

PreparedSample prepare_sample(const SceneSample& scene, std::size_t index,
                              const ModelConfig& model, const DataConfig& data,
                              std::mt19937_64* rng) {
  if (index >= scene.persons.size()) throw ShapeError("person index out of range");
  const auto& person = scene.persons[index];
  const Pose2D gt = person.pose2d(scene.width(), scene.height());

  PreparedSample s;
  s.id = scene.id + "/" + std::to_string(index);
  if (rng != nullptr) {
    std::vector<Pose2D> others;
    for (std::size_t k = 0; k < scene.persons.size(); ++k) {
      if (k != index) others.push_back(scene.persons[k].pose2d(scene.width(), scene.height()));
    }
    Pose2D pose = synthesize_pose_errors(gt, *rng, data.errors, others);
    BBox box;
    try {
      box = bbox_from_pose(pose, data.bbox_margin, data.keep_threshold, 1.0);
    } catch (const DegeneratePoseError&) {
      pose = gt;
      box = bbox_from_pose(pose, data.bbox_margin, data.keep_threshold, 1.0);
    }
    if (data.augment_scale > 0.0 || data.augment_shift > 0.0) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double side = box.width() * (1.0 + data.augment_scale * u(*rng));
      const Eigen::Vector2d c =
          box.center() + data.augment_shift * box.width() * Eigen::Vector2d(u(*rng), u(*rng));
      box = {c.x() - 0.5 * side, c.y() - 0.5 * side, c.x() + 0.5 * side, c.y() + 0.5 * side};
    }
    s.input = prepare_input(scene.image, pose, model, data, box);
  } else {
    s.input = prepare_input(scene.image, gt, model, data);
  }

  const double S = model.crop_size;
  const double range = model.depth_range_mm;
  const int Js = joints::kSupersetSize;
  s.joints3d = torch::empty({Js, 3}, torch::kFloat32);
  s.joints2d = torch::empty({Js, 2}, torch::kFloat32);
  auto j3 = s.joints3d.accessor<float, 2>();
  auto j2 = s.joints2d.accessor<float, 2>();
  std::vector<Eigen::Vector2d> crop_xy(Js);
  for (int j = 0; j < Js; ++j) {
    crop_xy[j] = apply_affine(s.input.affine, person.gt_pose2d.row(j).transpose());
    for (int c = 0; c < 3; ++c) j3[j][c] = static_cast<float>(person.gt_pose3d(j, c) / 1000.0);
    j2[j][0] = static_cast<float>(crop_xy[j].x() / S);
    j2[j][1] = static_cast<float>(crop_xy[j].y() / S);
  }

  s.pose_target = torch::zeros({joints::kCommonSize, 3}, torch::kFloat32);
  s.pose_xy_valid = torch::zeros({joints::kCommonSize}, torch::kBool);
  s.pose_z_valid = torch::zeros({joints::kCommonSize}, torch::kBool);
  auto pt = s.pose_target.accessor<float, 2>();
  auto xyv = s.pose_xy_valid.accessor<bool, 1>();
  auto zv = s.pose_z_valid.accessor<bool, 1>();
  const auto& map = joints::common_to_superset();
  for (int j = 0; j < joints::kCommonSize; ++j) {
    const int k = map[j];
    const auto& p = crop_xy[k];
    const double z = person.gt_pose3d(k, 2);
    pt[j][0] = static_cast<float>(p.x() / S);
    pt[j][1] = static_cast<float>(p.y() / S);
    pt[j][2] = static_cast<float>(z / range);
    xyv[j] = p.x() >= 0.0 && p.x() < S && p.y() >= 0.0 && p.y() < S;
    zv[j] = xyv[j] && std::abs(z) <= range;
  }
  s.params = person.params;
  return s;
}

Batch collate(std::span<const PreparedSample> samples) {
  if (samples.empty()) throw ShapeError("cannot collate an empty batch");
  std::vector<torch::Tensor> crop, heat, pose2d, target, xyv, zv, j3, j2;
  std::vector<BodyParams> params;
  Batch b;
  for (const auto& s : samples) {
    b.ids.push_back(s.id);
    crop.push_back(s.input.crop);
    heat.push_back(s.input.heatmaps);
    pose2d.push_back(s.input.pose2d);
    target.push_back(s.pose_target);
    xyv.push_back(s.pose_xy_valid);
    zv.push_back(s.pose_z_valid);
    j3.push_back(s.joints3d);
    j2.push_back(s.joints2d);
    params.push_back(s.params);
  }
  const auto B = static_cast<std::int64_t>(samples.size());
  b.input = {torch::stack(crop), torch::stack(heat), torch::stack(pose2d)};
  b.pose_target = torch::stack(target);
  b.pose_mask = SupervisionMask::all_valid(B, joints::kCommonSize);
  b.pose_mask.xy_valid = torch::stack(xyv);
  b.pose_mask.z_valid = torch::stack(zv);
  b.params = ParamBatch::from_params(params, torch::kFloat32);
  b.joints3d = torch::stack(j3);
  b.joints2d = torch::stack(j2);
  b.shape_mask = SupervisionMask::all_valid(B, joints::kSupersetSize);
  return b;
}

LossBreakdown compute_losses(const NetOutput& out, const Batch& batch, const ModelConfig& model,
                             const LossWeights& weights) {
  const double S = model.crop_size;
  std::vector<torch::Tensor> parts;
  std::vector<double> w;
  LossBreakdown r;

  if (out.pose3d.joints.defined()) {
    const auto scale = torch::tensor({S, S, model.depth_range_mm}, out.pose3d.joints.options());
    const auto pose = loss_pose(out.pose3d.joints / scale, batch.pose_target, batch.pose_mask);
    parts.push_back(pose.value);
    w.push_back(weights.pose);
    r.pose = pose.value.item<double>();
  }
  const auto param = loss_param(out.params, batch.params, batch.shape_mask);
  parts.push_back(param.value);
  w.push_back(weights.param);
  r.param = param.value.item<double>();

  const auto coord = loss_coord_shape(out.joints, out.joints2d / S, batch.joints3d,
                                      batch.joints2d, batch.shape_mask, joints::kRoot);
  parts.push_back(coord.value);
  w.push_back(weights.coord);
  r.coord = coord.value.item<double>();
  r.coord3d = coord.coord3d.value.item<double>();
  r.coord2d = coord.coord2d.value.item<double>();

  r.total = total_loss(parts, w);
  return r;
}

LoadedSplit load_split(const DatasetIndex& index, const std::string& split,
                       std::size_t max_persons) {
  LoadedSplit out;
  out.name = split;
  for (const auto& id : index.split(split)) {
    if (max_persons > 0 && out.persons.size() >= max_persons) break;
    out.scenes.push_back(read_sample(index.sample_dir(id)));
    const auto& scene = out.scenes.back();
    for (std::size_t p = 0; p < scene.persons.size(); ++p) {
      if (max_persons > 0 && out.persons.size() >= max_persons) break;
      out.persons.push_back({out.scenes.size() - 1, p});
    }
  }
  return out;
}

}  // namespace crowdmesh

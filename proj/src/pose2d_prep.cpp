#include "crowdmesh/pose2d_prep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/LU>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

Pose2D Pose2D::empty(int num_joints, std::string joint_set) {
  Pose2D p;
  p.joints = MatrixX2dR::Zero(num_joints, 2);
  p.confidence = Eigen::VectorXd::Zero(num_joints);
  p.joint_set = std::move(joint_set);
  return p;
}

Pose2D Pose2D::transformed(const Affine2& affine) const {
  Pose2D out = *this;
  for (int j = 0; j < size(); ++j) {
    out.joints.row(j) = apply_affine(affine, joints.row(j).transpose()).transpose();
  }
  return out;
}

Pose2D map_to_superset(const Pose2D& pose, const JointSetRegistry& registry) {
  const auto& mapping = registry.at(pose.joint_set);
  if (static_cast<int>(mapping.size()) != pose.size()) {
    throw ShapeError("pose has " + std::to_string(pose.size()) + " joints but joint set '" +
                     pose.joint_set + "' defines " + std::to_string(mapping.size()));
  }
  Pose2D out = Pose2D::empty(joints::kSupersetSize);
  for (int i = 0; i < pose.size(); ++i) {
    if (!mapping[static_cast<size_t>(i)]) continue;
    const int s = *mapping[static_cast<size_t>(i)];
    out.joints.row(s) = pose.joints.row(i);
    out.confidence[s] = pose.confidence[i];
  }
  return out;
}

Pose2D project_from_superset(const Pose2D& superset_pose, const std::string& joint_set,
                             const JointSetRegistry& registry) {
  if (superset_pose.size() != joints::kSupersetSize) {
    throw ShapeError("project_from_superset expects a superset pose");
  }
  const auto& mapping = registry.at(joint_set);
  Pose2D out = Pose2D::empty(static_cast<int>(mapping.size()), joint_set);
  for (size_t i = 0; i < mapping.size(); ++i) {
    if (!mapping[i]) continue;
    out.joints.row(static_cast<Eigen::Index>(i)) = superset_pose.joints.row(*mapping[i]);
    out.confidence[static_cast<Eigen::Index>(i)] = superset_pose.confidence[*mapping[i]];
  }
  return out;
}

void PoseErrorConfig::validate() const {
  for (double p : {jitter_prob, miss_prob, inversion_prob, swap_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("error probabilities must lie in [0, 1]");
  }
  if (jitter_sigma < 0.0 || jitter_sigma_bbox_frac < 0.0) {
    throw ConfigError("jitter sigma must be non-negative");
  }
  if (!(keep_threshold >= 0.0 && keep_threshold <= 1.0)) {
    throw ConfigError("keep_threshold must lie in [0, 1]");
  }
}

PoseErrorConfig PoseErrorConfig::none() {
  PoseErrorConfig c;
  c.jitter_prob = c.miss_prob = c.inversion_prob = c.swap_prob = 0.0;
  return c;
}

Pose2D synthesize_pose_errors(const Pose2D& gt, std::mt19937_64& rng,
                              const PoseErrorConfig& config, std::span<const Pose2D> others) {
  config.validate();
  const double thr = config.keep_threshold;
  double sigma = config.jitter_sigma;
  if (sigma <= 0.0) {
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
    int kept = 0;
    for (int j = 0; j < gt.size(); ++j) {
      if (gt.confidence[j] < thr) continue;
      ++kept;
      x0 = std::min(x0, gt.joints(j, 0));
      x1 = std::max(x1, gt.joints(j, 0));
      y0 = std::min(y0, gt.joints(j, 1));
      y1 = std::max(y1, gt.joints(j, 1));
    }
    sigma = kept >= 2 ? config.jitter_sigma_bbox_frac * std::hypot(x1 - x0, y1 - y0) : 0.0;
  }
  const bool superset = gt.joint_set == "superset" && gt.size() == joints::kSupersetSize;
  const auto& flip = joints::superset_flip();

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> low_conf(0.0, thr);
  std::normal_distribution<double> normal(0.0, 1.0);

  Pose2D out = gt;
  for (int j = 0; j < gt.size(); ++j) {
    // fixed number of draws per joint keeps the stream aligned across configs
    const double u_swap = unit(rng), u_inv = unit(rng), u_jit = unit(rng), u_miss = unit(rng);
    const double n_x = normal(rng), n_y = normal(rng);
    const double conf_draw = low_conf(rng);
    const double pick = unit(rng);
    if (gt.confidence[j] < thr) continue;

    Eigen::Vector2d pos = gt.joints.row(j).transpose();
    bool replaced = false;
    if (u_swap < config.swap_prob && !others.empty()) {
      const auto idx = std::min(others.size() - 1, static_cast<size_t>(pick * static_cast<double>(others.size())));
      const Pose2D& other = others[idx];
      if (j < other.size() && other.confidence[j] >= thr) {
        pos = other.joints.row(j).transpose();
        replaced = true;
      }
    }
    if (!replaced && u_inv < config.inversion_prob && superset) {
      const int f = flip[static_cast<size_t>(j)];
      if (f != j && gt.confidence[f] >= thr) pos = gt.joints.row(f).transpose();
    }
    if (u_jit < config.jitter_prob) pos += sigma * Eigen::Vector2d(n_x, n_y);
    out.joints.row(j) = pos.transpose();
    if (u_miss < config.miss_prob) out.confidence[j] = conf_draw;
  }
  return out;
}

Heatmap2D make_heatmaps(const Pose2D& pose, int height, int width, double sigma,
                        double keep_threshold, double input_width, double input_height) {
  if (height <= 0 || width <= 0) throw ShapeError("heatmap size must be positive");
  if (!(sigma > 0.0)) throw ConfigError("heatmap sigma must be positive");
  if (!(input_width > 0.0 && input_height > 0.0)) throw ShapeError("input size must be positive");
  Heatmap2D out;
  out.sigma = sigma;
  out.maps = torch::zeros({pose.size(), height, width}, torch::kFloat32);
  auto acc = out.maps.accessor<float, 3>();
  const double sx = width / input_width, sy = height / input_height;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int j = 0; j < pose.size(); ++j) {
    if (!(pose.confidence[j] >= keep_threshold)) continue;
    // crop pixel u maps to cell coordinate u * scale - 0.5 (cell centers at integers)
    const double cx = pose.joints(j, 0) * sx - 0.5;
    const double cy = pose.joints(j, 1) * sy - 0.5;
    for (int r = 0; r < height; ++r) {
      const double dy = r - cy;
      for (int c = 0; c < width; ++c) {
        const double dx = c - cx;
        acc[j][r][c] = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
      }
    }
  }
  return out;
}

BBox tight_bbox(const Pose2D& pose, double keep_threshold) {
  BBox box{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  int kept = 0;
  for (int j = 0; j < pose.size(); ++j) {
    if (!(pose.confidence[j] >= keep_threshold)) continue;
    ++kept;
    box.x_min = std::min(box.x_min, pose.joints(j, 0));
    box.x_max = std::max(box.x_max, pose.joints(j, 0));
    box.y_min = std::min(box.y_min, pose.joints(j, 1));
    box.y_max = std::max(box.y_max, pose.joints(j, 1));
  }
  if (kept < 2) {
    throw DegeneratePoseError("need at least 2 joints with confidence >= " +
                              std::to_string(keep_threshold) + ", found " + std::to_string(kept));
  }
  return box;
}

BBox bbox_from_pose(const Pose2D& pose, double margin_factor, double keep_threshold,
                    double aspect_ratio) {
  if (!(margin_factor > 0.0) || !(aspect_ratio > 0.0)) {
    throw ConfigError("margin factor and aspect ratio must be positive");
  }
  const BBox tight = tight_bbox(pose, keep_threshold);
  const Eigen::Vector2d c = tight.center();
  double w = tight.width() * margin_factor;
  double h = tight.height() * margin_factor;
  if (w <= 0.0 && h <= 0.0) throw DegeneratePoseError("all kept joints coincide");
  if (w < h * aspect_ratio) {
    w = h * aspect_ratio;
  } else {
    h = w / aspect_ratio;
  }
  return {c.x() - 0.5 * w, c.y() - 0.5 * h, c.x() + 0.5 * w, c.y() + 0.5 * h};
}

CropResult crop_and_resize(const torch::Tensor& image, const BBox& bbox, int out_height,
                           int out_width) {
  if (image.dim() != 3 || image.size(2) != 3) throw ShapeError("image must be H x W x 3");
  if (!bbox.valid()) throw ShapeError("crop box must have positive extent");
  if (out_height <= 0 || out_width <= 0) throw ShapeError("crop size must be positive");
  const auto src = image.to(torch::kFloat32).contiguous();
  const auto H = src.size(0), W = src.size(1);
  auto in = src.accessor<float, 3>();
  CropResult out;
  out.image = torch::zeros({3, out_height, out_width}, torch::kFloat32);
  auto dst = out.image.accessor<float, 3>();
  const double sx = bbox.width() / out_width;
  const double sy = bbox.height() / out_height;
  for (int r = 0; r < out_height; ++r) {
    const double py = bbox.y_min + (r + 0.5) * sy - 0.5;
    const double y0 = std::floor(py);
    const double fy = py - y0;
    for (int c = 0; c < out_width; ++c) {
      const double px = bbox.x_min + (c + 0.5) * sx - 0.5;
      const double x0 = std::floor(px);
      const double fx = px - x0;
      const std::int64_t xs[2] = {static_cast<std::int64_t>(x0), static_cast<std::int64_t>(x0) + 1};
      const std::int64_t ys[2] = {static_cast<std::int64_t>(y0), static_cast<std::int64_t>(y0) + 1};
      const double wx[2] = {1.0 - fx, fx};
      const double wy[2] = {1.0 - fy, fy};
      double acc[3] = {0.0, 0.0, 0.0};
      for (int a = 0; a < 2; ++a) {
        if (ys[a] < 0 || ys[a] >= H || wy[a] == 0.0) continue;
        for (int b = 0; b < 2; ++b) {
          if (xs[b] < 0 || xs[b] >= W || wx[b] == 0.0) continue;
          const double w = wy[a] * wx[b];
          for (int ch = 0; ch < 3; ++ch) acc[ch] += w * in[ys[a]][xs[b]][ch];
        }
      }
      for (int ch = 0; ch < 3; ++ch) dst[ch][r][c] = static_cast<float>(acc[ch]);
    }
  }
  out.affine << 1.0 / sx, 0.0, -bbox.x_min / sx, 0.0, 1.0 / sy, -bbox.y_min / sy;
  return out;
}

Eigen::Vector2d apply_affine(const Affine2& affine, const Eigen::Vector2d& p) {
  return affine.leftCols<2>() * p + affine.col(2);
}

Affine2 invert_affine(const Affine2& affine) {
  const Eigen::Matrix2d lin = affine.leftCols<2>();
  if (std::abs(lin.determinant()) < 1e-300) throw ShapeError("affine map is singular");
  const Eigen::Matrix2d inv = lin.inverse();
  Affine2 out;
  out.leftCols<2>() = inv;
  out.col(2) = -inv * affine.col(2);
  return out;
}

}  // namespace crowdmesh

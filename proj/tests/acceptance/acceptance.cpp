// Acceptance suite: one PASS/FAIL line per criterion.
//
//   crowdmesh_acceptance [--work-dir DIR] [--only 1,2,...] [--keep]
//
// Criteria 6-8 train desk-profile networks and take about half an hour on
// one CPU thread; 7 dominates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Geometry>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/config.hpp"
#include "crowdmesh/harness.hpp"
#include "crowdmesh/joints.hpp"
#include "crowdmesh/losses.hpp"
#include "crowdmesh/metrics.hpp"
#include "crowdmesh/network.hpp"
#include "crowdmesh/pipeline.hpp"
#include "crowdmesh/pose2d_prep.hpp"
#include "crowdmesh/posenet3d.hpp"
#include "crowdmesh/scenegen.hpp"
#include "crowdmesh/shapenet3d.hpp"
#include "support/oracles.hpp"

using namespace crowdmesh;
namespace fs = std::filesystem;

namespace {

// Collects failed checks with a short reason, plus free-form measurements.
struct Outcome {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double at(const torch::Tensor& t, std::initializer_list<std::int64_t> idx) {
  auto v = t;
  for (auto i : idx) v = v[i];
  return v.item<double>();
}

std::vector<std::pair<int, int>> random_tree(int n, std::mt19937_64& rng) {
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i < n; ++i) e.emplace_back(std::uniform_int_distribution<int>(0, i - 1)(rng), i);
  return e;
}

MatrixX3dR random_points(std::mt19937_64& rng, int n, double scale = 300.0) {
  std::normal_distribution<double> d(0.0, scale);
  MatrixX3dR p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = d(rng);
  return p;
}

std::vector<std::vector<double>> rows(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  std::vector<std::vector<double>> r(m.rows(), std::vector<double>(m.cols()));
  for (int i = 0; i < m.rows(); ++i)
    for (int c = 0; c < m.cols(); ++c) r[i][c] = m(i, c);
  return r;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

BodyParams random_params(std::mt19937_64& rng, int k_pose, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  auto p = BodyParams::zeros(k_pose);
  for (int c = 0; c < 3; ++c) p.theta_g(c) = n(rng);
  for (int j = 0; j < k_pose; ++j)
    for (int c = 0; c < 3; ++c) p.theta(j, c) = n(rng);
  for (int s = 0; s < kShapeDims; ++s) p.beta(s) = n(rng);
  return p;
}

void randomize_bn(JointGraphConv& conv) {
  torch::NoGradGuard ng;
  conv->weight.normal_();
  conv->bn->weight.uniform_(0.5, 1.5);
  conv->bn->bias.normal_();
  conv->bn->running_mean.normal_();
  conv->bn->running_var.uniform_(0.5, 2.0);
}

// ---------------------------------------------------------------------------

Outcome kernels_vs_oracles() {
  Outcome o;
  std::mt19937_64 rng(101);
  const int n = 100;

  double gc = 0.0;
  for (int t = 0; t < n; ++t) {
    const int J = 1 + t % 8, Ci = 1 + t % 5, Co = 1 + (t / 5) % 4, B = 2;
    auto edges = random_tree(J, rng);
    if (J >= 4 && t % 2) edges.emplace_back(0, J - 1);
    const auto g = build_skeleton_graph(J, edges);
    torch::manual_seed(t);
    JointGraphConv conv(g, Ci, Co);
    conv->to(torch::kFloat64);
    randomize_bn(conv);
    conv->eval();
    const auto x = torch::randn({B, J, Ci}, torch::kFloat64);
    const auto out = conv->forward(x);
    std::vector<oracle::Grid> xs(B, oracle::Grid(J, std::vector<double>(Ci)));
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < J; ++j)
        for (int c = 0; c < Ci; ++c) xs[b][j][c] = at(x, {b, j, c});
    std::vector<oracle::Grid> w(J, oracle::Grid(Co, std::vector<double>(Ci)));
    oracle::BnParams bn;
    bn.eps = conv->bn->options.eps();
    bn.mean = bn.var = bn.gamma = bn.beta = oracle::Grid(J, std::vector<double>(Co));
    for (int j = 0; j < J; ++j)
      for (int k = 0; k < Co; ++k) {
        for (int c = 0; c < Ci; ++c) w[j][k][c] = at(conv->weight, {j, k, c});
        const int f = j * Co + k;
        bn.mean[j][k] = at(conv->bn->running_mean, {f});
        bn.var[j][k] = at(conv->bn->running_var, {f});
        bn.gamma[j][k] = at(conv->bn->weight, {f});
        bn.beta[j][k] = at(conv->bn->bias, {f});
      }
    const auto want = oracle::graph_conv(xs, w, oracle::normalized_adjacency(J, edges), bn);
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < J; ++j)
        for (int k = 0; k < Co; ++k) gc = std::max(gc, std::abs(at(out, {b, j, k}) - want[b][j][k]));
  }
  o.require(gc < 1e-6, "joint_graph_conv diff " + fmt(gc));

  double bl = 0.0;
  for (int t = 0; t < n; ++t) {
    const int C = 1 + t % 4, h = 2 + t % 5, w = 2 + (t / 3) % 5, stride = t % 2 ? 16 : 4;
    const auto f = torch::randn({1, C, h, w}, torch::kFloat64);
    const auto xy = torch::rand({1, 3, 2}, torch::kFloat64) * (stride * (std::max(h, w) + 2)) - stride;
    const auto s = sample_joint_features({f, stride}, xy);
    std::vector<oracle::Grid> field(C, oracle::Grid(h, std::vector<double>(w)));
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < h; ++r)
        for (int k = 0; k < w; ++k) field[c][r][k] = at(f, {0, c, r, k});
    for (int j = 0; j < 3; ++j) {
      const auto want = oracle::bilinear(field, stride, at(xy, {0, j, 0}), at(xy, {0, j, 1}));
      for (int c = 0; c < C; ++c) bl = std::max(bl, std::abs(at(s, {0, j, c}) - want[c]));
    }
  }
  o.require(bl < 1e-6, "bilinear sampling diff " + fmt(bl));

  double mj = 0.0, mv = 0.0;
  for (int t = 0; t < n; ++t) {
    const int J = 1 + t % 24;
    const auto a = random_points(rng, J), b = random_points(rng, J);
    mj = std::max(mj, std::abs(mpjpe(a, b) - oracle::mean_row_distance(rows(a), rows(b))));
    const int V = 3 + t % 40;
    MatrixX3iR faces(1, 3);
    faces << 0, 1, 2;
    const Mesh ma{random_points(rng, V), faces}, mb{random_points(rng, V), faces};
    mv = std::max(mv, std::abs(mpvpe(ma, mb) - oracle::mean_row_distance(rows(ma.vertices), rows(mb.vertices))));
  }
  o.require(mj < 1e-6, "mpjpe diff " + fmt(mj));
  o.require(mv < 1e-6, "mpvpe diff " + fmt(mv));

  double ci = 0.0;
  std::uniform_real_distribution<double> u(0.0, 100.0), cf(-0.5, 1.0);
  auto random_pose = [&](int J) {
    auto p = Pose2D::empty(J);
    for (int j = 0; j < J; ++j) {
      p.joints(j, 0) = u(rng);
      p.joints(j, 1) = u(rng);
      p.confidence[j] = std::max(0.0, cf(rng));
    }
    return p;
  };
  for (int t = 0; t < n; ++t) {
    const BBox box{20 + t % 7, 25 - t % 5, 80 - t % 3, 70 + t % 9};
    auto target = random_pose(joints::kSupersetSize);
    target.joints.row(0) << 50, 50;
    target.confidence[0] = 1.0;
    std::vector<Pose2D> others;
    for (int k = 0; k < t % 4; ++k) others.push_back(random_pose(joints::kSupersetSize));
    std::vector<std::vector<std::vector<double>>> oxy;
    std::vector<std::vector<double>> oc;
    for (const auto& p : others) {
      oxy.push_back(rows(p.joints));
      oc.emplace_back(p.confidence.data(), p.confidence.data() + p.size());
    }
    const double want = oracle::crowd_ratio(
        rows(target.joints), std::vector<double>(target.confidence.data(), target.confidence.data() + target.size()),
        oxy, oc, {box.x_min, box.y_min, box.x_max, box.y_max});
    ci = std::max(ci, std::abs(crowd_index(target, others, box) - want));
  }
  o.require(ci < 1e-6, "crowd_index diff " + fmt(ci));

  double iou = 0.0;
  std::uniform_real_distribution<double> side(5.0, 60.0);
  for (int t = 0; t < n; ++t) {
    const double ax = u(rng), ay = u(rng), bx = ax + side(rng) - 30.0, by = ay + side(rng) - 30.0;
    const BBox a{ax, ay, ax + side(rng), ay + side(rng)};
    const BBox b{bx, by, bx + side(rng), by + side(rng)};
    const double want = oracle::raster_iou({a.x_min, a.y_min, a.x_max, a.y_max}, {b.x_min, b.y_min, b.x_max, b.y_max});
    iou = std::max(iou, std::abs(bbox_iou(a, b) - want));
  }
  o.require(iou < 1e-2, "bbox_iou diff " + fmt(iou));

  o.note("max diffs: graph conv " + fmt(gc) + ", bilinear " + fmt(bl) + ", mpjpe " + fmt(mj) + ", mpvpe " +
         fmt(mv) + ", crowd_index " + fmt(ci) + ", iou " + fmt(iou));
  return o;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  auto record = [&](const std::string& name, const fd::GradCheck& g, double tol) {
    o.require(g.checked > 0 && g.max_rel_error < tol, name + " rel " + fmt(g.max_rel_error));
    o.note(name + " " + fmt(g.max_rel_error));
  };

  torch::manual_seed(201);
  const auto vol = torch::randn({2, 3, 4, 3, 3}, torch::kFloat64);
  record("soft_argmax3d",
         fd::check([](const torch::Tensor& x) {
           const auto p = soft_argmax3d({x}, 16, 1000.0);
           return torch::cat({p.joints.flatten(), p.confidence.flatten()});
         }, vol), 1e-4);

  const auto body = build_body_model(0);
  const BodyLayer layer(body, torch::kFloat64);
  std::mt19937_64 rng(202);
  double worst = 0.0;
  std::int64_t checked = 0;
  for (int draw = 0; draw < 5; ++draw) {
    const auto base = ParamBatch::from_params({random_params(rng, body.num_pose_joints())}, torch::kFloat64);
    const auto K1 = body.num_pose_joints();
    const auto flat = torch::cat({base.theta_g.flatten(), base.theta.flatten(), base.beta.flatten()});
    const auto g = fd::check([&](const torch::Tensor& x) {
      ParamBatch q = base;
      q.theta_g = x.narrow(0, 0, 3).reshape({1, 3});
      q.theta = x.narrow(0, 3, 3 * K1).reshape({1, K1, 3});
      q.beta = x.narrow(0, 3 + 3 * K1, kShapeDims).reshape({1, kShapeDims});
      const auto v = layer.decode(q);
      return torch::cat({v.flatten(), layer.regress_joints(v).flatten()});
    }, flat, 1e-5, 1e-6, 0, static_cast<std::uint64_t>(draw));
    worst = std::max(worst, g.max_rel_error);
    checked += g.checked;
  }
  record("decode/regress_joints", {worst, 0.0, checked}, 1e-4);

  {
    torch::manual_seed(203);
    const auto g = build_skeleton_graph(joints::kCommonSize, joints::common_skeleton_edges());
    JointGraphConv conv(g, 5, 4);
    conv->to(torch::kFloat64);
    randomize_bn(conv);
    conv->eval();
    const auto x = torch::randn({2, joints::kCommonSize, 5}, torch::kFloat64);
    record("joint_graph_conv input", fd::check([&](const torch::Tensor& v) { return conv->forward(v); }, x), 1e-4);
    record("joint_graph_conv weight",
           fd::check_parameter([&] { return conv->forward(x); }, conv->weight), 1e-4);
  }

  {
    torch::manual_seed(204);
    const int J = joints::kSupersetSize;
    const auto gt3 = torch::randn({2, J, 3}, torch::kFloat64);
    const auto gt2 = torch::randn({2, J, 2}, torch::kFloat64);
    auto mask = SupervisionMask::all_valid(2, J);
    mask.z_valid[0][4] = false;
    mask.xy_valid[1][6] = false;
    mask.z_valid[1][6] = false;
    const auto p3 = torch::randn({2, J, 3}, torch::kFloat64);
    const auto p2 = torch::randn({2, J, 2}, torch::kFloat64);
    record("loss_pose", fd::check([&](const torch::Tensor& p) { return loss_pose(p, gt3, mask).value; }, p3), 1e-4);
    record("loss_coord_shape 3D", fd::check([&](const torch::Tensor& p) {
      return loss_coord_shape(p, p2, gt3, gt2, mask, joints::kRoot).value;
    }, p3), 1e-4);
    record("loss_coord_shape 2D", fd::check([&](const torch::Tensor& p) {
      return loss_coord_shape(p3, p, gt3, gt2, mask, joints::kRoot).value;
    }, p2), 1e-4);

    const auto gp = ParamBatch::from_params({random_params(rng, 15), random_params(rng, 15)}, torch::kFloat64);
    const auto pp = ParamBatch::from_params({random_params(rng, 15), random_params(rng, 15)}, torch::kFloat64);
    auto pm = SupervisionMask::all_valid(2, J);
    pm.theta_valid[1] = false;
    const auto flat = torch::cat({pp.theta_g.flatten(), pp.theta.flatten(), pp.beta.flatten()});
    record("loss_param", fd::check([&](const torch::Tensor& x) {
      ParamBatch q = pp;
      q.theta_g = x.narrow(0, 0, 6).reshape({2, 3});
      q.theta = x.narrow(0, 6, 90).reshape({2, 15, 3});
      q.beta = x.narrow(0, 96, 2 * kShapeDims).reshape({2, kShapeDims});
      return loss_param(q, gp, pm).value;
    }, flat), 1e-4);
  }

  {
    // every network parameter through the weighted total loss
    torch::manual_seed(205);
    ModelConfig mc = ModelConfig::desk();
    mc.crop_size = 32;
    mc.early_channels = 4;
    mc.feature_channels = 8;
    mc.blocks_per_stage = 1;
    mc.depth_bins = 3;
    mc.graph_hidden = 4;
    mc.graph_blocks = 1;
    CrowdMeshNet net(mc, body);
    initialize_network(*net);
    net->set_dtype(torch::kFloat64);
    {
      torch::NoGradGuard ng;
      for (auto& b : net->buffers())
        if (b.dim() == 1 && b.is_floating_point()) b.uniform_(0.5, 1.5);
    }
    net->eval();
    const std::int64_t B = 2, S = mc.crop_size;
    const auto opt = torch::TensorOptions().dtype(torch::kFloat64);
    Batch batch;
    batch.input = {torch::rand({B, 3, S, S}, opt), torch::rand({B, joints::kSupersetSize, S / 4, S / 4}, opt),
                   torch::cat({torch::rand({B, joints::kCommonSize, 2}, opt) * S,
                               torch::ones({B, joints::kCommonSize, 1}, opt)}, 2)};
    batch.pose_target = torch::rand({B, joints::kCommonSize, 3}, opt);
    batch.pose_mask = SupervisionMask::all_valid(B, joints::kCommonSize);
    batch.params = ParamBatch::from_params({random_params(rng, 15), random_params(rng, 15)}, torch::kFloat64);
    batch.joints3d = torch::randn({B, joints::kSupersetSize, 3}, opt) * 0.3;
    batch.joints2d = torch::rand({B, joints::kSupersetSize, 2}, opt);
    batch.shape_mask = SupervisionMask::all_valid(B, joints::kSupersetSize);
    auto loss = [&] { return compute_losses(net->forward(batch.input), batch, mc, LossWeights{}).total; };
    double w = 0.0;
    std::int64_t n = 0, k = 0;
    for (auto& p : net->parameters()) {
      const auto g = fd::check_parameter(loss, p, 1e-6, 1e-6, 4, static_cast<std::uint64_t>(k++));
      w = std::max(w, g.max_rel_error);
      n += g.checked;
    }
    record("full network total loss", {w, 0.0, n}, 1e-3);
  }
  return o;
}

// ---------------------------------------------------------------------------

Outcome procrustes_invariance() {
  Outcome o;
  std::mt19937_64 rng(301);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  std::normal_distribution<double> shift(0.0, 1000.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto gt = random_points(rng, joints::kSupersetSize);
    const Eigen::Matrix3d R = random_rotation(rng);
    const Eigen::RowVector3d tr(shift(rng), shift(rng), shift(rng));
    const MatrixX3dR moved = ((scale(rng) * (gt * R.transpose())).rowwise() + tr).eval();
    worst = std::max(worst, pa_mpjpe(moved, gt));
  }
  o.require(worst < 1e-6, "pa_mpjpe after similarity " + fmt(worst));
  MatrixX3dR g(4, 3);
  g << 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3;
  MatrixX3dR refl = g;
  refl.col(0) *= -1.0;
  const double r = pa_mpjpe(refl, g);
  o.require(r > 0.0, "reflection residual " + fmt(r));
  o.note("max pa_mpjpe " + fmt(worst) + " mm, reflection residual " + fmt(r) + " mm");
  return o;
}

// ---------------------------------------------------------------------------

Outcome soft_argmax_fidelity() {
  Outcome o;
  const int D = 8, h = 6, w = 5, stride = 16;
  const double range = 1000.0;
  double worst = 0.0;
  for (int d = 0; d < D; ++d)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        auto v = torch::zeros({1, 1, D, h, w}, torch::kFloat64);
        auto acc = v.accessor<double, 5>();
        for (int a = 0; a < D; ++a)
          for (int b = 0; b < h; ++b)
            for (int e = 0; e < w; ++e) {
              const double d2 = (a - d) * (a - d) + (b - r) * (b - r) + (e - c) * (e - c);
              acc[0][0][a][b][e] = 10.0 * std::exp(-d2 / (2 * 0.7 * 0.7));
            }
        const auto p = soft_argmax3d({v}, stride, range);
        const double col = at(p.joints, {0, 0, 0}) / stride - 0.5;
        const double row = at(p.joints, {0, 0, 1}) / stride - 0.5;
        const double bin = (at(p.joints, {0, 0, 2}) / (2 * range) + 0.5) * (D - 1);
        worst = std::max({worst, std::abs(col - c), std::abs(row - r), std::abs(bin - d)});
      }
  o.require(worst < 0.25, "sharp peak off by " + fmt(worst) + " cells");

  const auto u = soft_argmax3d({torch::full({1, 2, D, h, w}, 0.3, torch::kFloat64)}, stride, range);
  const double cx = w * stride / 2.0, cy = h * stride / 2.0;
  double center = 0.0;
  for (int j = 0; j < 2; ++j)
    center = std::max({center, std::abs(at(u.joints, {0, j, 0}) - cx), std::abs(at(u.joints, {0, j, 1}) - cy),
                       std::abs(at(u.joints, {0, j, 2}))});
  o.require(center < 1e-9, "uniform volume off center by " + fmt(center));

  torch::manual_seed(401);
  const auto base = torch::randn({3, 4, D, h, w}, torch::kFloat64) * 3;
  const auto a = soft_argmax3d({base}, stride, range);
  const auto b = soft_argmax3d({base + 123.456}, stride, range);
  const double shift = std::max((a.joints - b.joints).abs().max().item<double>(),
                                (a.confidence - b.confidence).abs().max().item<double>());
  o.require(shift < 1e-6, "logit shift changes output by " + fmt(shift));
  o.note("peak error " + fmt(worst) + " cells, center error " + fmt(center) + ", shift " + fmt(shift));
  return o;
}

// ---------------------------------------------------------------------------

Outcome masking_semantics() {
  Outcome o;
  std::mt19937_64 rng(501);
  std::uniform_real_distribution<double> pos(-8.0, 72.0), conf(0.0, 0.3);
  int masked = 0, nonzero_masked = 0, kept_empty = 0;
  for (int t = 0; t < 100; ++t) {
    auto p = Pose2D::empty(joints::kSupersetSize);
    for (int j = 0; j < p.size(); ++j) {
      p.joints(j, 0) = pos(rng);
      p.joints(j, 1) = pos(rng);
      p.confidence[j] = conf(rng);
    }
    const auto hm = make_heatmaps(p, 16, 16, 2.0, kDefaultKeepThreshold, 64, 64);
    for (int j = 0; j < p.size(); ++j) {
      const bool zero = hm.maps[j].abs().max().item<double>() == 0.0;
      if (p.confidence[j] < 0.1) {
        ++masked;
        nonzero_masked += !zero;
      } else if (p.joints(j, 0) >= 0 && p.joints(j, 0) < 64 && p.joints(j, 1) >= 0 && p.joints(j, 1) < 64) {
        kept_empty += zero;
      }
    }
  }
  o.require(masked > 0 && nonzero_masked == 0,
            std::to_string(nonzero_masked) + " of " + std::to_string(masked) + " low-confidence channels non-zero");
  o.require(kept_empty == 0, std::to_string(kept_empty) + " kept in-frame joints gave empty channels");

  torch::manual_seed(502);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  int cases = 0, changed = 0;
  for (int t = 0; t < 50; ++t) {
    const int J = joints::kSupersetSize, B = 3;
    const auto pred3 = torch::randn({B, J, 3}, torch::kFloat64);
    const auto pred2 = torch::randn({B, J, 2}, torch::kFloat64);
    auto gt3 = torch::randn({B, J, 3}, torch::kFloat64);
    auto gt2 = torch::randn({B, J, 2}, torch::kFloat64);
    auto mask = SupervisionMask::all_valid(B, J);
    std::uniform_int_distribution<int> bj(0, B - 1), jj(0, J - 1);
    for (int k = 0; k < 6; ++k) {
      const int b = bj(rng), j = jj(rng);
      if (k % 2) {
        mask.z_valid[b][j] = false;
      } else {
        mask.xy_valid[b][j] = false;
        mask.z_valid[b][j] = false;
      }
    }
    const double lp = loss_pose(pred3, gt3, mask).value.item<double>();
    const double lc = loss_coord_shape(pred3, pred2, gt3, gt2, mask, joints::kRoot).value.item<double>();
    const auto xy_off = mask.xy_valid.logical_not();
    const auto z_off = mask.z_valid.logical_not();
    const auto garbage = t % 2 ? nan : 1e9;
    gt3.select(2, 0).masked_fill_(xy_off, garbage);
    gt3.select(2, 1).masked_fill_(xy_off, -garbage);
    gt3.select(2, 2).masked_fill_(z_off, garbage);
    gt2.masked_fill_(xy_off.unsqueeze(-1).expand_as(gt2), garbage);
    changed += loss_pose(pred3, gt3, mask).value.item<double>() != lp;
    changed += loss_coord_shape(pred3, pred2, gt3, gt2, mask, joints::kRoot).value.item<double>() != lc;

    const auto gp = ParamBatch::from_params({random_params(rng, 15), random_params(rng, 15), random_params(rng, 15)},
                                            torch::kFloat64);
    const auto pp = ParamBatch::from_params({random_params(rng, 15), random_params(rng, 15), random_params(rng, 15)},
                                            torch::kFloat64);
    auto pm = SupervisionMask::all_valid(B, J);
    pm.beta_valid[bj(rng)] = false;
    pm.theta_valid[bj(rng)] = false;
    pm.theta_g_valid[bj(rng)] = false;
    const double lq = loss_param(pp, gp, pm).value.item<double>();
    auto gq = gp;
    gq.theta_g = gp.theta_g.masked_fill(pm.theta_g_valid.logical_not().unsqueeze(-1), garbage);
    gq.theta = gp.theta.masked_fill(pm.theta_valid.logical_not().view({B, 1, 1}), garbage);
    gq.beta = gp.beta.masked_fill(pm.beta_valid.logical_not().unsqueeze(-1), garbage);
    gq.cam = gp.cam + garbage;
    changed += loss_param(pp, gq, pm).value.item<double>() != lq;
    cases += 3;
  }
  o.require(changed == 0, std::to_string(changed) + " of " + std::to_string(cases) + " losses moved");
  o.note(std::to_string(masked) + " masked heatmap channels all zero; " + std::to_string(cases) +
         " loss evaluations unchanged under masked perturbation");
  return o;
}

// ---------------------------------------------------------------------------

struct Work {
  fs::path root;

  fs::path dataset(const std::string& name, const std::vector<SplitSpec>& splits) const {
    const auto dir = root / ("data_" + name);
    if (fs::exists(dir / "index.json")) return dir;
    DatasetConfig c;
    c.splits = splits;
    generate_dataset(c, dir);
    return dir;
  }
  fs::path overfit_set() const { return dataset("overfit", {{"train", 16, 0.0, 1}}); }
  fs::path crowd_set() const { return dataset("crowd", {{"train", 256, 0.4, 2}, {"test", 64, 0.4, 2}}); }
};

Outcome overfit(const Work& w) {
  Outcome o;
  auto c = ExperimentConfig::desk();
  c.data.dataset = w.overfit_set().string();
  c.data.eval_split = "train";
  c.data.augment_scale = 0.0;
  c.data.augment_shift = 0.0;
  c.train.epochs = 500;  // 16 samples at batch 16: one step per epoch
  c.train.lr_decay_epochs = {};
  c.train.checkpoint_every_epoch = false;
  c.train.output_dir = (w.root / "overfit_run").string();
  c.validate();

  const auto idx = load_dataset_index(c.data.dataset);
  auto untrained = build_network(c, dataset_body_model(idx));
  const double before = evaluate(*untrained, c, idx, "train").report.mpjpe_mm;
  auto r = train(c);
  const double after = evaluate(*r.net, r.config, idx, "train").report.mpjpe_mm;
  const double first = r.steps.front().total, last = r.steps.back().total;
  o.require(r.steps.size() == 500, std::to_string(r.steps.size()) + " steps");
  o.require(last <= first / 5.0, "loss " + fmt(first) + " -> " + fmt(last));
  o.require(after <= before / 5.0, "MPJPE " + fmt(before) + " -> " + fmt(after) + " mm");
  o.note("loss " + fmt(first) + " -> " + fmt(last) + ", train MPJPE " + fmt(before, 4) + " -> " + fmt(after, 4) +
         " mm over " + std::to_string(r.steps.size()) + " steps");
  return o;
}

ExperimentConfig ablation_config(const Work& w) {
  auto c = ExperimentConfig::desk();
  c.data.dataset = w.crowd_set().string();
  c.train.checkpoint_every_epoch = false;
  c.train.output_dir = (w.root / "ablation").string();
  c.validate();
  return c;
}

Outcome toy_ablation(const Work& w) {
  Outcome o;
  const auto c = ablation_config(w);
  const auto rep = ablation_run(c, {Variant::kGuided, Variant::kUnguided, Variant::kHmrStyle}, {0, 1, 2, 3, 4},
                                [](const std::string& msg) { std::cerr << "  " << msg << "\n"; });
  auto mpjpe_of = [&](const std::string& v, std::uint64_t s) {
    for (const auto& r : rep.rows)
      if (r.variant == v && r.seed == s) return r.report.mpjpe_mm;
    return std::numeric_limits<double>::quiet_NaN();
  };
  int guided_wins = 0, joint_wins = 0;
  std::ostringstream table;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const double g = mpjpe_of("guided", s), u = mpjpe_of("unguided", s), h = mpjpe_of("hmr_style", s);
    guided_wins += g < u;
    joint_wins += g < h;
    table << " s" << s << " " << fmt(g, 5) << "/" << fmt(u, 5) << "/" << fmt(h, 5);
  }
  o.require(guided_wins >= 4, "guided beats unguided in " + std::to_string(guided_wins) + " of 5 seeds");
  o.require(joint_wins >= 3, "joint-based beats HMR-style in " + std::to_string(joint_wins) + " of 5 seeds");
  o.note("guided/unguided/hmr_style MPJPE mm:" + table.str());
  o.note("guided < unguided " + std::to_string(guided_wins) + "/5, guided < hmr_style " +
         std::to_string(joint_wins) + "/5");
  return o;
}

Outcome guided_activation_check(const Work& w) {
  Outcome o;
  const auto c = ablation_config(w);
  const auto ckpt = fs::path(c.train.output_dir) / "guided_s0" / "final.ckpt";
  CrowdMeshNet net{nullptr};
  ExperimentConfig used = c;
  if (fs::exists(ckpt)) {
    auto l = load_checkpoint(ckpt);
    net = l.net;
    used = l.config;
  } else {
    auto run = c;
    run.model.variant = Variant::kGuided;
    run.train.output_dir = (fs::path(c.train.output_dir) / "guided_s0").string();
    auto r = train(run);
    net = r.net;
    used = r.config;
  }
  net->eval();
  const auto idx = load_dataset_index(c.data.dataset);
  int evaluable = 0, wins = 0;
  for (const auto& id : idx.split("test")) {
    const auto scene = read_sample(idx.sample_dir(id));
    if (scene.persons.size() != 2) continue;
    const auto a = guided_activation(*net, used, scene, 0, 1);
    if (!a.evaluable()) continue;
    ++evaluable;
    wins += a.target > a.other;
  }
  const double frac = evaluable ? static_cast<double>(wins) / evaluable : 0.0;
  o.require(evaluable > 0, "no evaluable scenes");
  o.require(frac >= 0.8, "target > other on " + fmt(100 * frac) + "% of scenes");
  o.note(std::to_string(wins) + " of " + std::to_string(evaluable) + " evaluable scenes (" + fmt(100 * frac) + "%)");
  return o;
}

Outcome reproducibility(const Work& w) {
  Outcome o;
  auto c = ExperimentConfig::desk();
  c.data.dataset = w.dataset("repro", {{"train", 8, 0.4, 2}}).string();
  c.data.eval_split = "train";
  c.train.batch_size = 4;
  c.train.epochs = 3;
  c.train.lr_decay_epochs = {2};
  c.train.checkpoint_every_epoch = false;
  c.train.output_dir = (w.root / "repro_a").string();
  auto a = train(c);
  c.train.output_dir = (w.root / "repro_b").string();
  const auto b = train(c);
  double curve = a.steps.size() == b.steps.size() ? 0.0 : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < std::min(a.steps.size(), b.steps.size()); ++i)
    curve = std::max(curve, std::abs(a.steps[i].total - b.steps[i].total));
  o.require(!a.steps.empty() && curve <= 1e-5, "loss curves differ by " + fmt(curve));

  const auto idx = load_dataset_index(c.data.dataset);
  const auto split = load_split(idx, "train");
  std::vector<PreparedSample> s;
  for (const auto& r : split.persons)
    s.push_back(prepare_sample(split.scenes[r.scene], r.person, a.config.model, a.config.data, nullptr));
  const auto batch = collate(s);
  torch::NoGradGuard ng;
  a.net->eval();
  const auto before = a.net->forward(batch.input);
  const auto path = w.root / "repro_roundtrip.ckpt";
  save_checkpoint(path, *a.net, a.config);
  auto l = load_checkpoint(path);
  l.net->eval();
  const auto after = l.net->forward(batch.input);
  const bool exact = torch::equal(before.vertices, after.vertices) && torch::equal(before.joints, after.joints) &&
                     torch::equal(before.params.theta, after.params.theta) &&
                     torch::equal(before.params.beta, after.params.beta) &&
                     torch::equal(before.pose3d.joints, after.pose3d.joints);
  o.require(exact, "checkpoint round-trip forward differs");
  o.note(std::to_string(a.steps.size()) + " steps, max loss difference " + fmt(curve) +
         (exact ? ", round-trip bit-exact" : ", round-trip differs"));
  return o;
}

Outcome schedule_fidelity(const Work& w) {
  Outcome o;
  auto c = ExperimentConfig::paper();
  c.data.dataset = w.dataset("schedule", {{"train", 2, 0.0, 1}}).string();
  c.train.checkpoint_every_epoch = false;
  c.train.output_dir = (w.root / "schedule_run").string();
  c.validate();
  const auto r = train(c);
  const double expect[] = {1e-4, 1e-4, 1e-4, 1e-5, 1e-5, 1e-6};
  std::set<int> seen;
  bool ok = !r.steps.empty();
  std::ostringstream lrs;
  for (const auto& s : r.steps) {
    ok &= s.epoch >= 0 && s.epoch < 6 && std::abs(s.lr - expect[s.epoch]) <= 1e-12 * expect[s.epoch];
    if (seen.insert(s.epoch).second) lrs << " e" << s.epoch << "=" << s.lr;
  }
  o.require(ok, "logged learning rates deviate:" + lrs.str());
  o.require(seen.size() == 6, std::to_string(seen.size()) + " epochs logged");
  o.note("paper profile, decay epochs [3, 5]:" + lrs.str());
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowdmesh acceptance suite"};
  fs::path work_dir = fs::temp_directory_path() / "crowdmesh_acceptance";
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work-dir", work_dir, "Directory for generated data and training runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_flag("--keep", keep, "Keep the work directory afterwards");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  fs::create_directories(work_dir);
  const Work work{work_dir};

  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "numerical kernels vs oracles", 60, kernels_vs_oracles},
      {2, "gradient suite", 300, gradient_suite},
      {3, "procrustes invariance", 10, procrustes_invariance},
      {4, "soft-argmax fidelity", 0, soft_argmax_fidelity},
      {5, "masking semantics", 0, masking_semantics},
      {6, "overfit", 600, [&] { return overfit(work); }},
      {7, "toy ablation", 7200, [&] { return toy_ablation(work); }},
      {8, "guided activation", 0, [&] { return guided_activation_check(work); }},
      {9, "reproducibility", 0, [&] { return reproducibility(work); }},
      {10, "schedule fidelity", 0, [&] { return schedule_fidelity(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s)
      out.failures.push_back("runtime " + fmt(secs) + " s over " + fmt(c.limit_s) + " s");
    const bool pass = out.failures.empty();
    failed += !pass;
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (pass ? "PASS" : "FAIL") << " [" << std::fixed
              << std::setprecision(1) << secs << " s]" << std::defaultfloat;
    for (const auto& f : out.failures) std::cout << " | " << f;
    std::cout << "\n";
    for (const auto& n : out.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
  }
  if (!keep) fs::remove_all(work_dir);
  return failed == 0 ? 0 : 1;
}

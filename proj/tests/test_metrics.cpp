#include "support/doctest_torch.hpp"

#include <Eigen/LU>

#include <cmath>
#include <random>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/errors.hpp"
#include "crowdmesh/metrics.hpp"
#include "support/oracles.hpp"

using namespace crowdmesh;

namespace {

MatrixX3dR random_points(std::mt19937_64& rng, int n, double scale = 300.0) {
  std::normal_distribution<double> d(0.0, scale);
  MatrixX3dR p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = d(rng);
  return p;
}

std::vector<std::vector<double>> rows(const MatrixX3dR& m) {
  std::vector<std::vector<double>> r(m.rows(), std::vector<double>(3));
  for (int i = 0; i < m.rows(); ++i)
    for (int c = 0; c < 3; ++c) r[i][c] = m(i, c);
  return r;
}

MatrixX3dR similarity(const MatrixX3dR& p, double s, const Eigen::Matrix3d& R, const Eigen::RowVector3d& t) {
  return ((s * (p * R.transpose())).rowwise() + t).eval();
}

Pose2D pose_of(const std::vector<std::pair<double, double>>& pts) {
  auto p = Pose2D::empty(static_cast<int>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    p.joints(i, 0) = pts[i].first;
    p.joints(i, 1) = pts[i].second;
    p.confidence[i] = 1.0;
  }
  return p;
}

}  // namespace

TEST_CASE("mpjpe: zero, 3-4-5 offset, loop oracle") {
  std::mt19937_64 rng(1);
  const auto g = random_points(rng, 19);
  CHECK(mpjpe(g, g) == 0.0);
  MatrixX3dR off = g;
  off.rowwise() += Eigen::RowVector3d(3, 4, 0);
  CHECK(mpjpe(off, g) == doctest::Approx(5.0));
  for (int t = 0; t < 10; ++t) {
    const auto a = random_points(rng, 17), b = random_points(rng, 17);
    CHECK(mpjpe(a, b) == doctest::Approx(oracle::mean_row_distance(rows(a), rows(b))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(mpjpe(g, random_points(rng, 5)), ShapeError);
}

TEST_CASE("mpjpe: symmetric, zero iff equal, triangle inequality") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_points(rng, 10), b = random_points(rng, 10), c = random_points(rng, 10);
    CHECK(mpjpe(a, b) == doctest::Approx(mpjpe(b, a)));
    CHECK(mpjpe(a, b) > 0.0);
    CHECK(mpjpe(a, c) <= mpjpe(a, b) + mpjpe(b, c) + 1e-9);
  }
}

TEST_CASE("procrustes: recovers a similarity transform exactly") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto g = random_points(rng, 15);
    const Eigen::Matrix3d R = rodrigues(Eigen::Vector3d(0.3 * t, -0.7, 1.1 + 0.1 * t));
    const double s = 0.2 + 0.3 * t;
    const auto p = similarity(g, s, R, Eigen::RowVector3d(100, -50, 20 * t));
    const auto a = procrustes_align(p, g);
    CHECK((a.aligned - g).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((a.rotation.transpose() * a.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(a.rotation.determinant() - 1.0) < 1e-8);
    CHECK(pa_mpjpe(p, g) < 1e-6);
  }
}

TEST_CASE("procrustes: identity on equal inputs") {
  std::mt19937_64 rng(4);
  const auto g = random_points(rng, 8);
  const auto a = procrustes_align(g, g);
  CHECK(a.scale == doctest::Approx(1.0));
  CHECK((a.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(a.translation.norm() < 1e-8);
  CHECK((a.aligned - g).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("procrustes: reflections are not allowed; residual matches a rotation search") {
  MatrixX3dR g(4, 3);
  g << 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3;
  MatrixX3dR refl = g;
  refl.col(0) *= -1.0;
  const auto a = procrustes_align(refl, g);
  const double residual = (a.aligned - g).squaredNorm();
  CHECK(residual > 1e-3);
  CHECK(std::abs(a.rotation.determinant() - 1.0) < 1e-8);
  const double brute = oracle::brute_similarity_residual(rows(refl), rows(g));
  CHECK(residual == doctest::Approx(brute).epsilon(1e-6));
}

TEST_CASE("procrustes: degenerate inputs throw") {
  MatrixX3dR line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) = Eigen::RowVector3d(i, 2.0 * i, -i);
  std::mt19937_64 rng(5);
  CHECK_THROWS_AS(procrustes_align(random_points(rng, 5), line), AlignmentError);
  CHECK_THROWS_AS(procrustes_align(random_points(rng, 2), random_points(rng, 2)), AlignmentError);
}

TEST_CASE("pa_mpjpe never exceeds the root-centered mpjpe after optimal scaling") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto g = root_center(random_points(rng, 19), 0);
    const auto p = root_center(random_points(rng, 19), 0);
    const double s = (p.array() * g.array()).sum() / p.squaredNorm();
    const MatrixX3dR ps = s * p;
    CHECK(pa_mpjpe(p, g) <= mpjpe(ps, g) + 1e-9);
    CHECK(pa_mpjpe(p, g) <= mpjpe(p, g) + 1e-9);
  }
}

TEST_CASE("pck3d: equal, inclusive boundary, half off") {
  std::mt19937_64 rng(7);
  const MatrixX3dR g = random_points(rng, 10).array().round().matrix();  // exact sums at the boundary
  CHECK(pck3d(g, g) == 100.0);
  MatrixX3dR on = g;
  on.col(2).array() += 150.0;
  CHECK(pck3d(on, g, 150.0) == 100.0);
  MatrixX3dR half = g;
  half.topRows(5).col(1).array() += 200.0;
  CHECK(pck3d(half, g) == doctest::Approx(50.0));
}

TEST_CASE("mpvpe: zero, uniform offset, loop oracle, topology mismatch") {
  const auto m = build_body_model(0);
  Mesh a{m.template_vertices, m.faces};
  CHECK(mpvpe(a, a) == 0.0);
  Mesh b = a;
  b.vertices.col(2).array() += 10.0;
  CHECK(mpvpe(b, a) == doctest::Approx(10.0));
  std::mt19937_64 rng(8);
  Mesh r1{random_points(rng, m.num_vertices()), m.faces};
  Mesh r2{random_points(rng, m.num_vertices()), m.faces};
  CHECK(mpvpe(r1, r2) == doctest::Approx(oracle::mean_row_distance(rows(r1.vertices), rows(r2.vertices))));
  Mesh small{random_points(rng, 10), m.faces};
  CHECK_THROWS_AS(mpvpe(small, a), ShapeError);
}

TEST_CASE("crowd_index: no others, 2 over 4, empty target") {
  const BBox box{0, 0, 10, 10};
  const auto target = pose_of({{1, 1}, {2, 2}, {3, 3}, {4, 4}, {20, 20}});
  CHECK(crowd_index(target, {}, box) == 0.0);
  const std::vector<Pose2D> others = {pose_of({{5, 5}, {30, 30}}), pose_of({{9, 9}, {-1, 5}})};
  CHECK(crowd_index(target, others, box) == doctest::Approx(0.5));
  const auto outside = pose_of({{50, 50}});
  CHECK_THROWS_AS(crowd_index(outside, others, box), UndefinedRatioError);
}

TEST_CASE("crowd_index matches brute-force counting on random cases") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::uniform_real_distribution<double> c(-0.5, 1.0);
  for (int t = 0; t < 30; ++t) {
    auto target = Pose2D::empty(19);
    for (int j = 0; j < 19; ++j) {
      target.joints(j, 0) = u(rng);
      target.joints(j, 1) = u(rng);
      target.confidence[j] = std::max(0.0, c(rng));
    }
    target.joints.row(0) << 50, 50;
    target.confidence[0] = 1.0;
    std::vector<Pose2D> others(3, Pose2D::empty(19));
    for (auto& o : others)
      for (int j = 0; j < 19; ++j) {
        o.joints(j, 0) = u(rng);
        o.joints(j, 1) = u(rng);
        o.confidence[j] = std::max(0.0, c(rng));
      }
    const BBox box{20, 25, 80, 70};
    auto rows2 = [](const Pose2D& p) {
      std::vector<std::vector<double>> r;
      for (int j = 0; j < p.size(); ++j) r.push_back({p.joints(j, 0), p.joints(j, 1)});
      return r;
    };
    std::vector<std::vector<std::vector<double>>> oxy;
    std::vector<std::vector<double>> oc;
    for (const auto& o : others) {
      oxy.push_back(rows2(o));
      oc.emplace_back(o.confidence.data(), o.confidence.data() + o.size());
    }
    const double want = oracle::crowd_ratio(rows2(target),
                                            std::vector<double>(target.confidence.data(), target.confidence.data() + 19),
                                            oxy, oc, {box.x_min, box.y_min, box.x_max, box.y_max});
    CHECK(crowd_index(target, others, box) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("bbox_iou: identical, disjoint, half-overlapping unit squares") {
  CHECK(bbox_iou({0, 0, 1, 1}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(bbox_iou({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
  CHECK(bbox_iou({0, 0, 1, 1}, {0.5, 0, 1.5, 1}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("bbox_iou matches a 1000 x 1000 rasterization") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::uniform_real_distribution<double> s(5.0, 60.0);
  for (int t = 0; t < 20; ++t) {
    const double ax = u(rng), ay = u(rng), bx = ax + s(rng) - 30.0, by = ay + s(rng) - 30.0;
    const BBox a{ax, ay, ax + s(rng), ay + s(rng)};
    const BBox b{bx, by, bx + s(rng), by + s(rng)};
    const double want = oracle::raster_iou({a.x_min, a.y_min, a.x_max, a.y_max},
                                           {b.x_min, b.y_min, b.x_max, b.y_max});
    CHECK(std::abs(bbox_iou(a, b) - want) < 1e-2);
  }
}

TEST_CASE("report: aggregates, sequences, JSON round-trip, bounds") {
  std::mt19937_64 rng(11);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 6; ++i) {
    PredictionRecord r;
    r.sample_id = "s" + std::to_string(i);
    r.sequence = i < 4 ? "a" : "b";
    r.gt_joints = root_center(random_points(rng, 19), 0);
    r.pred_joints = root_center(random_points(rng, 19), 0);
    r.gt_vertices = random_points(rng, 30);
    r.pred_vertices = random_points(rng, 30);
    recs.push_back(r);
  }
  const auto rep = compute_report(recs);
  CHECK(rep.n_samples == 6);
  CHECK(rep.sequences.size() == 2);
  double mean = 0.0;
  for (const auto& r : recs) mean += mpjpe(r.pred_joints, r.gt_joints) / 6.0;
  CHECK(rep.mpjpe_mm == doctest::Approx(mean));
  CHECK(rep.pck3d_percent >= 0.0);
  CHECK(rep.pck3d_percent <= 100.0);
  CHECK(rep.pa_mpjpe_mm <= rep.mpjpe_mm);
  const auto back = MetricsReport::from_json(rep.to_json());
  CHECK(back.mpjpe_mm == rep.mpjpe_mm);
  CHECK(back.sequences.size() == 2);
  CHECK(!rep.to_table().empty());

  const auto rr = PredictionRecord::from_json(recs[0].to_json());
  CHECK((rr.pred_joints - recs[0].pred_joints).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(rr.sequence == "a");
}

#include "crowdmesh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace {

void check_same_shape(const MatrixX3dR& a, const MatrixX3dR& b, const char* what) {
  if (a.rows() != b.rows()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()) + " points");
  }
}

nlohmann::json matrix_json(const MatrixX3dR& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
  return rows;
}

MatrixX3dR matrix_from_json(const nlohmann::json& rows) {
  MatrixX3dR m(static_cast<Eigen::Index>(rows.size()), 3);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(i), c) = rows.at(i).at(static_cast<size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

double mpjpe(const MatrixX3dR& pred, const MatrixX3dR& gt) {
  check_same_shape(pred, gt, "mpjpe");
  if (pred.rows() == 0) throw ShapeError("mpjpe of an empty pose");
  return (pred - gt).rowwise().norm().mean();
}

SimilarityAlignment procrustes_align(const MatrixX3dR& pred, const MatrixX3dR& gt) {
  check_same_shape(pred, gt, "procrustes_align");
  if (pred.rows() < 3) throw AlignmentError("procrustes alignment needs at least 3 points");
  const Eigen::RowVector3d mu_p = pred.colwise().mean();
  const Eigen::RowVector3d mu_g = gt.colwise().mean();
  const MatrixX3dR p = pred.rowwise() - mu_p;
  const MatrixX3dR g = gt.rowwise() - mu_g;

  const Eigen::JacobiSVD<Eigen::MatrixXd> gt_svd(g);
  const auto gs = gt_svd.singularValues();
  if (!(gs(0) > 0.0) || gs(1) <= 1e-9 * gs(0)) {
    throw AlignmentError("ground-truth points are collinear or coincident");
  }
  const double var_p = p.squaredNorm();
  if (!(var_p > 1e-18 * std::max(1.0, g.squaredNorm()))) {
    throw AlignmentError("predicted points collapse to a single location");
  }

  const Eigen::Matrix3d cov = g.transpose() * p;  // sum g_i p_i^T
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  SimilarityAlignment out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * d).trace() / var_p;
  out.translation = mu_g.transpose() - out.scale * out.rotation * mu_p.transpose();
  out.aligned = ((out.scale * (out.rotation * pred.transpose())).colwise() + out.translation).transpose();
  return out;
}

double pa_mpjpe(const MatrixX3dR& pred, const MatrixX3dR& gt) {
  return mpjpe(procrustes_align(pred, gt).aligned, gt);
}

double pck3d(const MatrixX3dR& pred, const MatrixX3dR& gt, double threshold_mm) {
  check_same_shape(pred, gt, "pck3d");
  if (pred.rows() == 0) throw ShapeError("pck3d of an empty pose");
  const auto dist = (pred - gt).rowwise().norm();
  const auto hits = (dist.array() <= threshold_mm).count();
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.rows());
}

double mpvpe(const Mesh& pred, const Mesh& gt) {
  if (pred.vertices.rows() != gt.vertices.rows() || pred.faces.rows() != gt.faces.rows() ||
      (pred.faces.size() > 0 && pred.faces != gt.faces)) {
    throw ShapeError("mpvpe: meshes have different topology");
  }
  return mpjpe(pred.vertices, gt.vertices);
}

MatrixX3dR root_center(const MatrixX3dR& points, int root_index) {
  if (root_index < 0 || root_index >= points.rows()) throw ShapeError("root index out of range");
  return points.rowwise() - points.row(root_index);
}

double crowd_index(const Pose2D& target, std::span<const Pose2D> others, const BBox& box) {
  auto count_inside = [&](const Pose2D& pose) {
    int n = 0;
    for (int j = 0; j < pose.size(); ++j) {
      if (pose.confidence[j] > 0.0 && box.contains(pose.joints(j, 0), pose.joints(j, 1))) ++n;
    }
    return n;
  };
  const int own = count_inside(target);
  if (own == 0) throw UndefinedRatioError("crowd index: no target joints inside the box");
  int foreign = 0;
  for (const auto& other : others) foreign += count_inside(other);
  return static_cast<double>(foreign) / static_cast<double>(own);
}

double bbox_iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

nlohmann::json PredictionRecord::to_json() const {
  nlohmann::json doc = {{"sample_id", sample_id},
                        {"sequence", sequence},
                        {"pred_joints", matrix_json(pred_joints)},
                        {"gt_joints", matrix_json(gt_joints)}};
  if (pred_vertices.rows() > 0) {
    doc["pred_vertices"] = matrix_json(pred_vertices);
    doc["gt_vertices"] = matrix_json(gt_vertices);
  }
  return doc;
}

PredictionRecord PredictionRecord::from_json(const nlohmann::json& doc) {
  PredictionRecord r;
  r.sample_id = doc.at("sample_id").get<std::string>();
  r.sequence = doc.value("sequence", std::string{});
  r.pred_joints = matrix_from_json(doc.at("pred_joints"));
  r.gt_joints = matrix_from_json(doc.at("gt_joints"));
  if (doc.contains("pred_vertices")) {
    r.pred_vertices = matrix_from_json(doc.at("pred_vertices"));
    r.gt_vertices = matrix_from_json(doc.at("gt_vertices"));
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : sequences) {
    seqs.push_back({{"sequence", s.sequence},
                    {"n_samples", s.n_samples},
                    {"mpjpe_mm", s.mpjpe_mm},
                    {"pa_mpjpe_mm", s.pa_mpjpe_mm},
                    {"pck3d_percent", s.pck3d_percent},
                    {"mpvpe_mm", s.mpvpe_mm}});
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    rows.push_back({{"sample_id", s.sample_id},
                    {"sequence", s.sequence},
                    {"mpjpe_mm", s.mpjpe_mm},
                    {"pa_mpjpe_mm", s.pa_mpjpe_mm},
                    {"pck3d_percent", s.pck3d_percent},
                    {"mpvpe_mm", s.mpvpe_mm}});
  }
  return {{"mpjpe_mm", mpjpe_mm},
          {"pa_mpjpe_mm", pa_mpjpe_mm},
          {"pck3d_percent", pck3d_percent},
          {"mpvpe_mm", mpvpe_mm},
          {"n_samples", n_samples},
          {"pck_threshold_mm", pck_threshold_mm},
          {"sequences", std::move(seqs)},
          {"samples", std::move(rows)}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& doc) {
  MetricsReport r;
  r.mpjpe_mm = doc.at("mpjpe_mm").get<double>();
  r.pa_mpjpe_mm = doc.at("pa_mpjpe_mm").get<double>();
  r.pck3d_percent = doc.at("pck3d_percent").get<double>();
  r.mpvpe_mm = doc.at("mpvpe_mm").get<double>();
  r.n_samples = doc.at("n_samples").get<std::size_t>();
  r.pck_threshold_mm = doc.value("pck_threshold_mm", kDefaultPckThresholdMm);
  for (const auto& s : doc.value("sequences", nlohmann::json::array())) {
    r.sequences.push_back({s.at("sequence").get<std::string>(), s.at("n_samples").get<std::size_t>(),
                           s.at("mpjpe_mm").get<double>(), s.at("pa_mpjpe_mm").get<double>(),
                           s.at("pck3d_percent").get<double>(), s.at("mpvpe_mm").get<double>()});
  }
  for (const auto& s : doc.value("samples", nlohmann::json::array())) {
    r.samples.push_back({s.at("sample_id").get<std::string>(), s.at("sequence").get<std::string>(),
                         s.at("mpjpe_mm").get<double>(), s.at("pa_mpjpe_mm").get<double>(),
                         s.at("pck3d_percent").get<double>(), s.at("mpvpe_mm").get<double>()});
  }
  return r;
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(24) << "sequence" << std::right << std::setw(8) << "n"
     << std::setw(12) << "MPJPE" << std::setw(12) << "PA-MPJPE" << std::setw(12) << "3DPCK"
     << std::setw(12) << "MPVPE" << '\n';
  auto row = [&](const std::string& name, std::size_t n, double a, double b, double c, double d) {
    os << std::left << std::setw(24) << name.substr(0, 23) << std::right << std::setw(8) << n
       << std::setw(12) << a << std::setw(12) << b << std::setw(12) << c << std::setw(12) << d
       << '\n';
  };
  for (const auto& s : sequences) {
    row(s.sequence, s.n_samples, s.mpjpe_mm, s.pa_mpjpe_mm, s.pck3d_percent, s.mpvpe_mm);
  }
  row("ALL", n_samples, mpjpe_mm, pa_mpjpe_mm, pck3d_percent, mpvpe_mm);
  return os.str();
}

MetricsReport compute_report(std::span<const PredictionRecord> records, double pck_threshold_mm) {
  MetricsReport report;
  report.pck_threshold_mm = pck_threshold_mm;
  std::map<std::string, SequenceMetrics> by_seq;
  std::vector<std::string> seq_order;
  for (const auto& r : records) {
    SampleMetrics m;
    m.sample_id = r.sample_id;
    m.sequence = r.sequence;
    m.mpjpe_mm = mpjpe(r.pred_joints, r.gt_joints);
    m.pa_mpjpe_mm = pa_mpjpe(r.pred_joints, r.gt_joints);
    m.pck3d_percent = pck3d(r.pred_joints, r.gt_joints, pck_threshold_mm);
    if (r.pred_vertices.rows() > 0) m.mpvpe_mm = mpjpe(r.pred_vertices, r.gt_vertices);
    report.samples.push_back(m);

    auto [it, inserted] = by_seq.try_emplace(r.sequence);
    if (inserted) {
      it->second.sequence = r.sequence;
      seq_order.push_back(r.sequence);
    }
    auto& s = it->second;
    ++s.n_samples;
    s.mpjpe_mm += m.mpjpe_mm;
    s.pa_mpjpe_mm += m.pa_mpjpe_mm;
    s.pck3d_percent += m.pck3d_percent;
    s.mpvpe_mm += m.mpvpe_mm;
  }
  report.n_samples = report.samples.size();
  if (report.n_samples == 0) return report;
  for (const auto& m : report.samples) {
    report.mpjpe_mm += m.mpjpe_mm;
    report.pa_mpjpe_mm += m.pa_mpjpe_mm;
    report.pck3d_percent += m.pck3d_percent;
    report.mpvpe_mm += m.mpvpe_mm;
  }
  const double n = static_cast<double>(report.n_samples);
  report.mpjpe_mm /= n;
  report.pa_mpjpe_mm /= n;
  report.pck3d_percent /= n;
  report.mpvpe_mm /= n;
  for (const auto& name : seq_order) {
    auto s = by_seq.at(name);
    const double k = static_cast<double>(s.n_samples);
    s.mpjpe_mm /= k;
    s.pa_mpjpe_mm /= k;
    s.pck3d_percent /= k;
    s.mpvpe_mm /= k;
    report.sequences.push_back(s);
  }
  return report;
}

}  // namespace crowdmesh

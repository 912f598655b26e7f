#include "crowdmesh/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "crowdmesh/archive.hpp"
#include "crowdmesh/errors.hpp"
#include "crowdmesh/image_io.hpp"
#include "crowdmesh/joints.hpp"

namespace crowdmesh {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

std::vector<std::int64_t> shape_of(const torch::Tensor& t) {
  return {t.sizes().begin(), t.sizes().end()};
}

ArchiveBlock tensor_block(const std::string& name, const torch::Tensor& t) {
  const auto c = t.detach().cpu().contiguous();
  if (c.is_floating_point()) {
    const auto f = c.to(torch::kFloat32).contiguous();
    return ArchiveBlock::from_f32(name, shape_of(f),
                                  {f.data_ptr<float>(), static_cast<std::size_t>(f.numel())});
  }
  const auto i = c.to(torch::kInt32).contiguous();
  return ArchiveBlock::from_i32(name, shape_of(i),
                                {i.data_ptr<std::int32_t>(), static_cast<std::size_t>(i.numel())});
}

void load_tensor(const Archive& archive, const std::string& name, torch::Tensor& dst,
                 const fs::path& path) {
  if (!archive.has_block(name)) {
    throw ParseError("checkpoint " + path.string() + " lacks tensor '" + name + "'", 0);
  }
  const auto& block = archive.block(name);
  if (block.shape != shape_of(dst)) {
    throw ParseError("checkpoint tensor '" + name + "' has the wrong shape", 0);
  }
  torch::Tensor src;
  if (block.dtype == DType::kF32) {
    auto v = block.as_f32();
    src = torch::from_blob(v.data(), block.shape, torch::kFloat32).clone();
  } else if (block.dtype == DType::kI32) {
    auto v = block.as_i32();
    src = torch::from_blob(v.data(), block.shape, torch::kInt32).clone();
  } else {
    throw ParseError("checkpoint tensor '" + name + "' has an unsupported dtype", 0);
  }
  dst.copy_(src.to(dst.dtype()));
}

MatrixX3dR to_matrix(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous().cpu();
  MatrixX3dR m(c.size(0), 3);
  std::copy_n(c.data_ptr<double>(), c.numel(), m.data());
  return m;
}

void write_log(const fs::path& path, const ExperimentConfig& config,
               const std::vector<StepRecord>& steps, const json& epochs, const std::string& status) {
  json doc;
  doc["status"] = status;
  doc["config"] = config.to_json();
  doc["epochs"] = epochs;
  json s = json::array();
  for (const auto& r : steps) s.push_back(r.to_json());
  doc["steps"] = s;
  write_json_file(path, doc);
}

bool finite(double v) { return std::isfinite(v); }

const std::vector<std::pair<int, int>>& superset_bones() {
  static const std::vector<std::pair<int, int>> bones = [] {
    std::vector<std::pair<int, int>> b;
    const auto& map = joints::common_to_superset();
    for (const auto& [a, c] : joints::common_skeleton_edges()) b.emplace_back(map[a], map[c]);
    return b;
  }();
  return bones;
}

void draw_skeleton(torch::Tensor& image, const MatrixX2dR& pts, const Eigen::VectorXd* conf,
                   double thr, const Rgb& color, double width) {
  auto ok = [&](int j) { return conf == nullptr || (*conf)(j) >= thr; };
  for (const auto& [a, b] : superset_bones()) {
    if (ok(a) && ok(b)) draw_line(image, pts(a, 0), pts(a, 1), pts(b, 0), pts(b, 1), color, width);
  }
  for (int j = 0; j < pts.rows(); ++j) {
    if (ok(j)) draw_disc(image, pts(j, 0), pts(j, 1), width + 1.0, color);
  }
}

void draw_box(torch::Tensor& image, const BBox& b, const Rgb& color) {
  draw_line(image, b.x_min, b.y_min, b.x_max, b.y_min, color);
  draw_line(image, b.x_max, b.y_min, b.x_max, b.y_max, color);
  draw_line(image, b.x_max, b.y_max, b.x_min, b.y_max, color);
  draw_line(image, b.x_min, b.y_max, b.x_min, b.y_min, color);
}

/// Predicted superset joints in image pixels for one prepared input.
struct SinglePrediction {
  NetOutput out;
  MatrixX2dR joints2d_image;
};

SinglePrediction predict_one(CrowdMeshNetImpl& net, const PreparedInput& in) {
  torch::NoGradGuard no_grad;
  net.eval();
  NetInput x{in.crop.unsqueeze(0), in.heatmaps.unsqueeze(0), in.pose2d.unsqueeze(0)};
  SinglePrediction p;
  p.out = net.forward(x);
  const auto j2 = p.out.joints2d[0].to(torch::kFloat64).contiguous();
  const Affine2 inv = invert_affine(in.affine);
  p.joints2d_image.resize(j2.size(0), 2);
  for (int j = 0; j < j2.size(0); ++j) {
    const Eigen::Vector2d q =
        apply_affine(inv, {j2[j][0].item<double>(), j2[j][1].item<double>()});
    p.joints2d_image.row(j) = q.transpose();
  }
  return p;
}

void check_body_compatible(const ExperimentConfig& config, const DatasetIndex& index) {
  const auto& ck = config.body_model;
  const auto& ds = index.config.body_model;
  if (ck.num_joints != ds.num_joints) {
    throw ConfigError("joint-set mismatch: checkpoint body model has " +
                      std::to_string(ck.num_joints) + " kinematic joints, dataset " +
                      index.root.string() + " has " + std::to_string(ds.num_joints));
  }
  if (body_model_config_to_json(ck) != body_model_config_to_json(ds) ||
      config.body_model_seed != index.config.body_model_seed) {
    throw ConfigError("body model mismatch: checkpoint (seed " +
                      std::to_string(config.body_model_seed) + ") differs from dataset " +
                      index.root.string() + " (seed " +
                      std::to_string(index.config.body_model_seed) + ")");
  }
}

}  // namespace

CrowdMeshNet build_network(const ExperimentConfig& config, const BodyModel& body) {
  torch::manual_seed(config.train.seed);
  CrowdMeshNet net(config.model, body);
  initialize_network(*net);
  return net;
}

void save_checkpoint(const fs::path& path, CrowdMeshNetImpl& net, const ExperimentConfig& config,
                     const json& state) {
  Archive a;
  a.header["format"] = "crowdmesh-checkpoint";
  a.header["version"] = 1;
  a.header["config"] = config.to_json();
  a.header["state"] = state.is_null() ? json::object() : state;
  for (const auto& p : net.named_parameters(true)) a.blocks.push_back(tensor_block("param/" + p.key(), p.value()));
  for (const auto& b : net.named_buffers(true)) a.blocks.push_back(tensor_block("buffer/" + b.key(), b.value()));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_archive(path, kCheckpointMagic, a);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const Archive a = read_archive(path, kCheckpointMagic);
  if (a.header.value("version", 0) != 1) {
    throw UnsupportedVersionError("checkpoint " + path.string() + " has an unsupported version");
  }
  LoadedCheckpoint ck;
  try {
    ck.config = ExperimentConfig::from_json(a.header.at("config"));
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header: " + std::string(e.what()), 0);
  }
  ck.state = a.header.value("state", json::object());
  ck.body = build_body_model(ck.config.body_model_seed, ck.config.body_model);
  ck.net = CrowdMeshNet(ck.config.model, ck.body);
  torch::NoGradGuard no_grad;
  std::size_t expected = 0;
  for (auto& p : ck.net->named_parameters(true)) {
    load_tensor(a, "param/" + p.key(), p.value(), path);
    ++expected;
  }
  for (auto& b : ck.net->named_buffers(true)) {
    load_tensor(a, "buffer/" + b.key(), b.value(), path);
    ++expected;
  }
  if (expected != a.blocks.size()) {
    throw ParseError("checkpoint " + path.string() + " has tensors the network does not know", 0);
  }
  ck.net->eval();
  return ck;
}

BodyModel dataset_body_model(const DatasetIndex& index) {
  BodyModel body = build_body_model(index.config.body_model_seed, index.config.body_model);
  if (fs::exists(index.body_model_path())) {
    const BodyModel stored = load_body_model(index.body_model_path());
    const bool same = stored.num_vertices() == body.num_vertices() &&
                      stored.num_pose_joints() == body.num_pose_joints() &&
                      (stored.template_vertices - body.template_vertices).cwiseAbs().maxCoeff() < 1e-5;
    if (!same) {
      throw ConfigError("dataset " + index.root.string() +
                        ": body_model.bin does not match the seed and config in index.json");
    }
  }
  return body;
}

double learning_rate_at_epoch(const TrainConfig& config, int epoch) {
  const auto n = std::count_if(config.lr_decay_epochs.begin(), config.lr_decay_epochs.end(),
                               [epoch](int e) { return e <= epoch; });
  return config.learning_rate / std::pow(config.lr_decay_factor, static_cast<double>(n));
}

json StepRecord::to_json() const {
  return {{"epoch", epoch}, {"step", step},   {"lr", lr},         {"total", total},
          {"pose", pose},   {"param", param}, {"coord", coord},   {"coord3d", coord3d},
          {"coord2d", coord2d}};
}

TrainResult train(const ExperimentConfig& config,
                  const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  torch::set_num_threads(config.train.num_threads);
  const DatasetIndex index = load_dataset_index(config.data.dataset);

  TrainResult result;
  result.config = config;
  result.config.body_model = index.config.body_model;
  result.config.body_model_seed = index.config.body_model_seed;
  const auto& cfg = result.config;
  result.body = dataset_body_model(index);

  const LoadedSplit split = load_split(index, cfg.data.train_split,
                                       static_cast<std::size_t>(cfg.train.max_train_persons));
  const std::size_t n = split.persons.size();
  if (n < 2) {
    throw ConfigError("training split '" + cfg.data.train_split + "' of " +
                      index.root.string() + " has fewer than two persons");
  }

  result.net = build_network(cfg, result.body);
  auto& net = *result.net;
  net.train();
  torch::optim::Adam optimizer(net.parameters(), torch::optim::AdamOptions(cfg.train.learning_rate));

  const fs::path out_dir = cfg.train.output_dir;
  fs::create_directories(out_dir);
  result.log_path = out_dir / "train_log.json";
  json epochs = json::array();

  const auto B = static_cast<std::size_t>(cfg.train.batch_size);
  int step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.train.epochs && !done; ++epoch) {
    const double lr = learning_rate_at_epoch(cfg.train, epoch);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.train.shuffle) {
      auto rng = derived_rng(cfg.train.seed, static_cast<std::uint64_t>(epoch), ~0ull);
      std::shuffle(order.begin(), order.end(), rng);
    }

    double epoch_total = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start + 1 < n && !done; start += B) {
      const std::size_t end = std::min(n, start + B);
      if (end - start < 2) break;
      std::vector<PreparedSample> samples;
      samples.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ref = split.persons[order[k]];
        auto rng = derived_rng(cfg.train.seed, static_cast<std::uint64_t>(epoch), order[k]);
        samples.push_back(prepare_sample(split.scenes[ref.scene], ref.person, cfg.model, cfg.data,
                                         cfg.data.train_errors ? &rng : nullptr));
      }
      const Batch batch = collate(samples);

      optimizer.zero_grad();
      const NetOutput out = net.forward(batch.input);
      const LossBreakdown loss = compute_losses(out, batch, cfg.model, cfg.train.loss_weights);

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = lr;
      rec.total = loss.total.item<double>();
      rec.pose = loss.pose;
      rec.param = loss.param;
      rec.coord = loss.coord;
      rec.coord3d = loss.coord3d;
      rec.coord2d = loss.coord2d;
      if (!finite(rec.total) || !finite(rec.pose) || !finite(rec.param) || !finite(rec.coord)) {
        result.steps.push_back(rec);
        write_log(result.log_path, cfg, result.steps, epochs, "diverged");
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", step " << step << " (total=" << rec.total
            << ", pose=" << rec.pose << ", param=" << rec.param << ", coord=" << rec.coord
            << ", lr=" << lr << "); log written to " << result.log_path.string();
        throw TrainingDivergedError(msg.str());
      }
      loss.total.backward();
      optimizer.step();

      result.steps.push_back(rec);
      if (on_step) on_step(rec);
      epoch_total += rec.total;
      ++epoch_steps;
      ++step;
      if (cfg.train.max_steps > 0 && step >= cfg.train.max_steps) done = true;
    }

    epochs.push_back({{"epoch", epoch},
                      {"lr", lr},
                      {"steps", epoch_steps},
                      {"mean_total", epoch_steps > 0 ? epoch_total / epoch_steps : 0.0}});
    write_log(result.log_path, cfg, result.steps, epochs, "running");
    if (cfg.train.checkpoint_every_epoch) {
      const fs::path p = out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(p, net, cfg, {{"epoch", epoch}, {"step", step}});
      result.epoch_checkpoints.push_back(p);
    }
  }

  result.final_checkpoint = out_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, net, cfg, {{"step", step}});
  write_log(result.log_path, cfg, result.steps, epochs, "finished");
  net.eval();
  return result;
}

EvaluationResult evaluate(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                          const DatasetIndex& index, const std::string& split) {
  check_body_compatible(config, index);
  const BodyModel ds = dataset_body_model(index);
  const BodyModel& mine = net.body_model();
  if (mine.num_vertices() != ds.num_vertices() || mine.num_pose_joints() != ds.num_pose_joints() ||
      (mine.shape_dirs - ds.shape_dirs).cwiseAbs().maxCoeff() > 1e-5 ||
      (mine.template_vertices - ds.template_vertices).cwiseAbs().maxCoeff() > 1e-5) {
    throw ConfigError("body model mismatch: the network's body model differs from dataset " +
                      index.root.string());
  }
  return evaluate(net, config,
                  load_split(index, split, static_cast<std::size_t>(config.eval.max_persons)));
}

EvaluationResult evaluate(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                          const LoadedSplit& split) {
  const BodyModel& body = net.body_model();
  const int Js = joints::kSupersetSize;
  const int Kp = body.num_pose_joints();
  torch::NoGradGuard no_grad;
  net.eval();

  EvaluationResult result;
  result.split = split.name;
  const auto B = static_cast<std::size_t>(config.eval.batch_size);
  for (std::size_t start = 0; start < split.persons.size(); start += B) {
    const std::size_t end = std::min(split.persons.size(), start + B);
    std::vector<PreparedSample> samples;
    for (std::size_t k = start; k < end; ++k) {
      const auto& ref = split.persons[k];
      const auto& person = split.scenes[ref.scene].persons[ref.person];
      if (person.gt_pose3d.rows() != Js || person.params.theta.rows() != Kp) {
        throw ConfigError("joint-set mismatch: sample " + split.scenes[ref.scene].id + " has " +
                          std::to_string(person.gt_pose3d.rows()) + " joints and " +
                          std::to_string(person.params.theta.rows()) +
                          " pose joints, the network expects " + std::to_string(Js) + " and " +
                          std::to_string(Kp));
      }
      auto rng = derived_rng(config.data.eval_error_seed, k, 0);
      samples.push_back(prepare_sample(split.scenes[ref.scene], ref.person, config.model,
                                       config.data, config.data.eval_errors ? &rng : nullptr));
    }
    const Batch batch = collate(samples);
    const NetOutput out = net.forward(batch.input);

    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& ref = split.persons[start + i];
      const auto& person = split.scenes[ref.scene].persons[ref.person];
      const auto idx = static_cast<std::int64_t>(i);
      PredictionRecord rec;
      rec.sample_id = samples[i].id;
      rec.sequence = split.name;
      rec.pred_joints = root_center(to_matrix(out.joints[idx]), joints::kRoot) * 1000.0;
      rec.gt_joints = person.gt_pose3d;
      const MatrixX3dR pred_v = to_matrix(out.vertices[idx]);
      const Eigen::RowVector3d pred_root = to_matrix(out.joints[idx]).row(joints::kRoot);
      rec.pred_vertices = (pred_v.rowwise() - pred_root) * 1000.0;
      const Mesh gt_mesh = decode_mesh(body, person.params);
      const Eigen::RowVector3d gt_root = regress_joints(body, gt_mesh).row(joints::kRoot);
      rec.gt_vertices = (gt_mesh.vertices.rowwise() - gt_root) * 1000.0;
      result.records.push_back(std::move(rec));
    }
  }
  result.report = compute_report(result.records, config.eval.pck_threshold_mm);
  return result;
}

Pose2D read_pose2d_json(const fs::path& path) {
  const json doc = read_json_file(path);
  try {
    const auto set = doc.value("joint_set", std::string("superset"));
    const auto registry = JointSetRegistry::defaults();
    if (!registry.contains(set)) {
      throw ParseError(path.string() + ": unknown joint set '" + set + "'", 0);
    }
    const auto& pts = doc.at("joints");
    const int n = static_cast<int>(pts.size());
    if (n != registry.size_of(set)) {
      throw ParseError(path.string() + ": joint set '" + set + "' has " +
                           std::to_string(registry.size_of(set)) + " joints, file lists " +
                           std::to_string(n),
                       0);
    }
    Pose2D pose = Pose2D::empty(n, set);
    for (int j = 0; j < n; ++j) {
      pose.joints(j, 0) = pts.at(j).at(0).get<double>();
      pose.joints(j, 1) = pts.at(j).at(1).get<double>();
      pose.confidence(j) = 1.0;
    }
    if (doc.contains("confidence")) {
      const auto& c = doc["confidence"];
      if (static_cast<int>(c.size()) != n) {
        throw ParseError(path.string() + ": confidence length differs from joints", 0);
      }
      for (int j = 0; j < n; ++j) pose.confidence(j) = c.at(j).get<double>();
    }
    return set == "superset" ? pose : map_to_superset(pose, registry);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void write_obj(const fs::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(9);
  for (int v = 0; v < mesh.vertices.rows(); ++v) {
    out << "v " << mesh.vertices(v, 0) << ' ' << mesh.vertices(v, 1) << ' ' << mesh.vertices(v, 2)
        << '\n';
  }
  for (int f = 0; f < mesh.faces.rows(); ++f) {
    out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' '
        << mesh.faces(f, 2) + 1 << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

InferOutputs infer(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                   const fs::path& image_path, const fs::path& pose_path, const fs::path& out_dir,
                   const std::string& stem) {
  const torch::Tensor image = read_png(image_path);
  const Pose2D pose = read_pose2d_json(pose_path);
  PreparedInput in;
  try {
    in = prepare_input(image, pose, config.model, config.data);
  } catch (const DegeneratePoseError& e) {
    throw DegeneratePoseError("infer: no person box from " + pose_path.string() + ": " + e.what());
  }
  const SinglePrediction pred = predict_one(net, in);
  const BodyParams params = pred.out.params.to(torch::kFloat64).at(0);

  fs::create_directories(out_dir);
  InferOutputs files{out_dir / (stem + "_params.json"), out_dir / (stem + "_mesh.obj"),
                     out_dir / (stem + "_overlay.png")};

  const MatrixX3dR joints3d = to_matrix(pred.out.joints[0]);
  const Eigen::RowVector3d root = joints3d.row(joints::kRoot);
  json theta = json::array();
  for (int k = 0; k < params.theta.rows(); ++k) {
    theta.push_back({params.theta(k, 0), params.theta(k, 1), params.theta(k, 2)});
  }
  json j3 = json::array(), j2 = json::array();
  for (int j = 0; j < joints3d.rows(); ++j) {
    const Eigen::RowVector3d c = (joints3d.row(j) - root) * 1000.0;
    j3.push_back({c(0), c(1), c(2)});
    j2.push_back({pred.joints2d_image(j, 0), pred.joints2d_image(j, 1)});
  }
  json names = json::array();
  for (const auto& nm : joints::superset_names()) names.push_back(std::string(nm));
  const json doc = {
      {"theta_g", {params.theta_g(0), params.theta_g(1), params.theta_g(2)}},
      {"theta", theta},
      {"beta", std::vector<double>(params.beta.data(), params.beta.data() + params.beta.size())},
      {"cam", {params.cam(0), params.cam(1), params.cam(2)}},
      {"cam_frame", "crop"},
      {"crop_size", config.model.crop_size},
      {"crop_box", {in.bbox.x_min, in.bbox.y_min, in.bbox.x_max, in.bbox.y_max}},
      {"joint_names", names},
      {"joints3d_mm_root_relative", j3},
      {"joints2d_image", j2},
  };
  write_json_file(files.params_json, doc);

  Mesh mesh;
  mesh.vertices = to_matrix(pred.out.vertices[0]).rowwise() - root;
  mesh.faces = net.body_model().faces;
  write_obj(files.mesh_obj, mesh);

  torch::Tensor overlay = image.clone();
  draw_box(overlay, in.bbox, {1.0f, 1.0f, 0.2f});
  draw_skeleton(overlay, pose.joints, &pose.confidence, config.data.keep_threshold,
                {1.0f, 1.0f, 1.0f}, 1.0);
  draw_skeleton(overlay, pred.joints2d_image, nullptr, 0.0, {0.1f, 0.9f, 0.2f}, 1.0);
  write_png(files.overlay_png, overlay);
  return files;
}

json AblationReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"variant", r.variant},
                         {"seed", r.seed},
                         {"mpjpe_mm", r.report.mpjpe_mm},
                         {"pa_mpjpe_mm", r.report.pa_mpjpe_mm},
                         {"pck3d_percent", r.report.pck3d_percent},
                         {"mpvpe_mm", r.report.mpvpe_mm},
                         {"n_samples", r.report.n_samples}});
  }
  return {{"split", split}, {"rows", rows_json}};
}

std::string AblationReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(14) << "variant" << std::right << std::setw(8) << "seed"
      << std::setw(12) << "MPJPE" << std::setw(12) << "PA-MPJPE" << std::setw(10) << "3DPCK"
      << std::setw(12) << "MPVPE" << std::setw(8) << "N" << '\n';
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    out << std::left << std::setw(14) << r.variant << std::right << std::setw(8) << r.seed
        << std::setw(12) << r.report.mpjpe_mm << std::setw(12) << r.report.pa_mpjpe_mm
        << std::setw(10) << r.report.pck3d_percent << std::setw(12) << r.report.mpvpe_mm
        << std::setw(8) << r.report.n_samples << '\n';
  }
  for (const auto& v : order) {
    double m[4] = {0, 0, 0, 0};
    int k = 0;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      m[0] += r.report.mpjpe_mm;
      m[1] += r.report.pa_mpjpe_mm;
      m[2] += r.report.pck3d_percent;
      m[3] += r.report.mpvpe_mm;
      ++k;
    }
    if (k < 2) continue;
    out << std::left << std::setw(14) << v << std::right << std::setw(8) << "mean"
        << std::setw(12) << m[0] / k << std::setw(12) << m[1] / k << std::setw(10) << m[2] / k
        << std::setw(12) << m[3] / k << std::setw(8) << "" << '\n';
  }
  return out.str();
}

AblationReport ablation_run(const ExperimentConfig& config, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const std::string&)>& progress) {
  const DatasetIndex index = load_dataset_index(config.data.dataset);
  const LoadedSplit eval_split = load_split(index, config.data.eval_split,
                                            static_cast<std::size_t>(config.eval.max_persons));
  AblationReport report;
  report.split = config.data.eval_split;
  for (const auto v : variants) {
    for (const auto seed : seeds) {
      ExperimentConfig run = config;
      run.model.variant = v;
      run.train.seed = seed;
      run.train.output_dir =
          (fs::path(config.train.output_dir) / (variant_name(v) + "_s" + std::to_string(seed))).string();
      if (progress) progress("training " + variant_name(v) + " seed " + std::to_string(seed));
      TrainResult trained = train(run);
      check_body_compatible(trained.config, index);
      const auto ev = evaluate(*trained.net, trained.config, eval_split);
      report.rows.push_back({variant_name(v), seed, ev.report});
      if (progress) {
        std::ostringstream msg;
        msg << variant_name(v) << " seed " << seed << ": MPJPE " << std::fixed
            << std::setprecision(2) << ev.report.mpjpe_mm << " mm";
        progress(msg.str());
      }
    }
  }
  return report;
}

ActivationComparison guided_activation(CrowdMeshNetImpl& net, const ExperimentConfig& config,
                                       const SceneSample& scene, std::size_t target,
                                       std::size_t other) {
  if (target >= scene.persons.size() || other >= scene.persons.size() || target == other) {
    throw ShapeError("guided_activation needs two distinct person indices");
  }
  const Pose2D pose = scene.persons[target].pose2d(scene.width(), scene.height());
  const PreparedInput in = prepare_input(scene.image, pose, config.model, config.data);
  const SinglePrediction pred = predict_one(net, in);
  const auto act = pred.out.guided.data[0].abs().mean(0).to(torch::kFloat64).contiguous();
  const auto a = act.accessor<double, 2>();
  const int h = static_cast<int>(act.size(0));
  const int w = static_cast<int>(act.size(1));
  const double stride = pred.out.guided.stride;
  const double S = config.model.crop_size;

  auto accumulate = [&](const torch::Tensor& silhouette, double& mean, std::size_t& count) {
    const auto sil = silhouette.contiguous();
    const auto m = sil.accessor<std::uint8_t, 2>();
    double sum = 0.0;
    for (int v = 0; v < sil.size(0); ++v) {
      for (int u = 0; u < sil.size(1); ++u) {
        if (m[v][u] == 0) continue;
        const Eigen::Vector2d p = apply_affine(in.affine, {u + 0.5, v + 0.5});
        if (p.x() < 0.0 || p.y() < 0.0 || p.x() >= S || p.y() >= S) continue;
        const int cx = std::min(w - 1, static_cast<int>(p.x() / stride));
        const int cy = std::min(h - 1, static_cast<int>(p.y() / stride));
        sum += a[cy][cx];
        ++count;
      }
    }
    mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
  };
  ActivationComparison r;
  accumulate(scene.persons[target].silhouette, r.target, r.target_pixels);
  accumulate(scene.persons[other].silhouette, r.other, r.other_pixels);
  return r;
}

void visualize_scene(const SceneSample& scene, const fs::path& out_png, CrowdMeshNetImpl* net,
                     const ExperimentConfig* config) {
  static const Rgb palette[] = {{1.0f, 0.85f, 0.1f}, {0.1f, 0.8f, 1.0f}, {1.0f, 0.3f, 0.9f},
                                {0.4f, 1.0f, 0.3f}};
  torch::Tensor canvas = scene.image.clone();
  for (std::size_t i = 0; i < scene.persons.size(); ++i) {
    const auto& p = scene.persons[i];
    const Rgb& color = palette[i % 4];
    draw_box(canvas, p.bbox(), color);
    draw_skeleton(canvas, p.gt_pose2d, nullptr, 0.0, color, 1.0);
    if (net != nullptr && config != nullptr) {
      try {
        const auto in = prepare_input(scene.image, p.pose2d(scene.width(), scene.height()),
                                      config->model, config->data);
        const auto pred = predict_one(*net, in);
        draw_skeleton(canvas, pred.joints2d_image, nullptr, 0.0, {1.0f, 1.0f, 1.0f}, 0.5);
      } catch (const DegeneratePoseError&) {
      }
    }
  }
  if (out_png.has_parent_path()) fs::create_directories(out_png.parent_path());
  write_png(out_png, canvas);
}

}  // namespace crowdmesh

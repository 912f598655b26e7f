#include "support/doctest_torch.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "crowdmesh/body_model.hpp"
#include "crowdmesh/errors.hpp"
#include "crowdmesh/joints.hpp"
#include "crowdmesh/metrics.hpp"
#include "crowdmesh/scenegen.hpp"

using namespace crowdmesh;
namespace fs = std::filesystem;

namespace {

const BodyModel& model() {
  static const BodyModel m = build_body_model(0);
  return m;
}

SceneSample scene(std::uint64_t seed, int n = 2, double overlap = 0.4) {
  SceneConfig c;
  c.n_persons = n;
  c.overlap_target = overlap;
  std::mt19937_64 rng(seed);
  return generate_scene(rng, c, model());
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("crowdmesh_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RenderPerson placed(const Eigen::Vector3d& t, std::array<float, 3> color) {
  RenderPerson p;
  p.vertices = model().template_vertices;
  p.vertices.rowwise() += t.transpose();
  p.color = color;
  return p;
}

}  // namespace

TEST_CASE("generate: a single person has zero CrowdIndex") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto sc = scene(s, 1);
    REQUIRE(sc.persons.size() == 1);
    CHECK(scene_crowd_index(sc, 0) == 0.0);
    CHECK(max_pairwise_iou(sc, 0) == 0.0);
  }
}

TEST_CASE("generate: two persons at overlap 0.4 land in the IoU band") {
  int flagged = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto sc = scene(100 + s);
    const double iou = bbox_iou(sc.persons[0].bbox(), sc.persons[1].bbox());
    if (sc.placement_best_effort) {
      ++flagged;
      continue;
    }
    CHECK(iou >= 0.25);
    CHECK(iou <= 0.55);
  }
  CHECK(flagged <= 2);
}

TEST_CASE("generate: same seed gives an identical sample") {
  const auto a = scene(7), b = scene(7);
  CHECK(torch::equal(a.image, b.image));
  for (std::size_t i = 0; i < a.persons.size(); ++i) {
    CHECK(a.persons[i].params.flatten() == b.persons[i].params.flatten());
    CHECK(a.persons[i].gt_pose2d == b.persons[i].gt_pose2d);
    CHECK(a.persons[i].visibility == b.persons[i].visibility);
    CHECK(torch::equal(a.persons[i].silhouette, b.persons[i].silhouette));
  }
}

TEST_CASE("generate: impossible overlap is flagged, never fatal") {
  SceneConfig c;
  c.n_persons = 3;
  c.overlap_target = 1.0;
  c.iou_tolerance = 0.0;
  c.max_attempts = 5;
  std::mt19937_64 rng(1);
  SceneSample sc;
  CHECK_NOTHROW(sc = generate_scene(rng, c, model()));
  CHECK(sc.placement_best_effort);
  CHECK(sc.persons.size() == 3);
}

TEST_CASE("generate: invalid configuration is rejected") {
  SceneConfig c;
  c.n_persons = 0;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(generate_scene(rng, c, model()), ConfigError);
  c = {};
  c.overlap_target = 1.5;
  CHECK_THROWS_AS(generate_scene(rng, c, model()), ConfigError);
}

TEST_CASE("ground truth: 2D joints are the pinhole projection of the 3D joints") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto sc = scene(200 + s, 3);
    for (const auto& p : sc.persons)
      for (int j = 0; j < p.joints3d.rows(); ++j) {
        const auto uv = sc.camera.project(p.joints3d.row(j).transpose());
        CHECK((uv - p.gt_pose2d.row(j).transpose()).norm() < 0.5);
      }
  }
}

TEST_CASE("ground truth: decoding the params reproduces the root-relative 3D pose") {
  const BodyLayer layer(model(), torch::kFloat64);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto sc = scene(300 + s, 2);
    for (const auto& p : sc.persons) {
      const auto mesh = decode_mesh(model(), p.params);
      const auto j = root_center(regress_joints(model(), mesh), joints::kRoot);
      // gt_pose3d is in mm, model units are m
      CHECK((j * 1000.0 - p.gt_pose3d).cwiseAbs().maxCoeff() < 1e-4 * 1000.0);
    }
  }
}

TEST_CASE("ground truth: visibility flags agree with the other silhouettes") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto sc = scene(400 + s, 3);
    for (std::size_t i = 0; i < sc.persons.size(); ++i) {
      const auto& p = sc.persons[i];
      for (int j = 0; j < p.gt_pose2d.rows(); ++j) {
        const double x = p.gt_pose2d(j, 0), y = p.gt_pose2d(j, 1);
        bool covered = false;
        if (x >= 0 && y >= 0 && x < sc.width() && y < sc.height()) {
          for (std::size_t k = 0; k < sc.persons.size(); ++k) {
            if (k == i) continue;
            covered |= sc.persons[k].silhouette[static_cast<int>(y)][static_cast<int>(x)].item<std::uint8_t>() != 0;
          }
        }
        CHECK(static_cast<bool>(p.visibility[j]) == !covered);
      }
    }
  }
}

TEST_CASE("dataset statistics: crowded split has a higher CrowdIndex than an easy one") {
  std::vector<SceneSample> crowd, easy;
  for (std::uint64_t s = 0; s < 24; ++s) {
    crowd.push_back(scene(500 + s, 2, 0.4));
    easy.push_back(scene(600 + s, 2, 0.0));
  }
  const auto a = split_statistics(crowd), b = split_statistics(easy);
  CHECK(a.mean_crowd_index > b.mean_crowd_index);
  CHECK(a.mean_max_iou > b.mean_max_iou);
  CHECK(a.n_persons == 48);
}

TEST_CASE("render: a single centered person leaves the background untouched") {
  const PinholeCamera cam;
  const auto canvas = torch::rand({cam.height, cam.width, 3});
  const std::vector<RenderPerson> one = {placed({0, 0, 5}, {0.9f, 0.2f, 0.2f})};
  const auto r = render(model(), one, cam, canvas);
  REQUIRE(r.silhouettes.size() == 1);
  CHECK(r.silhouettes[0].sum().item<std::int64_t>() > 0);
  const auto bg = r.owner.eq(-1).unsqueeze(-1).expand({-1, -1, 3});
  CHECK(torch::equal(r.image.masked_select(bg), canvas.masked_select(bg)));
  CHECK(torch::equal(r.silhouettes[0].to(torch::kBool), r.owner.eq(0)));
}

TEST_CASE("render: the nearer person owns the pixel and its color") {
  const PinholeCamera cam;
  const auto canvas = torch::zeros({cam.height, cam.width, 3});
  const auto near = placed({0, 0, 4}, {0.9f, 0.2f, 0.2f});
  const auto far = placed({0.05, 0, 7}, {0.1f, 0.3f, 0.9f});
  const std::vector<RenderPerson> both = {far, near};
  const std::vector<RenderPerson> alone = {near};
  const auto r = render(model(), both, cam, canvas);
  const auto a = render(model(), alone, cam, canvas);
  // wherever the near person is drawn alone, it wins in the pair
  const auto mask = a.owner.eq(0);
  REQUIRE(mask.sum().item<std::int64_t>() > 0);
  CHECK(torch::equal(r.owner.masked_select(mask), torch::ones_like(r.owner).masked_select(mask)));
  const auto m3 = mask.unsqueeze(-1).expand({-1, -1, 3});
  CHECK(torch::equal(r.image.masked_select(m3), a.image.masked_select(m3)));
}

TEST_CASE("sample files: write then read round-trips every field") {
  const auto sc = scene(11, 2);
  const auto dir = temp_dir("sample_rt");
  write_sample(sc, dir / "s");
  const auto a = read_sample(dir / "s");
  CHECK(a.id == sc.id);
  CHECK(a.seed == sc.seed);
  CHECK(a.camera.focal == sc.camera.focal);
  CHECK(a.placement_best_effort == sc.placement_best_effort);
  CHECK(torch::equal(a.image, sc.image.to(torch::kFloat32)));
  REQUIRE(a.persons.size() == sc.persons.size());
  for (std::size_t i = 0; i < a.persons.size(); ++i) {
    CHECK(a.persons[i].visibility == sc.persons[i].visibility);
    CHECK(torch::equal(a.persons[i].silhouette, sc.persons[i].silhouette.to(torch::kUInt8)));
    CHECK((a.persons[i].gt_pose2d - sc.persons[i].gt_pose2d).cwiseAbs().maxCoeff() < 1e-3);
  }
  // arrays are stored as 32-bit floats; a second round-trip is bit-exact
  write_sample(a, dir / "t");
  const auto b = read_sample(dir / "t");
  CHECK(torch::equal(b.image, a.image));
  for (std::size_t i = 0; i < a.persons.size(); ++i) {
    CHECK(b.persons[i].params.flatten() == a.persons[i].params.flatten());
    CHECK(b.persons[i].gt_pose2d == a.persons[i].gt_pose2d);
    CHECK(b.persons[i].gt_pose3d == a.persons[i].gt_pose3d);
    CHECK(b.persons[i].joints3d == a.persons[i].joints3d);
    CHECK(b.persons[i].translation == a.persons[i].translation);
  }
  fs::remove_all(dir);
}

TEST_CASE("sample files: truncation is a parse error with an offset") {
  const auto dir = temp_dir("sample_trunc");
  write_sample(scene(12, 1), dir / "s");
  const auto img = dir / "s" / "image.bin";
  fs::resize_file(img, fs::file_size(img) / 2);
  try {
    (void)read_sample(dir / "s");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() > 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("sample files: a version mismatch is reported explicitly") {
  const auto dir = temp_dir("sample_version");
  write_sample(scene(13, 1), dir / "s");
  const auto meta_path = dir / "s" / "meta.json";
  nlohmann::json meta;
  {
    std::ifstream in(meta_path);
    in >> meta;
  }
  meta["version"] = kSceneFormatVersion + 1;
  {
    std::ofstream out(meta_path);
    out << meta.dump();
  }
  CHECK_THROWS_AS(read_sample(dir / "s"), UnsupportedVersionError);
  fs::remove_all(dir);
}

TEST_CASE("dataset: generate, index, reload") {
  const auto dir = temp_dir("dataset");
  DatasetConfig c;
  c.splits = {{"a", 2, 0.4, 2}, {"b", 1, 0.0, 1}};
  generate_dataset(c, dir / "d");
  const auto idx = load_dataset_index(dir / "d");
  CHECK(idx.split("a").size() == 2);
  CHECK(idx.split("b").size() == 1);
  const auto body = load_body_model(idx.body_model_path());
  CHECK(body.template_vertices.rows() == model().template_vertices.rows());
  const auto s = read_sample(idx.sample_dir(idx.split("b")[0]));
  CHECK(s.persons.size() == 1);
  CHECK(s.seed == c.base_seed + 2);
  CHECK_THROWS_AS(load_dataset_index(dir / "missing"), IoError);
  fs::remove_all(dir);
}

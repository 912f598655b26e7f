#include "support/doctest_torch.hpp"

#include "crowdmesh/errors.hpp"
#include "crowdmesh/guided_backbone.hpp"

using namespace crowdmesh;

namespace {

GuidedBackbone make(int C, int Cp, std::uint64_t seed = 0) {
  torch::manual_seed(static_cast<std::int64_t>(seed));
  BackboneConfig c;
  c.early_channels = C;
  c.feature_channels = Cp;
  GuidedBackbone net(c);
  kaiming_init(*net);
  return net;
}

}  // namespace

TEST_CASE("early stage: 3x64x64 with C=32 gives 32x16x16 at stride 4") {
  EarlyStage early(32);
  early->eval();
  const auto f = early->forward(torch::rand({2, 3, 64, 64}));
  CHECK(f.data.sizes() == torch::IntArrayRef({2, 32, 16, 16}));
  CHECK(f.stride == 4);
}

TEST_CASE("early stage: 3x256x256 with C=64 gives 64x64x64") {
  EarlyStage early(64);
  early->eval();
  torch::NoGradGuard ng;
  const auto f = early->forward(torch::rand({1, 3, 256, 256}));
  CHECK(f.data.sizes() == torch::IntArrayRef({1, 64, 64, 64}));
}

TEST_CASE("early stage: zero input gives a spatially constant response per channel") {
  torch::manual_seed(1);
  EarlyStage early(16);
  for (auto& p : early->parameters()) {
    torch::NoGradGuard ng;
    p.uniform_(-0.5, 0.5);
  }
  early->eval();
  const auto f = early->forward(torch::zeros({1, 3, 32, 32})).data;
  const auto mn = f.amin({2, 3});
  const auto mx = f.amax({2, 3});
  CHECK((mx - mn).abs().max().item<float>() < 1e-6f);
}

TEST_CASE("early stage: crop sizes not divisible by 16 are rejected") {
  EarlyStage early(8);
  CHECK_THROWS_AS(early->forward(torch::rand({1, 3, 40, 64})), ShapeError);
  CHECK_THROWS_AS(early->forward(torch::rand({1, 3, 64, 72})), ShapeError);
}

TEST_CASE("fusion: C=32 and J_s=19 at 16x16 keeps size and channel count") {
  FusionBlock fuse(32, 19);
  fuse->eval();
  const FeatureMap f{torch::rand({2, 32, 16, 16}), 4};
  const auto out = fuse->forward(f, torch::rand({2, 19, 16, 16}));
  CHECK(out.data.sizes() == torch::IntArrayRef({2, 32, 16, 16}));
  CHECK(out.stride == 4);
  // the conv sees 32 + 19 = 51 input channels
  for (const auto& p : fuse->named_parameters()) {
    if (p.key().find("conv") != std::string::npos && p.value().dim() == 4)
      CHECK(p.value().size(1) == 51);
  }
}

TEST_CASE("fusion: heatmaps reach the fused feature") {
  torch::manual_seed(2);
  FusionBlock fuse(8, 19);
  fuse->eval();
  const FeatureMap f{torch::rand({1, 8, 16, 16}), 4};
  const auto a = fuse->forward(f, torch::zeros({1, 19, 16, 16})).data;
  const auto b = fuse->forward(f, torch::rand({1, 19, 16, 16})).data;
  CHECK((a - b).abs().max().item<float>() > 1e-4f);
}

TEST_CASE("fusion: spatial mismatch is a shape error") {
  FusionBlock fuse(8, 19);
  const FeatureMap f{torch::rand({1, 8, 16, 16}), 4};
  CHECK_THROWS_AS(fuse->forward(f, torch::rand({1, 19, 8, 8})), ShapeError);
  CHECK_THROWS_AS(fuse->forward(f, torch::rand({1, 18, 16, 16})), ShapeError);
}

TEST_CASE("late stage: 32x16x16 to 128x4x4 and 64x64x64 to 512x16x16") {
  LateStage late(32, 128, 2);
  late->eval();
  const auto a = late->forward({torch::rand({1, 32, 16, 16}), 4});
  CHECK(a.data.sizes() == torch::IntArrayRef({1, 128, 4, 4}));
  CHECK(a.stride == 16);
  torch::NoGradGuard ng;
  LateStage big(64, 512, 2);
  big->eval();
  const auto b = big->forward({torch::rand({1, 64, 64, 64}), 4});
  CHECK(b.data.sizes() == torch::IntArrayRef({1, 512, 16, 16}));
}

TEST_CASE("late stage: doubling the input changes the output") {
  torch::manual_seed(3);
  LateStage late(16, 32, 1);
  kaiming_init(*late);
  late->eval();
  const auto x = torch::randn({1, 16, 16, 16});
  const auto a = late->forward({x, 4}).data;
  const auto b = late->forward({2 * x, 4}).data;
  CHECK((a - b).abs().max().item<float>() > 1e-4f);
}

TEST_CASE("late stage: spatial dims not divisible by 4 are rejected") {
  LateStage late(8, 16, 1);
  CHECK_THROWS_AS(late->forward({torch::rand({1, 8, 10, 16}), 4}), ShapeError);
}

TEST_CASE("backbone: stride 16 end to end for several crop sizes") {
  for (int S : {32, 64, 128}) {
    auto net = make(8, 16);
    net->eval();
    torch::NoGradGuard ng;
    const auto out = net->forward(torch::rand({1, 3, S, S}), torch::rand({1, 19, S / 4, S / 4}));
    CHECK(out.early.data.size(2) == S / 4);
    CHECK(out.guided.data.size(2) == S / 16);
    CHECK(out.guided.data.size(3) == S / 16);
    CHECK(out.guided.stride == 16);
    CHECK(torch::isfinite(out.guided.data).all().item<bool>());
  }
}

TEST_CASE("backbone: eval mode forward is deterministic") {
  auto net = make(8, 16, 4);
  net->eval();
  const auto crop = torch::rand({2, 3, 64, 64});
  const auto heat = torch::rand({2, 19, 16, 16});
  const auto a = net->forward(crop, heat).guided.data;
  const auto b = net->forward(crop, heat).guided.data;
  CHECK(torch::equal(a, b));
}

TEST_CASE("backbone: perturbing one heatmap channel changes F'") {
  auto net = make(8, 16, 5);
  net->eval();
  net->to(torch::kFloat64);
  const auto crop = torch::rand({1, 3, 64, 64}, torch::kFloat64);
  auto heat = torch::rand({1, 19, 16, 16}, torch::kFloat64).requires_grad_(true);
  const auto out = net->forward(crop, heat).guided.data;
  // gradient from one F' cell back to the heatmaps
  out[0].select(1, 1).select(1, 1).sum().backward();
  CHECK(heat.grad()[0][3].abs().sum().item<double>() > 0.0);

  torch::NoGradGuard ng;
  auto bumped = heat.detach().clone();
  bumped[0][3] += 1e-3;
  const auto a = net->forward(crop, heat.detach()).guided.data;
  const auto b = net->forward(crop, bumped).guided.data;
  CHECK((a - b).abs().max().item<double>() > 0.0);
}

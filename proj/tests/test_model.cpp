// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <torch/torch.h>

#include "osfpi/errors.hpp"
#include "osfpi/init.hpp"
#include "osfpi/losses.hpp"
#include "osfpi/model.hpp"
#include "test_util.hpp"

namespace osfpi {
namespace {

TEST(ModelConfig, PresetsValidate) {
  EXPECT_NO_THROW(ModelConfig::defaults().validate());
  EXPECT_NO_THROW(ModelConfig::miniature().validate());
  EXPECT_NO_THROW(ModelConfig::gradcheck().validate());
  const auto mini = ModelConfig::miniature();
  EXPECT_EQ(mini.backbone.stage_channels, (std::vector<std::int64_t>{16, 32, 64}));
  EXPECT_EQ(mini.backbone.stage_depths, (std::vector<std::int64_t>{1, 1, 2}));
}

TEST(ModelConfig, CrossModuleChecksNameTheField) {
  auto cfg = ModelConfig::defaults();
  cfg.fusion.fpn_channels = 32;
  cfg.fusion.corr_groups = 32;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "fusion.fpn_channels");
  }
  cfg = ModelConfig::defaults();
  cfg.fusion.heatmap_size = 192;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndStrictness) {
  const auto cfg = ModelConfig::miniature();
  const auto j = to_json(cfg);
  EXPECT_EQ(to_json(model_config_from_json(j)), j);
  EXPECT_EQ(to_json(model_config_from_json(nlohmann::json::object())), to_json(ModelConfig::defaults()));

  auto extra = j;
  extra["backbone"]["stage_count"] = 3;
  try {
    model_config_from_json(extra);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage_count"), std::string::npos) << e.what();
  }
  auto wrong_type = j;
  wrong_type["fusion"]["atrous_rates"] = "12,24,32";
  EXPECT_THROW(model_config_from_json(wrong_type), ConfigError);
  auto bad_grid = j;
  bad_grid["backbone"]["uav_input"] = {32};
  EXPECT_THROW(model_config_from_json(bad_grid), ConfigError);
}

TEST(Model, DefaultOutputShapes) {
  auto model = make_model(ModelConfig::defaults(), 0);
  torch::NoGradGuard ng;
  const auto out = model->forward(torch::randn({1, 3, 96, 96}), torch::randn({1, 3, 384, 384}));
  EXPECT_EQ(out.heatmap.sizes(), torch::IntArrayRef({1, 1, 384, 384}));
  EXPECT_EQ(out.offsets.sizes(), torch::IntArrayRef({1, 2, 384, 384}));
}

TEST(Model, SeededConstructionAndDeterministicForward) {
  const auto cfg = ModelConfig::miniature();
  auto a = make_model(cfg, 4);
  auto b = make_model(cfg, 4);
  auto c = make_model(cfg, 5);
  const auto pa = a->named_parameters();
  const auto pb = b->named_parameters();
  const auto pc = c->named_parameters();
  bool any_differs = false;
  for (const auto& item : pa) {
    EXPECT_TRUE(torch::equal(item.value(), pb[item.key()])) << item.key();
    any_differs |= !torch::equal(item.value(), pc[item.key()]);
  }
  EXPECT_TRUE(any_differs);

  torch::manual_seed(9);
  const auto u = torch::rand({2, 3, 32, 32}) * 2 - 1;
  const auto s = torch::rand({2, 3, 128, 128}) * 2 - 1;
  torch::NoGradGuard ng;
  const auto o1 = a->forward(u, s);
  const auto o2 = a->forward(u, s);
  EXPECT_TRUE(torch::equal(o1.heatmap, o2.heatmap));
  EXPECT_TRUE(torch::equal(o1.offsets, o2.offsets));
  EXPECT_TRUE(torch::equal(o1.heatmap, b->forward(u, s).heatmap));
}

TEST(Model, PredictDecodesEverySample) {
  auto model = make_model(ModelConfig::miniature(), 1);
  randomize_parameters(*model, 2, 0.1);
  const auto u = torch::rand({3, 3, 32, 32}) * 2 - 1;
  const auto s = torch::rand({3, 3, 128, 128}) * 2 - 1;
  const auto preds = predict(model, u, s);
  ASSERT_EQ(preds.size(), 3u);
  torch::NoGradGuard ng;
  const auto raw = model->forward(u, s);
  for (std::int64_t i = 0; i < 3; ++i) {
    const auto& p = preds[static_cast<std::size_t>(i)];
    EXPECT_EQ(p.heatmap.sizes(), torch::IntArrayRef({128, 128}));
    EXPECT_EQ(p.offsets.sizes(), torch::IntArrayRef({2, 128, 128}));
    EXPECT_LE(p.offsets.abs().max().item<double>(), 16.0);
    const auto expect = decode_prediction(raw, i, 16.0);
    EXPECT_EQ(p.point.x, expect.point.x);
    EXPECT_EQ(p.point.y, expect.point.y);
    EXPECT_TRUE(std::isfinite(p.point.x) && std::isfinite(p.point.y));
    EXPECT_GE(p.argmax.x, 0);
    EXPECT_LT(p.argmax.x, 128);
  }
}

TEST(Model, FullModelGradientsMatchFiniteDifferences) {
  const auto cfg = ModelConfig::gradcheck();
  auto model = make_model(cfg, 10);
  // Nonzero weights on the zero-initialized branches so every path carries gradient.
  randomize_parameters(*model, 11, 0.3);
  model->to(torch::kFloat64);
  torch::manual_seed(12);
  const auto uav = torch::rand({2, 3, 16, 16}, torch::kFloat64) * 2 - 1;
  const auto sat = torch::rand({2, 3, 32, 32}, torch::kFloat64) * 2 - 1;
  const std::vector<SampleLabel> labels{{10.3, 20.7, 9, 40}, {25.5, 4.2, 9, 40}};
  auto loss = [&](const torch::Tensor& u, const torch::Tensor& s) {
    return total_loss(model->forward(u, s), labels).total;
  };

  model->zero_grad();
  auto u = uav.clone().requires_grad_(true);
  auto s = sat.clone().requires_grad_(true);
  const auto l = loss(u, s);
  ASSERT_TRUE(std::isfinite(l.item<double>()));
  l.backward();

  const double step = 1e-6, tol = 1e-3;
  auto pu = uav.clone();
  auto ps = sat.clone();
  EXPECT_LT(max_fd_relative_error([&](const torch::Tensor& x) { return loss(x, sat); }, pu, u.grad(), step, 24, 1),
            tol);
  EXPECT_LT(max_fd_relative_error([&](const torch::Tensor& x) { return loss(uav, x); }, ps, s.grad(), step, 24, 2),
            tol);

  const auto params = model->named_parameters();
  for (const std::string name :
       {"backbone.stage1.merge.proj.weight", "backbone.stage1.blocks.0.attn.kv.weight",
        "backbone.stage2.peg_sat.conv.weight", "backbone.stage3.blocks.0.mlp.fc1.weight",
        "head.fpn.lateral3.weight", "head.atrous.fuse.weight", "head.corr.proj.weight",
        "head.offset_head.out.weight"}) {
    auto p = params[name];
    ASSERT_TRUE(p.grad().defined()) << name;
    EXPECT_GT(p.grad().abs().max().item<double>(), 0.0) << name;
    auto f = [&](const torch::Tensor&) { return loss(uav, sat); };
    EXPECT_LT(max_fd_relative_error(f, p.detach(), p.grad(), step, 12, 3), tol) << name;
  }
}

}  // namespace
}  // namespace osfpi

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include <torch/torch.h>

#include "osfpi/backbone.hpp"
#include "osfpi/errors.hpp"
#include "osfpi/init.hpp"
#include "osfpi/model.hpp"
#include "test_util.hpp"

namespace osfpi {
namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const torch::Tensor& t2) {
  auto t = t2.detach().to(torch::kFloat64).contiguous();
  Mat m(static_cast<std::size_t>(t.size(0)), std::vector<double>(static_cast<std::size_t>(t.size(1))));
  auto a = t.accessor<double, 2>();
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = a[i][j];
  return m;
}

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().view(-1);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

torch::Tensor param(torch::nn::Module& m, const std::string& name) {
  auto p = m.named_parameters().find(name);
  if (p == nullptr) throw std::runtime_error("no parameter " + name);
  return *p;
}

Mat linear(const Mat& x, const torch::Tensor& w, const torch::Tensor& b) {
  const auto wm = to_mat(w);
  const auto bv = to_vec(b);
  Mat y(x.size(), std::vector<double>(wm.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < wm.size(); ++o) {
      double s = bv[o];
      for (std::size_t c = 0; c < x[i].size(); ++c) s += wm[o][c] * x[i][c];
      y[i][o] = s;
    }
  return y;
}

void layer_norm(Mat& x, const torch::Tensor& gamma, const torch::Tensor& beta) {
  const auto g = to_vec(gamma);
  const auto b = to_vec(beta);
  for (auto& row : x) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
}

// Strided (kernel = stride = r) convolution on a row-major token grid.
Mat strided_conv(const Mat& tokens, GridSize grid, std::int64_t r, const torch::Tensor& w,
                 const torch::Tensor& b) {
  auto wt = w.detach().to(torch::kFloat64).contiguous();
  auto wa = wt.accessor<double, 4>();
  const auto bv = to_vec(b);
  const std::int64_t orow = grid.rows / r, ocol = grid.cols / r;
  Mat y(static_cast<std::size_t>(orow * ocol), std::vector<double>(bv.size()));
  for (std::int64_t i = 0; i < orow; ++i)
    for (std::int64_t j = 0; j < ocol; ++j)
      for (std::size_t o = 0; o < bv.size(); ++o) {
        double s = bv[o];
        for (std::int64_t di = 0; di < r; ++di)
          for (std::int64_t dj = 0; dj < r; ++dj) {
            const auto& t = tokens[static_cast<std::size_t>((i * r + di) * grid.cols + j * r + dj)];
            for (std::size_t c = 0; c < t.size(); ++c)
              s += wa[static_cast<std::int64_t>(o)][static_cast<std::int64_t>(c)][di][dj] * t[c];
          }
        y[static_cast<std::size_t>(i * ocol + j)][o] = s;
      }
  return y;
}

// Loop implementation of the asymmetric attention for batch 1.
Mat brute_attention(MixedAttention& attn, const Mat& x, const MergedLayout& layout,
                    std::int64_t heads, std::int64_t ratio) {
  auto& m = *attn;
  const std::size_t lu = static_cast<std::size_t>(layout.uav_length());
  const std::size_t channels = x[0].size();
  const std::size_t hd = channels / static_cast<std::size_t>(heads);
  Mat xu(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(lu));
  Mat xs(x.begin() + static_cast<std::ptrdiff_t>(lu), x.end());
  auto reduce = [&](const Mat& t, GridSize g, const std::string& p) {
    if (ratio == 1) return t;
    auto y = strided_conv(t, g, ratio, param(m, p + ".conv.weight"), param(m, p + ".conv.bias"));
    layer_norm(y, param(m, p + ".norm.weight"), param(m, p + ".norm.bias"));
    return y;
  };
  const auto kvu = linear(reduce(xu, layout.uav, "sr_uav"), param(m, "kv.weight"), param(m, "kv.bias"));
  const auto kvs = linear(reduce(xs, layout.sat, "sr_sat"), param(m, "kv.weight"), param(m, "kv.bias"));
  const auto q = linear(x, param(m, "q.weight"), param(m, "q.bias"));

  Mat out(x.size(), std::vector<double>(channels, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    Mat keys = kvu;
    if (i >= lu) keys.insert(keys.end(), kvs.begin(), kvs.end());
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
      std::vector<double> s(keys.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < keys.size(); ++j) {
        double d = 0;
        for (std::size_t c = 0; c < hd; ++c) d += q[i][h * hd + c] * keys[j][h * hd + c];
        s[j] = d / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < keys.size(); ++j)
        for (std::size_t c = 0; c < hd; ++c) out[i][h * hd + c] += s[j] / z * keys[j][channels + h * hd + c];
    }
  }
  return linear(out, param(m, "proj.weight"), param(m, "proj.bias"));
}

BackboneConfig tiny_config() { return ModelConfig::gradcheck().backbone; }

// ---- config ----

TEST(BackboneConfig, DefaultsAndValidation) {
  BackboneConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.stage_grid(Domain::Uav, 2), (GridSize{6, 6}));
  EXPECT_EQ(cfg.stage_grid(Domain::Sat, 0), (GridSize{96, 96}));

  auto bad = cfg;
  bad.stage_heads = {1, 3, 5};
  try {
    bad.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "backbone.stage_heads");
  }
  bad = cfg;
  bad.stage_depths = {3, 4};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.uav_input = {100, 96};
  try {
    bad.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "backbone.uav_input");
  }
}

// ---- shapes ----

TEST(Backbone, DefaultShapeLadderAndTokenCounts) {
  torch::manual_seed(0);
  OsPcpvt net(BackboneConfig{});
  torch::NoGradGuard ng;
  const auto out = net->forward(torch::randn({1, 3, 96, 96}), torch::randn({1, 3, 384, 384}));
  const std::array<std::array<std::int64_t, 3>, 3> u{{{64, 24, 24}, {128, 12, 12}, {320, 6, 6}}};
  const std::array<std::array<std::int64_t, 3>, 3> s{{{64, 96, 96}, {128, 48, 48}, {320, 24, 24}}};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out.uav[i].sizes(), torch::IntArrayRef({1, u[i][0], u[i][1], u[i][2]}));
    EXPECT_EQ(out.sat[i].sizes(), torch::IntArrayRef({1, s[i][0], s[i][1], s[i][2]}));
  }
  EXPECT_EQ(out.token_counts[0], (std::pair<std::int64_t, std::int64_t>{576, 9216}));
  EXPECT_EQ(out.token_counts[1], (std::pair<std::int64_t, std::int64_t>{144, 2304}));
  EXPECT_EQ(out.token_counts[2], (std::pair<std::int64_t, std::int64_t>{36, 576}));
}

TEST(Backbone, ShapeLadderForOtherConfigs) {
  for (auto cfg : {ModelConfig::miniature().backbone, tiny_config()}) {
    torch::manual_seed(1);
    OsPcpvt net(cfg);
    torch::NoGradGuard ng;
    const auto out = net->forward(torch::randn({2, 3, cfg.uav_input.rows, cfg.uav_input.cols}),
                                  torch::randn({2, 3, cfg.sat_input.rows, cfg.sat_input.cols}));
    for (std::size_t i = 0; i < 3; ++i) {
      const std::int64_t f = 4 << i;
      EXPECT_EQ(out.uav[i].sizes(),
                torch::IntArrayRef({2, cfg.stage_channels[i], cfg.uav_input.rows / f, cfg.uav_input.cols / f}));
      EXPECT_EQ(out.sat[i].sizes(),
                torch::IntArrayRef({2, cfg.stage_channels[i], cfg.sat_input.rows / f, cfg.sat_input.cols / f}));
    }
  }
}

TEST(Backbone, DeterministicBitwise) {
  const auto cfg = tiny_config();
  torch::manual_seed(2);
  OsPcpvt net(cfg);
  randomize_parameters(*net, 3);
  torch::NoGradGuard ng;
  const auto u = torch::randn({2, 3, 16, 16});
  const auto s = torch::randn({2, 3, 32, 32});
  const auto a = net->forward(u, s);
  const auto b = net->forward(u, s);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(torch::equal(a.uav[i], b.uav[i]));
    EXPECT_TRUE(torch::equal(a.sat[i], b.sat[i]));
  }
}

TEST(Backbone, RejectsMismatchedInputs) {
  OsPcpvt net(tiny_config());
  EXPECT_THROW(net->forward(torch::zeros({1, 3, 32, 32}), torch::zeros({1, 3, 32, 32})),
               DimensionMismatch);
  EXPECT_THROW(net->forward(torch::zeros({1, 1, 16, 16}), torch::zeros({1, 3, 32, 32})),
               DimensionMismatch);
  EXPECT_THROW(net->forward(torch::zeros({2, 3, 16, 16}), torch::zeros({1, 3, 32, 32})),
               DimensionMismatch);
}

// ---- patch embedding / SRA ----

TEST(PatchEmbed, DefaultLengths) {
  BackboneConfig cfg;
  PatchMerge embed(3, 64, 4);
  torch::NoGradGuard ng;
  auto [u, s] = patch_embed(embed, torch::zeros({1, 3, 96, 96}), torch::zeros({1, 3, 384, 384}), cfg);
  EXPECT_EQ(u.length(), 576);
  EXPECT_EQ(s.length(), 9216);
  EXPECT_EQ(u.channels(), 64);
  EXPECT_EQ(s.channels(), 64);
  EXPECT_EQ(u.domain, Domain::Uav);
  EXPECT_EQ(s.domain, Domain::Sat);
}

TEST(PatchEmbed, SinglePatchAndErrors) {
  BackboneConfig cfg;
  cfg.uav_input = {4, 4};
  cfg.sat_input = {4, 4};
  PatchMerge embed(3, 8, 4);
  torch::NoGradGuard ng;
  auto [u, s] = patch_embed(embed, torch::randn({1, 3, 4, 4}), torch::randn({1, 3, 4, 4}), cfg);
  EXPECT_EQ(u.length(), 1);
  EXPECT_EQ(s.length(), 1);

  BackboneConfig d;
  EXPECT_THROW(patch_embed(embed, torch::zeros({1, 3, 95, 96}), torch::zeros({1, 3, 384, 384}), d),
               DimensionMismatch);
}

TEST(PatchEmbed, MatchesConvPlusLayerNormOracle) {
  torch::manual_seed(4);
  PatchMerge embed(3, 6, 4);
  randomize_parameters(*embed, 9);
  embed->to(torch::kFloat64);
  const auto img = torch::randn({1, 3, 8, 12}, torch::kFloat64);
  torch::NoGradGuard ng;
  const auto tokens = embed->forward(img, Domain::Sat);
  EXPECT_EQ(tokens.grid, (GridSize{2, 3}));
  // Pixels as 3-channel tokens on an 8x12 grid, then the loop oracle.
  Mat px(96, std::vector<double>(3));
  auto a = img.accessor<double, 4>();
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 12; ++c)
      for (int k = 0; k < 3; ++k) px[static_cast<std::size_t>(r * 12 + c)][static_cast<std::size_t>(k)] = a[0][k][r][c];
  auto expect = strided_conv(px, {8, 12}, 4, param(*embed, "proj.weight"), param(*embed, "proj.bias"));
  layer_norm(expect, param(*embed, "norm.weight"), param(*embed, "norm.bias"));
  const auto got = to_mat(tokens.data[0]);
  for (std::size_t i = 0; i < expect.size(); ++i)
    for (std::size_t j = 0; j < expect[i].size(); ++j) EXPECT_NEAR(got[i][j], expect[i][j], 1e-10);
}

TEST(SraReduce, GridArithmetic) {
  torch::NoGradGuard ng;
  SpatialReduction r8(4, 8);
  auto t = TokenSequence::from_grid(torch::randn({1, 4, 96, 96}), Domain::Sat);
  auto out = r8->forward(t);
  EXPECT_EQ(out.grid, (GridSize{12, 12}));
  EXPECT_EQ(out.length(), 144);
  auto t24 = TokenSequence::from_grid(torch::randn({1, 4, 24, 24}), Domain::Uav);
  EXPECT_EQ(r8->forward(t24).length(), 9);
  SpatialReduction r1(4, 1);
  auto same = r1->forward(t24);
  EXPECT_EQ(same.grid, (GridSize{24, 24}));
  EXPECT_TRUE(torch::equal(same.data, t24.data));
  SpatialReduction r5(4, 5);
  EXPECT_THROW(r5->forward(t24), DimensionMismatch);
}

TEST(TokenSequence, GridRoundTripLossless) {
  const auto g = torch::randn({2, 5, 3, 7});
  const auto t = TokenSequence::from_grid(g, Domain::Uav);
  EXPECT_EQ(t.length(), 21);
  EXPECT_TRUE(torch::equal(t.to_grid(), g));
  // Row-major: token (r, c) is grid cell r * cols + c.
  EXPECT_TRUE(torch::equal(t.data[1][2 * 7 + 4], g[1].select(1, 2).select(1, 4)));
}

// ---- attention ----

TEST(MixedAttention, MatchesBruteForceWithReduction) {
  torch::manual_seed(5);
  MixedAttention attn(4, 2, 2);
  randomize_parameters(*attn, 11, 0.5);
  attn->to(torch::kFloat64);
  const MergedLayout layout{{2, 4}, {4, 4}};
  const auto x = torch::randn({1, layout.total(), 4}, torch::kFloat64);
  torch::NoGradGuard ng;
  AttentionProbe probe;
  const auto got = to_mat(attn->forward(x, layout, &probe)[0]);
  const auto expect = brute_attention(attn, to_mat(x[0]), layout, 2, 2);
  for (std::size_t i = 0; i < expect.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) ASSERT_NEAR(got[i][j], expect[i][j], 1e-10) << i << "," << j;
  // Reduced key counts: UAV 1x2, SAT 2x2.
  EXPECT_EQ(probe.uav.sizes(), torch::IntArrayRef({1, 2, 8, 2}));
  EXPECT_EQ(probe.sat.sizes(), torch::IntArrayRef({1, 2, 16, 6}));
}

TEST(MixedAttention, MatchesBruteForceWithoutReduction) {
  torch::manual_seed(6);
  MixedAttention attn(6, 3, 1);
  randomize_parameters(*attn, 12, 0.5);
  attn->to(torch::kFloat64);
  const MergedLayout layout{{1, 3}, {2, 3}};
  const auto x = torch::randn({1, layout.total(), 6}, torch::kFloat64);
  torch::NoGradGuard ng;
  const auto got = to_mat(attn->forward(x, layout)[0]);
  const auto expect = brute_attention(attn, to_mat(x[0]), layout, 3, 1);
  for (std::size_t i = 0; i < expect.size(); ++i)
    for (std::size_t j = 0; j < 6; ++j) ASSERT_NEAR(got[i][j], expect[i][j], 1e-10);
}

TEST(MixedAttention, StageOneDefaultLengthsAndRowSums) {
  torch::manual_seed(7);
  MixedAttention attn(64, 1, 8);
  randomize_parameters(*attn, 13, 0.05);
  const MergedLayout layout{{24, 24}, {96, 96}};
  torch::NoGradGuard ng;
  AttentionProbe probe;
  const auto out = attn->forward(torch::randn({1, 9792, 64}), layout, &probe);
  EXPECT_EQ(out.size(1), 9792);
  EXPECT_EQ(probe.uav.size(3), 9);
  EXPECT_EQ(probe.sat.size(3), 153);
  EXPECT_LT((probe.uav.sum(-1) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_LT((probe.sat.sum(-1) - 1).abs().max().item<double>(), 1e-6);
}

TEST(MixedAttention, ZeroValuesGiveZeroOutput) {
  torch::manual_seed(8);
  MixedAttention attn(4, 2, 1);
  randomize_parameters(*attn, 14);
  {
    torch::NoGradGuard ng;
    // Second half of kv produces V.
    param(*attn, "kv.weight").narrow(0, 4, 4).zero_();
    param(*attn, "kv.bias").narrow(0, 4, 4).zero_();
    param(*attn, "proj.bias").zero_();
  }
  torch::NoGradGuard ng;
  const auto out = attn->forward(torch::randn({2, 6, 4}), MergedLayout{{1, 2}, {2, 2}});
  EXPECT_EQ(out.abs().max().item<float>(), 0.0f);
}

TEST(MixedAttention, TwoTokenHandComputed) {
  MixedAttention attn(2, 1, 1);
  {
    torch::NoGradGuard ng;
    auto eye = torch::eye(2);
    attn->query()->weight.copy_(eye);
    attn->key_value()->weight.copy_(torch::cat({eye, eye}, 0));
    attn->output()->weight.copy_(eye);
    for (auto& p : attn->parameters())
      if (p.dim() == 1) p.zero_();
  }
  const double u0 = 1.0, u1 = 0.5, s0 = -0.5, s1 = 2.0;
  const auto x = torch::tensor({u0, u1, s0, s1}, torch::kFloat32).view({1, 2, 2});
  torch::NoGradGuard ng;
  const auto out = attn->forward(x, MergedLayout{{1, 1}, {1, 1}});
  // UAV row: only one key, so it returns its own value.
  EXPECT_NEAR(out[0][0][0].item<double>(), u0, 1e-6);
  EXPECT_NEAR(out[0][0][1].item<double>(), u1, 1e-6);
  // SAT row: softmax over (s.u, s.s) / sqrt(2).
  const double a = (s0 * u0 + s1 * u1) / std::sqrt(2.0);
  const double b = (s0 * s0 + s1 * s1) / std::sqrt(2.0);
  const double wu = std::exp(a) / (std::exp(a) + std::exp(b));
  EXPECT_NEAR(out[0][1][0].item<double>(), wu * u0 + (1 - wu) * s0, 1e-6);
  EXPECT_NEAR(out[0][1][1].item<double>(), wu * u1 + (1 - wu) * s1, 1e-6);
}

TEST(MixedAttention, SplitPointError) {
  MixedAttention attn(4, 1, 1);
  EXPECT_THROW(attn->forward(torch::zeros({1, 7, 4}), MergedLayout{{1, 2}, {2, 2}}), SplitPointError);
  EXPECT_THROW(MixedAttention(6, 4, 1), ChannelMismatch);
}

// ---- PEG ----

TEST(Peg, ZeroInitIsIdentity) {
  PositionEncoding peg(3);
  auto t = TokenSequence::from_grid(torch::zeros({1, 3, 4, 4}), Domain::Uav);
  EXPECT_TRUE(torch::equal(peg->forward(t).data, t.data));
  auto r = TokenSequence::from_grid(torch::randn({1, 3, 4, 4}), Domain::Uav);
  EXPECT_TRUE(torch::equal(peg->forward(r).data, r.data));
}

TEST(Peg, DirectConvolutionOracleAndTranslation) {
  PositionEncoding peg(2);
  randomize_parameters(*peg, 15, 0.5);
  peg->to(torch::kFloat64);
  auto& w = peg->conv()->weight;  // [2, 1, 3, 3]
  auto& bias = peg->conv()->bias;
  auto residual = [&](const torch::Tensor& g) {  // loop oracle, zero padding
    auto out = torch::zeros_like(g);
    auto ga = g.accessor<double, 4>();
    auto oa = out.accessor<double, 4>();
    auto wa = w.accessor<double, 4>();
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          double s = bias[c].item<double>();
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              if (i + di >= 0 && i + di < 5 && j + dj >= 0 && j + dj < 5)
                s += wa[c][0][di + 1][dj + 1] * ga[0][c][i + di][j + dj];
          oa[0][c][i][j] = s;
        }
    return out;
  };
  torch::NoGradGuard ng;
  auto g = torch::zeros({1, 2, 5, 5}, torch::kFloat64);
  g.index_put_({0, torch::indexing::Slice(), torch::indexing::Slice(1, 3), torch::indexing::Slice(1, 3)},
               torch::randn({2, 2, 2}, torch::kFloat64));
  auto res = peg->forward(TokenSequence::from_grid(g, Domain::Sat)).to_grid() - g;
  EXPECT_LT((res - residual(g)).abs().max().item<double>(), 1e-12);

  auto shifted = torch::roll(g, {1, 1}, {2, 3});  // content sits in the interior, no wrap
  auto res2 = peg->forward(TokenSequence::from_grid(shifted, Domain::Sat)).to_grid() - shifted;
  const auto interior = torch::indexing::Slice(1, 5);
  EXPECT_LT((res2.index({0, torch::indexing::Slice(), interior, interior}) -
             res.index({0, torch::indexing::Slice(), torch::indexing::Slice(0, 4), torch::indexing::Slice(0, 4)}))
                .abs()
                .max()
                .item<double>(),
            1e-12);
}

TEST(Peg, SingleCellUsesCenterTap) {
  PositionEncoding peg(3);
  randomize_parameters(*peg, 16);
  {
    torch::NoGradGuard ng;
    peg->conv()->bias.zero_();
  }
  torch::NoGradGuard ng;
  auto g = torch::randn({1, 3, 1, 1});
  auto res = peg->forward(TokenSequence::from_grid(g, Domain::Uav)).to_grid() - g;
  for (int c = 0; c < 3; ++c)
    EXPECT_NEAR(res[0][c][0][0].item<double>(),
                peg->conv()->weight[c][0][1][1].item<double>() * g[0][c][0][0].item<double>(), 1e-6);
}

// ---- encoder block ----

TEST(EncoderBlock, ZeroInitIsIdentityAndShapePreserving) {
  EncoderBlock block(8, 2, 1, 2.0);
  torch::NoGradGuard ng;
  const auto x = torch::randn({2, 10, 8});
  const auto y = block->forward(x, MergedLayout{{2, 2}, {2, 3}});
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_TRUE(torch::equal(y, x));
  randomize_parameters(*block, 17);
  EXPECT_EQ(block->forward(x, MergedLayout{{2, 2}, {2, 3}}).sizes(), x.sizes());
}

TEST(EncoderBlock, GradientMatchesFiniteDifferences) {
  EncoderBlock block(4, 2, 1, 2.0);
  randomize_parameters(*block, 18, 0.5);
  block->to(torch::kFloat64);
  const MergedLayout layout{{1, 2}, {1, 2}};  // 4 tokens
  const auto weights = torch::randn({1, 4, 4}, torch::kFloat64);
  auto x = torch::randn({1, 4, 4}, torch::kFloat64).requires_grad_(true);
  auto f = [&](const torch::Tensor& in) { return (block->forward(in, layout) * weights).sum(); };
  f(x).backward();
  auto probe = x.detach().clone();
  EXPECT_LT(max_fd_relative_error(f, probe, x.grad(), 1e-3, 0, 1), 1e-4);
}

// ---- whole-backbone properties ----

TEST(Backbone, UavOutputsIgnoreSatelliteContent) {
  const auto cfg = tiny_config();
  OsPcpvt net(cfg);
  randomize_parameters(*net, 19);
  torch::NoGradGuard ng;
  const auto u = torch::randn({1, 3, 16, 16});
  const auto a = net->forward(u, torch::randn({1, 3, 32, 32}));
  const auto b = net->forward(u, torch::zeros({1, 3, 32, 32}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(torch::equal(a.uav[i], b.uav[i])) << i;
    EXPECT_FALSE(torch::equal(a.sat[i], b.sat[i])) << i;
  }
}

TEST(Backbone, UavPixelReachesSatelliteStageOne) {
  const auto cfg = tiny_config();
  OsPcpvt net(cfg);
  randomize_parameters(*net, 20);
  torch::NoGradGuard ng;
  auto u = torch::randn({1, 3, 16, 16});
  const auto s = torch::randn({1, 3, 32, 32});
  const auto a = net->forward(u, s);
  u[0][1][7][9] += 0.5;
  const auto b = net->forward(u, s);
  EXPECT_GT((a.sat[0] - b.sat[0]).abs().max().item<float>(), 1e-6f);
}

TEST(Backbone, GradientMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  OsPcpvt net(cfg);
  randomize_parameters(*net, 21, 0.3);
  net->to(torch::kFloat64);
  torch::manual_seed(22);
  const auto su = torch::randn({1, 3, 16, 16}, torch::kFloat64);
  const auto ss = torch::randn({1, 3, 32, 32}, torch::kFloat64);
  std::array<torch::Tensor, 6> w;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::int64_t f = 4 << i;
    w[i] = torch::randn({1, cfg.stage_channels[i], 16 / f, 16 / f}, torch::kFloat64);
    w[3 + i] = torch::randn({1, cfg.stage_channels[i], 32 / f, 32 / f}, torch::kFloat64);
  }
  auto loss = [&](const torch::Tensor& u, const torch::Tensor& s) {
    const auto o = net->forward(u, s);
    auto l = torch::zeros({}, torch::kFloat64);
    for (std::size_t i = 0; i < 3; ++i) l = l + (o.uav[i] * w[i]).sum() + (o.sat[i] * w[3 + i]).sum();
    return l;
  };
  auto u = su.clone().requires_grad_(true);
  auto s = ss.clone().requires_grad_(true);
  loss(u, s).backward();
  auto pu = su.clone();
  auto ps = ss.clone();
  EXPECT_LT(max_fd_relative_error([&](const torch::Tensor& x) { return loss(x, ss); }, pu, u.grad(), 1e-5, 40, 1),
            1e-3);
  EXPECT_LT(max_fd_relative_error([&](const torch::Tensor& x) { return loss(su, x); }, ps, s.grad(), 1e-5, 40, 2),
            1e-3);

  // A parameter deep in the network: stage-2 attention query weights.
  auto q = param(*net, "stage2.blocks.0.attn.q.weight");
  net->zero_grad();
  loss(su, ss).backward();
  const auto qgrad = q.grad().clone();
  auto f = [&](const torch::Tensor&) { return loss(su, ss); };
  EXPECT_LT(max_fd_relative_error(f, q.detach(), qgrad, 1e-5, 30, 3), 1e-3);
}

}  // namespace
}  // namespace osfpi

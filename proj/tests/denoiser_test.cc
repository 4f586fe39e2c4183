// Copyright 2026 The dpldm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpldm/denoiser.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dpldm/error.h"
#include "dpldm/parallel.h"
#include "dpldm/rng.h"
#include "grad_check.h"

namespace dpldm {
namespace {

Tensor RandomTensor(std::vector<int> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.FillNormal(t.values());
  return t;
}

NetConfig TinyConfig() {
  NetConfig cfg;
  cfg.latent_channels = 4;
  cfg.base_width = 8;
  cfg.embed_dim = 8;
  cfg.norm_groups = 4;
  cfg.blocks_per_level = 1;
  return cfg;
}

template <typename F>
void ExpectCode(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "no error thrown";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

TEST(DenoiserTest, ParameterCountDefaultConfig) {
  // Counted by hand from the architecture: embedding MLP 2*(64*64+64),
  // in_conv 32*16*9+32, two level-0 blocks of 2*(32*32*9+32) + 4*32 +
  // (32*64+32), down 64*32*9+64, two level-1 blocks likewise at width 64,
  // up 32*64*9+32, out_norm 2*32, out_conv 16*32*9+16.
  const NetConfig cfg;
  const ParamStore p = InitParams(cfg, 1);
  EXPECT_EQ(p.total_size(), 252560u);

  NetConfig cond = cfg;
  cond.num_classes = 4;
  cond.layout_conditioned = true;
  // + (K+1)*64 class rows and 16 extra input channels on in_conv.
  EXPECT_EQ(InitParams(cond, 1).total_size(), 252560u + 5 * 64 + 32 * 16 * 9);
}

TEST(DenoiserTest, LayoutMatchesStore) {
  NetConfig cfg = TinyConfig();
  cfg.num_classes = 3;
  const ParamStore p = InitParams(cfg, 3);
  const auto layout = ParamLayout(cfg);
  ASSERT_EQ(layout.size(), p.entries().size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    EXPECT_EQ(layout[i].first, p.entries()[i].name);
    EXPECT_EQ(layout[i].second, p.entries()[i].shape);
  }
  EXPECT_EQ(p.Entry("class_emb.weight").shape, (std::vector<int>{4, 8}));
}

TEST(DenoiserTest, InitIsSeeded) {
  const NetConfig cfg = TinyConfig();
  EXPECT_EQ(InitParams(cfg, 5), InitParams(cfg, 5));
  EXPECT_FALSE(InitParams(cfg, 5) == InitParams(cfg, 6));
  const ParamStore p = InitParams(cfg, 5);
  for (double v : p.Get("in_conv.bias")) EXPECT_EQ(v, 0.0);
  for (double v : p.Get("out_norm.weight")) EXPECT_EQ(v, 1.0);
  // Fan-in bound for in_conv: 1 / sqrt(4 * 9).
  for (double v : p.Get("in_conv.weight")) EXPECT_LE(std::abs(v), 1.0 / 6.0);
}

TEST(DenoiserTest, TimestepEmbedding) {
  const std::vector<double> e0 = TimestepEmbedding(0, 8);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(e0[k], 0.0);
    EXPECT_EQ(e0[4 + k], 1.0);
  }
  const std::vector<double> e = TimestepEmbedding(7, 8);
  EXPECT_DOUBLE_EQ(e[0], std::sin(7.0));
  EXPECT_DOUBLE_EQ(e[4], std::cos(7.0));
  EXPECT_NEAR(e[2], std::sin(7.0 / 100.0), 1e-15);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(e[k] * e[k] + e[4 + k] * e[4 + k], 1.0, 1e-15);
  }
}

TEST(DenoiserTest, ConfigValidation) {
  NetConfig cfg = TinyConfig();
  cfg.base_width = 0;
  ExpectCode(ErrorCode::kInvalidArgument, [&] { cfg.Validate(); });
  cfg = TinyConfig();
  cfg.embed_dim = 7;
  ExpectCode(ErrorCode::kInvalidArgument, [&] { cfg.Validate(); });
  cfg = TinyConfig();
  cfg.norm_groups = 3;
  ExpectCode(ErrorCode::kInvalidArgument, [&] { cfg.Validate(); });
  cfg = TinyConfig();
  ExpectCode(ErrorCode::kShapeMismatch, [&] { cfg.ValidateSpatial(5, 8); });
  cfg.ValidateSpatial(8, 4);
}

TEST(DenoiserTest, RejectsForeignStore) {
  NetConfig a = TinyConfig();
  NetConfig b = a;
  b.num_classes = 2;
  const ParamStore p = InitParams(a, 1);
  ExpectCode(ErrorCode::kShapeMismatch, [&] { Denoiser net(b, p); });
}

TEST(DenoiserTest, ConditioningMismatches) {
  NetConfig cfg = TinyConfig();
  cfg.num_classes = 2;
  cfg.layout_conditioned = true;
  cfg.mask_channels = 4;
  const ParamStore p = InitParams(cfg, 1);
  const Denoiser net(cfg, p);
  const Tensor z = RandomTensor({4, 8, 8}, 1);
  const Tensor mask = RandomTensor({4, 8, 8}, 2);
  const Tensor bad_mask = RandomTensor({4, 4, 8}, 2);
  EXPECT_EQ(net.Forward(z, 5, ClassLabel::Of(1, 2), &mask).shape(), z.shape());
  ExpectCode(ErrorCode::kInvalidArgument,
             [&] { net.Forward(z, 5, ClassLabel::Of(1, 2), nullptr); });
  ExpectCode(ErrorCode::kShapeMismatch,
             [&] { net.Forward(z, 5, ClassLabel::Of(1, 2), &bad_mask); });
  ExpectCode(ErrorCode::kShapeMismatch, [&] {
    net.Forward(RandomTensor({3, 8, 8}, 1), 5, ClassLabel::Null(), &mask);
  });
  ExpectCode(ErrorCode::kOutOfRange,
             [&] { net.Forward(z, 5, ClassLabel::Of(2, 3), &mask); });

  const NetConfig plain = TinyConfig();
  const ParamStore q = InitParams(plain, 1);
  const Denoiser uncond(plain, q);
  ExpectCode(ErrorCode::kInvalidArgument,
             [&] { uncond.Forward(z, 5, ClassLabel::Of(0, 2), nullptr); });
  ExpectCode(ErrorCode::kInvalidArgument,
             [&] { uncond.Forward(z, 5, ClassLabel::Null(), &mask); });
}

TEST(DenoiserTest, LabelAndMaskChangeOutput) {
  NetConfig cfg = TinyConfig();
  cfg.num_classes = 2;
  cfg.layout_conditioned = true;
  cfg.mask_channels = 4;
  ParamStore p = InitParams(cfg, 1);
  Rng rng(9);
  // Random class rows; the initial table is already random but make sure.
  for (double& v : p.Get("class_emb.weight")) v = rng.Normal();
  const Denoiser net(cfg, p);
  const Tensor z = RandomTensor({4, 8, 8}, 1);
  const Tensor m1 = RandomTensor({4, 8, 8}, 2);
  const Tensor m2 = RandomTensor({4, 8, 8}, 3);
  const Tensor a = net.Forward(z, 10, ClassLabel::Of(0, 2), &m1);
  EXPECT_EQ(a, net.Forward(z, 10, ClassLabel::Of(0, 2), &m1));
  EXPECT_FALSE(a == net.Forward(z, 10, ClassLabel::Of(1, 2), &m1));
  EXPECT_FALSE(a == net.Forward(z, 10, ClassLabel::Null(), &m1));
  EXPECT_FALSE(a == net.Forward(z, 10, ClassLabel::Of(0, 2), &m2));
  EXPECT_FALSE(a == net.Forward(z, 11, ClassLabel::Of(0, 2), &m1));
}

TEST(DenoiserTest, LossMatchesForward) {
  const NetConfig cfg = TinyConfig();
  const ParamStore p = InitParams(cfg, 2);
  const Denoiser net(cfg, p);
  const Tensor z = RandomTensor({4, 8, 8}, 1);
  const Tensor eps = RandomTensor({4, 8, 8}, 2);
  std::vector<double> g(p.total_size(), 0.0);
  const double loss = net.LossAndGrad(z, 3, ClassLabel::Null(), nullptr, eps,
                                      1.0, g);
  EXPECT_DOUBLE_EQ(loss,
                   SimplifiedLoss(net.Forward(z, 3, ClassLabel::Null(), nullptr),
                                  eps));
  // `scale` multiplies and accumulates.
  std::vector<double> g2(p.total_size(), 0.0);
  net.LossAndGrad(z, 3, ClassLabel::Null(), nullptr, eps, 2.0, g2);
  net.LossAndGrad(z, 3, ClassLabel::Null(), nullptr, eps, 1.0, g2);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g2[i], 3.0 * g[i], 1e-14);
  std::vector<double> short_grad(3);
  ExpectCode(ErrorCode::kShapeMismatch, [&] {
    net.LossAndGrad(z, 3, ClassLabel::Null(), nullptr, eps, 1.0, short_grad);
  });
}

TEST(DenoiserGradTest, MatchesFiniteDifferences) {
  std::uint64_t seed = 100;
  for (const NetConfig& cfg : testing::GradCheckConfigs()) {
    const int side = 1 << (cfg.levels - 1);
    const testing::GradCheckResult r =
        testing::CheckGradients(cfg, 2 * side, 2 * side, seed++);
    EXPECT_LT(r.worst_rel, 1e-4)
        << "worst coordinate " << r.worst_param << " of " << r.coordinates;
    EXPECT_EQ(r.coordinates, InitParams(cfg, 0).total_size());
  }
}

TEST(DenoiserGradTest, PerSampleIndependentOfBatch) {
  NetConfig cfg = TinyConfig();
  cfg.num_classes = 2;
  const ParamStore p = InitParams(cfg, 4);
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  std::vector<DiffusionExample> batch;
  for (int i = 0; i < 5; ++i) {
    DiffusionExample ex;
    ex.z0 = RandomTensor({4, 4, 4}, 10 + i);
    ex.eps = RandomTensor({4, 4, 4}, 20 + i);
    ex.t = 1 + 199 * i;
    ex.label = i % 3 == 2 ? ClassLabel::Null() : ClassLabel::Of(i % 2, 2);
    batch.push_back(ex);
  }
  // Duplicate of element 1 at the end.
  batch.push_back(batch[1]);
  SetThreadCount(3);
  const PerSampleGrads all = LossAndPerSampleGrads(cfg, p, s, batch);
  SetThreadCount(1);
  ASSERT_EQ(all.grads.size(), 6u);
  EXPECT_EQ(all.grads[1], all.grads[5]);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PerSampleGrads one = LossAndPerSampleGrads(
        cfg, p, s, std::span<const DiffusionExample>(&batch[i], 1));
    EXPECT_EQ(one.grads[0], all.grads[i]) << i;
    EXPECT_EQ(one.losses[0], all.losses[i]) << i;
  }
  EXPECT_THROW(LossAndPerSampleGrads(cfg, p, s, {}), Error);
}

TEST(DenoiserGradTest, FrozenEntriesLeaveCompactGradient) {
  const NetConfig cfg = TinyConfig();
  ParamStore p = InitParams(cfg, 4);
  const std::size_t full = p.unfrozen_size();
  EXPECT_EQ(p.SetFrozenPrefix(kTimeEmbeddingPrefix, true), 4);
  EXPECT_EQ(p.unfrozen_size(), full - 2 * (8 * 8 + 8));
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  DiffusionExample ex;
  ex.z0 = RandomTensor({4, 4, 4}, 1);
  ex.eps = RandomTensor({4, 4, 4}, 2);
  ex.t = 50;
  const PerSampleGrads g =
      LossAndPerSampleGrads(cfg, p, s, std::span<const DiffusionExample>(&ex, 1));
  EXPECT_EQ(g.grads[0].size(), p.unfrozen_size());
}

}  // namespace
}  // namespace dpldm

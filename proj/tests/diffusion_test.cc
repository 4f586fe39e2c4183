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

#include "dpldm/diffusion.h"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dpldm/error.h"
#include "dpldm/parallel.h"
#include "dpldm/rng.h"

namespace dpldm {
namespace {

// Product oracle for abar_t in extended precision, from the interpolation
// formula rather than from the schedule object.
long double AlphaBarOracle(int t) {
  long double prod = 1.0L;
  for (int k = 1; k <= t; ++k) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (k - 1) / 999.0L;
    prod *= 1.0L - beta;
  }
  return prod;
}

Tensor RandomTensor(std::vector<int> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.FillNormal(t.values());
  return t;
}

TEST(NoiseScheduleTest, LinearEndpoints) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  EXPECT_EQ(s.T(), 1000);
  EXPECT_EQ(s.beta(1), 1e-4);
  EXPECT_EQ(s.beta(1000), 0.02);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 1.0 - 1e-4);
}

TEST(NoiseScheduleTest, SingleStep) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 1e-4, 1);
  ASSERT_EQ(s.alpha_bars().size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bars()[0], 0.9999);
}

TEST(NoiseScheduleTest, AlphaBarMatchesProductOracle) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  for (int t : {1, 2, 10, 250, 500, 999, 1000}) {
    const double oracle = static_cast<double>(AlphaBarOracle(t));
    EXPECT_NEAR(s.alpha_bar(t), oracle, 1e-12 * oracle) << "t=" << t;
  }
}

TEST(NoiseScheduleTest, Invariants) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  for (int t = 1; t <= s.T(); ++t) {
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LE(s.beta(t), 0.02);
    EXPECT_EQ(s.alpha(t), 1.0 - s.beta(t));
    if (t > 1) {
      EXPECT_GE(s.beta(t), s.beta(t - 1));
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
  }
  EXPECT_GT(s.alpha_bar(1000), 0.0);
  EXPECT_LT(s.alpha_bar(1000), 1.0);
}

TEST(NoiseScheduleTest, RejectsBadInput) {
  EXPECT_THROW(MakeLinearSchedule(0.0, 0.02, 10), Error);
  EXPECT_THROW(MakeLinearSchedule(0.03, 0.02, 10), Error);
  EXPECT_THROW(MakeLinearSchedule(1e-4, 1.0, 10), Error);
  EXPECT_THROW(MakeLinearSchedule(1e-4, 0.02, 0), Error);
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 10);
  EXPECT_THROW(s.beta(0), Error);
  EXPECT_THROW(s.beta(11), Error);
}

TEST(ForwardSampleTest, ZeroNoiseAndZeroSignal) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const Tensor x0 = RandomTensor({2, 3, 3}, 1);
  const Tensor zero({2, 3, 3});
  const Tensor a = ForwardSample(s, x0, 300, zero);
  const Tensor b = ForwardSample(s, zero, 300, x0);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    EXPECT_EQ(a[i], std::sqrt(s.alpha_bar(300)) * x0[i]);
    EXPECT_EQ(b[i], std::sqrt(1.0 - s.alpha_bar(300)) * x0[i]);
  }
}

TEST(ForwardSampleTest, ScalarAgainstOracle) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const Tensor one({1}, 1.0);
  const long double ab = AlphaBarOracle(500);
  const double expected = static_cast<double>(std::sqrt(ab) + std::sqrt(1.0L - ab));
  EXPECT_NEAR(ForwardSample(s, one, 500, one)[0], expected, 1e-12);
}

TEST(ForwardSampleTest, EmpiricalVariance) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const Tensor x0({1});
  Rng rng(42);
  for (int t : {10, 200, 700}) {
    double sum = 0.0, sq = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const Tensor eps({1}, rng.Normal());
      const double v = ForwardSample(s, x0, t, eps)[0];
      sum += v;
      sq += v * v;
    }
    const double var = sq / n - (sum / n) * (sum / n);
    EXPECT_NEAR(var / (1.0 - s.alpha_bar(t)), 1.0, 0.05) << "t=" << t;
  }
}

TEST(ForwardSampleTest, Errors) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 10);
  const Tensor x({2}), e3({3});
  EXPECT_THROW(ForwardSample(s, x, 0, x), Error);
  EXPECT_THROW(ForwardSample(s, x, 11, x), Error);
  EXPECT_THROW(ForwardSample(s, x, 1, e3), Error);
}

TEST(SimplifiedLossTest, Cases) {
  const Tensor a = RandomTensor({2, 1, 4, 4}, 3);
  const Tensor b = RandomTensor({2, 1, 4, 4}, 4);
  EXPECT_EQ(SimplifiedLoss(a, a), 0.0);
  double sq = 0.0;
  for (double v : a.values()) sq += v * v;
  EXPECT_NEAR(SimplifiedLoss(a, Tensor({2, 1, 4, 4})), sq / 32.0, 1e-12);
  double brute = 0.0;
  for (int i = 0; i < 32; ++i) brute += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(SimplifiedLoss(a, b), brute / 32.0, 1e-12);
  EXPECT_THROW(SimplifiedLoss(a, Tensor({32})), Error);
}

TEST(PosteriorMeanTest, Cases) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const Tensor x = RandomTensor({5}, 7);
  const Tensor zero({5});
  const Tensor m0 = PosteriorMeanFromEps(s, x, 400, zero);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(m0[i], x[i] / std::sqrt(s.alpha(400)), 1e-15);

  // Independent route: the posterior mean written in terms of the implied x0.
  const Tensor eps = RandomTensor({5}, 8);
  for (int t : {2, 37, 640}) {
    const Tensor m = PosteriorMeanFromEps(s, x, t, eps);
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), beta = s.beta(t);
    for (int i = 0; i < 5; ++i) {
      const double x0 = (x[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
      const double oracle = std::sqrt(ab_prev) * beta / (1.0 - ab) * x0 +
                            std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab) * x[i];
      EXPECT_NEAR(m[i], oracle, 1e-10) << "t=" << t;
    }
  }
  // At t = 1 the mean of a forward sample built with the true noise is x0.
  const Tensor x0 = RandomTensor({5}, 9);
  const Tensor x1 = ForwardSample(s, x0, 1, eps);
  const Tensor back = PosteriorMeanFromEps(s, x1, 1, eps);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(back[i], x0[i], 1e-12);
  EXPECT_THROW(PosteriorMeanFromEps(s, x, 0, eps), Error);
}

TEST(RespacingTest, Identity) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const RespacedSchedule r = MakeRespaced(s, 1000);
  for (int i = 1; i <= 1000; ++i) {
    EXPECT_EQ(r.tau(i), i);
    EXPECT_EQ(r.beta(i), s.beta(i));
  }
}

TEST(RespacingTest, SingleStepAndTwoHundred) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const RespacedSchedule one = MakeRespaced(s, 1);
  ASSERT_EQ(one.steps(), 1);
  EXPECT_EQ(one.tau(1), 1000);
  EXPECT_DOUBLE_EQ(one.beta(1), 1.0 - s.alpha_bar(1000));

  const RespacedSchedule r = MakeRespaced(s, 200);
  ASSERT_EQ(r.steps(), 200);
  EXPECT_EQ(r.tau(1), 5);
  EXPECT_EQ(r.tau(200), 1000);
  for (int i = 2; i <= 200; ++i) {
    EXPECT_EQ(r.tau(i) - r.tau(i - 1), 5);
    const double eb = 1.0 - s.alpha_bar(r.tau(i)) / s.alpha_bar(r.tau(i - 1));
    EXPECT_NEAR(r.beta(i), eb, 1e-15);
    EXPECT_GT(r.beta(i), 0.0);
    EXPECT_LT(r.beta(i), 1.0);
  }
  EXPECT_THROW(MakeRespaced(s, 0), Error);
  EXPECT_THROW(MakeRespaced(s, 1001), Error);
}

TEST(ReverseStepTest, FinalStepAndZeroNoise) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const Tensor x = RandomTensor({4}, 10), eps = RandomTensor({4}, 11);
  const Tensor z = RandomTensor({4}, 12), zero({4});
  EXPECT_EQ(ReverseStep(s, x, 1, eps, z), PosteriorMeanFromEps(s, x, 1, eps));
  EXPECT_EQ(ReverseStep(s, x, 300, eps, zero), PosteriorMeanFromEps(s, x, 300, eps));
  const Tensor noisy = ReverseStep(s, x, 300, eps, z);
  const Tensor mean = PosteriorMeanFromEps(s, x, 300, eps);
  const double sd = std::sqrt((1.0 - s.alpha_bar(299)) / (1.0 - s.alpha_bar(300)) * s.beta(300));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(noisy[i], mean[i] + sd * z[i], 1e-14);
  const Tensor beta_var = ReverseStep(s, x, 300, eps, z, ReverseVariance::kBeta);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(beta_var[i], mean[i] + std::sqrt(s.beta(300)) * z[i], 1e-14);
  }
  EXPECT_THROW(ReverseStep(s, x, 1001, eps, z), Error);
}

TEST(ReverseStepTest, PosteriorVarianceAtFirstStep) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const RespacedSchedule r = MakeRespaced(s, 1000);
  // abar_0 = 1, so beta-tilde_1 = 0.
  EXPECT_EQ(PosteriorVariance(r, 1, ReverseVariance::kPosterior), 0.0);
  const double oracle = (1.0 - s.alpha_bar(1)) / (1.0 - s.alpha_bar(2)) * s.beta(2);
  EXPECT_NEAR(PosteriorVariance(r, 2, ReverseVariance::kPosterior), oracle, 1e-18);
  EXPECT_EQ(PosteriorVariance(r, 2, ReverseVariance::kBeta), s.beta(2));
}

// A stub that always reports the true noise of a fixed x0 makes every
// reverse step land exactly on the forward trajectory.
TEST(DdpmSampleTest, TeacherForcingRecoversX0) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 1000);
  const Tensor x0 = RandomTensor({2, 3, 3}, 20);
  const RespacedSchedule r = MakeRespaced(s, 1000);
  Tensor x = ForwardSample(s, x0, 1000, RandomTensor({2, 3, 3}, 21));
  const Tensor zero({2, 3, 3});
  for (int t = 1000; t >= 1; --t) {
    Tensor eps(x.shape());
    const double ab = s.alpha_bar(t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      eps[i] = (x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
    }
    x = ReverseStep(r, x, t, eps, zero);
  }
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], x0[i], 1e-3);
}

TEST(DdpmSampleTest, DeterministicAndThreadIndependent) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 100);
  const RespacedSchedule r = MakeRespaced(s, 20);
  DenoiserHandle model = [](const Tensor& x, int t, int i) {
    Tensor out = x;
    for (double& v : out.values()) v = 0.1 * v + 0.001 * t + 0.01 * i;
    return out;
  };
  SetThreadCount(1);
  const auto a = DdpmSample(model, r, {1, 2, 2}, 6, 99);
  const auto b = DdpmSample(model, r, {1, 2, 2}, 6, 99);
  SetThreadCount(3);
  const auto c = DdpmSample(model, r, {1, 2, 2}, 6, 99);
  SetThreadCount(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_NE(a[0], a[1]);
  EXPECT_TRUE(DdpmSample(model, r, {1, 2, 2}, 0, 99).empty());
}

TEST(DdpmSampleTest, PropagatesModelErrors) {
  const NoiseSchedule s = MakeLinearSchedule(1e-4, 0.02, 10);
  const RespacedSchedule r = MakeRespaced(s, 10);
  DenoiserHandle bad = [](const Tensor&, int, int) -> Tensor {
    Fail(ErrorCode::kShapeMismatch, "stub failure");
  };
  EXPECT_THROW(DdpmSample(bad, r, {1}, 2, 1), Error);
}

}  // namespace
}  // namespace dpldm

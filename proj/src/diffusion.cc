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

#include <cmath>
#include <string>
#include <utility>

#include "dpldm/error.h"
#include "dpldm/parallel.h"
#include "dpldm/rng.h"

namespace dpldm {
namespace {

void CheckTimestep(int t, int T) {
  if (t < 1 || t > T) {
    Fail(ErrorCode::kOutOfRange, "timestep " + std::to_string(t) +
                                     " outside [1, " + std::to_string(T) + "]");
  }
}

// Shared by the full and respaced chains: mean of p(x_{t-1} | x_t) given the
// step's beta and cumulative alpha-bar.
Tensor MeanFromEps(double beta, double alpha_bar, const Tensor& x_t,
                   const Tensor& eps_pred) {
  RequireSameShape(x_t, eps_pred, "posterior mean");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
  const double eps_coef = beta / std::sqrt(1.0 - alpha_bar);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_pred[i]);
  }
  return out;
}

}  // namespace

NoiseSchedule NoiseSchedule::FromBetas(std::vector<double> betas) {
  Require(!betas.empty(), ErrorCode::kInvalidArgument, "schedule needs T >= 1");
  NoiseSchedule s;
  s.betas_ = std::move(betas);
  s.alphas_.resize(s.betas_.size());
  s.alpha_bars_.resize(s.betas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.betas_.size(); ++i) {
    const double b = s.betas_[i];
    Require(std::isfinite(b) && b > 0.0 && b < 1.0, ErrorCode::kInvalidArgument,
            "betas must lie in (0, 1)");
    s.alphas_[i] = 1.0 - b;
    prod *= s.alphas_[i];
    s.alpha_bars_[i] = prod;
  }
  return s;
}

double NoiseSchedule::beta(int t) const {
  CheckTimestep(t, T());
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  CheckTimestep(t, T());
  return alphas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  CheckTimestep(t, T());
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule MakeLinearSchedule(double beta_start, double beta_end, int T) {
  Require(T >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
  Require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          ErrorCode::kInvalidArgument,
          "linear schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    betas[static_cast<std::size_t>(i)] =
        T == 1 ? beta_start
               : beta_start + (beta_end - beta_start) * i / (T - 1);
  }
  betas.back() = beta_end;
  return NoiseSchedule::FromBetas(std::move(betas));
}

RespacedSchedule::RespacedSchedule(NoiseSchedule parent, std::vector<int> taus)
    : parent_(std::move(parent)), taus_(std::move(taus)) {
  Require(!taus_.empty(), ErrorCode::kInvalidArgument, "empty respacing");
  Require(taus_.back() == parent_.T(), ErrorCode::kInvalidArgument,
          "respacing must end at T");
  effective_betas_.resize(taus_.size());
  int prev = 0;
  for (std::size_t i = 0; i < taus_.size(); ++i) {
    Require(taus_[i] > prev && taus_[i] <= parent_.T(),
            ErrorCode::kInvalidArgument,
            "respaced timesteps must be strictly increasing within [1, T]");
    // Adjacent steps keep the parent's beta exactly.
    effective_betas_[i] =
        taus_[i] == prev + 1
            ? parent_.beta(taus_[i])
            : 1.0 - parent_.alpha_bar(taus_[i]) / parent_.alpha_bar(prev);
    prev = taus_[i];
  }
}

int RespacedSchedule::tau(int index) const {
  CheckTimestep(index, steps());
  return taus_[static_cast<std::size_t>(index - 1)];
}

double RespacedSchedule::beta(int index) const {
  CheckTimestep(index, steps());
  return effective_betas_[static_cast<std::size_t>(index - 1)];
}

double RespacedSchedule::alpha_bar(int index) const {
  return parent_.alpha_bar(tau(index));
}

double RespacedSchedule::alpha_bar_prev(int index) const {
  CheckTimestep(index, steps());
  return index == 1 ? 1.0 : parent_.alpha_bar(tau(index - 1));
}

RespacedSchedule MakeRespaced(const NoiseSchedule& s, int steps) {
  const int T = s.T();
  if (steps < 1 || steps > T) {
    Fail(ErrorCode::kOutOfRange, "sampler steps " + std::to_string(steps) +
                                     " outside [1, " + std::to_string(T) + "]");
  }
  std::vector<int> taus(static_cast<std::size_t>(steps));
  for (int i = 1; i <= steps; ++i) {
    taus[static_cast<std::size_t>(i - 1)] =
        static_cast<int>(static_cast<long long>(i) * T / steps);
  }
  return RespacedSchedule(s, std::move(taus));
}

Tensor ForwardSample(const NoiseSchedule& s, const Tensor& x0, int t,
                     const Tensor& eps) {
  CheckTimestep(t, s.T());
  RequireSameShape(x0, eps, "forward sample");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

double SimplifiedLoss(const Tensor& eps_true, const Tensor& eps_pred) {
  RequireSameShape(eps_true, eps_pred, "simplified loss");
  Require(!eps_true.empty(), ErrorCode::kInvalidArgument, "empty loss input");
  double sum = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) {
    const double d = eps_true[i] - eps_pred[i];
    sum += d * d;
  }
  return sum / static_cast<double>(eps_true.size());
}

Tensor PosteriorMeanFromEps(const NoiseSchedule& s, const Tensor& x_t, int t,
                            const Tensor& eps_pred) {
  CheckTimestep(t, s.T());
  return MeanFromEps(s.beta(t), s.alpha_bar(t), x_t, eps_pred);
}

double PosteriorVariance(const RespacedSchedule& s, int index,
                         ReverseVariance kind) {
  const double beta = s.beta(index);
  if (kind == ReverseVariance::kBeta) return beta;
  return (1.0 - s.alpha_bar_prev(index)) / (1.0 - s.alpha_bar(index)) * beta;
}

Tensor ReverseStep(const RespacedSchedule& s, const Tensor& x_t, int index,
                   const Tensor& eps_pred, const Tensor& z,
                   ReverseVariance kind) {
  Tensor mean = MeanFromEps(s.beta(index), s.alpha_bar(index), x_t, eps_pred);
  if (index == 1) return mean;
  RequireSameShape(x_t, z, "reverse step noise");
  const double sigma = std::sqrt(PosteriorVariance(s, index, kind));
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sigma * z[i];
  return mean;
}

Tensor ReverseStep(const NoiseSchedule& s, const Tensor& x_t, int t,
                   const Tensor& eps_pred, const Tensor& z,
                   ReverseVariance kind) {
  CheckTimestep(t, s.T());
  Tensor mean = MeanFromEps(s.beta(t), s.alpha_bar(t), x_t, eps_pred);
  if (t == 1) return mean;
  RequireSameShape(x_t, z, "reverse step noise");
  double var = s.beta(t);
  if (kind == ReverseVariance::kPosterior) {
    var *= (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
  }
  const double sigma = std::sqrt(var);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sigma * z[i];
  return mean;
}

std::vector<Tensor> DdpmSample(const DenoiserHandle& model,
                               const RespacedSchedule& s,
                               const std::vector<int>& shape, int n,
                               std::uint64_t seed, ReverseVariance kind) {
  Require(n >= 0, ErrorCode::kInvalidArgument, "negative sample count");
  std::vector<Tensor> out(static_cast<std::size_t>(n));
  ParallelFor(n, [&](int i) {
    Rng rng = Rng::Stream(seed, StreamTag::kSampler,
                          {static_cast<std::uint64_t>(i)});
    Tensor x(shape);
    rng.FillNormal(x.values());
    Tensor z(shape);
    for (int index = s.steps(); index >= 1; --index) {
      Tensor eps = model(x, s.tau(index), i);
      if (index > 1) rng.FillNormal(z.values());
      x = ReverseStep(s, x, index, eps, z, kind);
    }
    out[static_cast<std::size_t>(i)] = std::move(x);
  });
  return out;
}

}  // namespace dpldm

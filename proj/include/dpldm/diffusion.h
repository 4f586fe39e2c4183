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

#ifndef DPLDM_DIFFUSION_H_
#define DPLDM_DIFFUSION_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "dpldm/tensor.h"

namespace dpldm {

// Discrete DDPM variance schedule. Timesteps are 1-based: t in [1, T].
// alpha_bar(0) == 1 denotes the clean sample.
class NoiseSchedule {
 public:
  // Builds a schedule from explicit betas (betas[0] is beta_1).
  static NoiseSchedule FromBetas(std::vector<double> betas);

  int T() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

// Betas linearly interpolated from beta_start to beta_end, both inclusive.
NoiseSchedule MakeLinearSchedule(double beta_start, double beta_end, int T);

// A strictly increasing subsequence of parent timesteps ending at T, with the
// betas of the induced shorter chain. Indices into it are 1-based as well.
class RespacedSchedule {
 public:
  RespacedSchedule(NoiseSchedule parent, std::vector<int> taus);

  int steps() const { return static_cast<int>(taus_.size()); }
  const NoiseSchedule& parent() const { return parent_; }
  const std::vector<int>& taus() const { return taus_; }
  const std::vector<double>& effective_betas() const { return effective_betas_; }

  int tau(int index) const;
  double beta(int index) const;
  double alpha_bar(int index) const;
  double alpha_bar_prev(int index) const;

 private:
  NoiseSchedule parent_;
  std::vector<int> taus_;
  std::vector<double> effective_betas_;
};

// Evenly spaced respacing: tau_i = floor(i * T / steps), i = 1..steps.
RespacedSchedule MakeRespaced(const NoiseSchedule& s, int steps);

enum class ReverseVariance {
  kPosterior,  // beta-tilde = (1 - abar_prev) / (1 - abar) * beta
  kBeta,       // beta
};

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
Tensor ForwardSample(const NoiseSchedule& s, const Tensor& x0, int t,
                     const Tensor& eps);

// Mean squared error over every element of the (batched) tensors.
double SimplifiedLoss(const Tensor& eps_true, const Tensor& eps_pred);

// (1/sqrt(alpha_t)) * (x_t - beta_t / sqrt(1 - abar_t) * eps_pred).
Tensor PosteriorMeanFromEps(const NoiseSchedule& s, const Tensor& x_t, int t,
                            const Tensor& eps_pred);

double PosteriorVariance(const RespacedSchedule& s, int index,
                         ReverseVariance kind);

// One ancestral step x_t -> x_{t-1}. `z` is ignored at index 1.
Tensor ReverseStep(const RespacedSchedule& s, const Tensor& x_t, int index,
                   const Tensor& eps_pred, const Tensor& z,
                   ReverseVariance kind = ReverseVariance::kPosterior);
Tensor ReverseStep(const NoiseSchedule& s, const Tensor& x_t, int t,
                   const Tensor& eps_pred, const Tensor& z,
                   ReverseVariance kind = ReverseVariance::kPosterior);

// Noise predictor used by the sampler. Receives the current sample, the
// parent-schedule timestep, and the index of the sample in the batch so the
// handle can look up that sample's conditioning.
using DenoiserHandle =
    std::function<Tensor(const Tensor& x_t, int t, int sample_index)>;

// Ancestral sampling of n tensors of `shape` starting from pure noise. Every
// sample draws from its own stream derived from (seed, sample index), so the
// output is independent of the worker count.
std::vector<Tensor> DdpmSample(
    const DenoiserHandle& model, const RespacedSchedule& s,
    const std::vector<int>& shape, int n, std::uint64_t seed,
    ReverseVariance kind = ReverseVariance::kPosterior);

}  // namespace dpldm

#endif  // DPLDM_DIFFUSION_H_

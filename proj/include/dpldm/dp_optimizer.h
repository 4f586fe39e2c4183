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

#ifndef DPLDM_DP_OPTIMIZER_H_
#define DPLDM_DP_OPTIMIZER_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dpldm/denoiser.h"
#include "dpldm/diffusion.h"
#include "dpldm/param_store.h"
#include "dpldm/privacy_accounting.h"
#include "dpldm/rng.h"
#include "dpldm/tensor.h"

namespace dpldm {

enum class Strategy { kCondCfg, kPerLabel };
enum class Algorithm { kDpdm, kDpPromise };

std::string_view StrategyName(Strategy s);
Strategy ParseStrategy(std::string_view name);
std::string_view AlgorithmName(Algorithm a);
Algorithm ParseAlgorithm(std::string_view name);

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct DPTrainConfig {
  double clip = 0.01;
  // Expected batch size B; the sampling rate is q = min(1, B / N).
  int batch_size = 1096;
  // Noise multiplier. Unset means "calibrate from the budget".
  std::optional<double> sigma;
  int noise_multiplicity = 1;
  AdamOptions adam;
  double epochs = 50.0;
  double cfg_drop_p = 0.1;
  Strategy strategy = Strategy::kPerLabel;
  Algorithm algorithm = Algorithm::kDpdm;
  // DP-Promise phase 1. Negative values select the defaults: 10% of epochs
  // and t_split = 0.9 T.
  double phase1_epochs = -1.0;
  int t_split = -1;
  bool freeze_time_embedding = true;
  // Re-checks every clipped norm against C (test mode).
  bool verify_clipping = false;

  void Validate() const;
};

// One private training record in codec space.
struct LatentExample {
  Tensor z0;
  int label = 0;
  std::optional<Tensor> mask_latent;
};

enum class LabelMode {
  kNull,         // unconditional: always the null label
  kConditional,  // true label, replaced by null with probability cfg_drop_p
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

AdamState MakeAdamState(const ParamStore& params);

// Each index in [0, N) is included independently with probability q.
std::vector<int> PoissonSample(int n, double q, Rng& rng);

// g * min(1, C / ||g||). Throws kNonFinite on non-finite input.
std::vector<double> ClipGradient(std::span<const double> g, double clip);

// (1 / B) * sum(clipped) + (C / B) * sigma * z,  z ~ N(0, I).
std::vector<double> NoisyAggregate(
    std::span<const std::vector<double>> clipped, std::size_t dim, double clip,
    double sigma, int expected_batch, Rng& rng);

// Turns an already-summed batch into the noisy average above.
std::vector<double> FinishNoisyAggregate(std::vector<double> sum,
                                         std::size_t count, double clip,
                                         double sigma, int expected_batch,
                                         Rng& rng);

struct MultiplicityLoss {
  double loss = 0.0;
  std::vector<double> grad;  // unfrozen parameters, store order
};

// Averages K independent simplified-loss draws (t uniform on [t_min, T],
// fresh eps each) for one sample, and returns the gradient of the average.
MultiplicityLoss DpdmMultiplicityLoss(const Denoiser& net,
                                      const ParamStore& params,
                                      const NoiseSchedule& schedule,
                                      const LatentExample& example,
                                      const ClassLabel& label, int k, Rng& rng,
                                      int t_min = 1);

// Bias-corrected Adam step on the unfrozen parameters. Throws kNonFinite
// (leaving parameters untouched) if any update is not finite.
void AdamUpdate(ParamStore& params, std::span<const double> grad,
                AdamState& state, const AdamOptions& opts);

struct TrainResult {
  ParamStore params;
  double sigma = 0.0;
  double q = 0.0;
  double delta = 0.0;
  long steps = 0;
  AccountantKind accountant = AccountantKind::kRdp;
  std::vector<double> epsilon_trace;  // spend after each completed step
  std::vector<double> loss_trace;     // mean per-sample loss per step
  std::vector<int> batch_sizes;
  double max_clipped_norm = 0.0;
  double consumed_epsilon = 0.0;
  long phase1_steps = 0;
};

struct TrainContext {
  NetConfig net;
  const NoiseSchedule* schedule = nullptr;
  std::uint64_t seed = 0;
};

// DP-Adam with noise multiplicity. The noise multiplier comes from
// cfg.sigma or, when unset, from calibrating `budget` with the accountant.
// Every step checks the accountant before applying the update and throws
// kBudgetExceeded instead of applying an update that would overspend.
TrainResult TrainDpdm(const DPTrainConfig& cfg, const TrainContext& ctx,
                      ParamStore params, std::span<const LatentExample> data,
                      std::optional<PrivacyBudget> budget, AccountantKind kind,
                      LabelMode label_mode);

struct NonPrivateOptions {
  double epochs = 1.0;
  int batch_size = 32;
  AdamOptions adam;
  int t_min = 1;
  LabelMode label_mode = LabelMode::kNull;
  double cfg_drop_p = 0.0;
};

// Ordinary minibatch Adam on the mean loss (used for public pretraining and
// the DP-Promise high-noise phase).
TrainResult TrainNonPrivate(const NonPrivateOptions& opts,
                            const TrainContext& ctx, ParamStore params,
                            std::span<const LatentExample> data);

// Phase 1: non-private steps with t uniform on [t_split, T]. Phase 2: DPDM
// accounted with the GDP accountant.
TrainResult TrainDpPromise(const DPTrainConfig& cfg, const TrainContext& ctx,
                           ParamStore params, std::span<const LatentExample> data,
                           std::optional<PrivacyBudget> budget,
                           LabelMode label_mode);

// Dispatches on cfg.algorithm.
TrainResult TrainPrivate(const DPTrainConfig& cfg, const TrainContext& ctx,
                         ParamStore params, std::span<const LatentExample> data,
                         std::optional<PrivacyBudget> budget,
                         LabelMode label_mode);

// One independent unconditional fine-tune per label, each with its own
// sampling rate and calibrated sigma. delta <= 0 means 1/|subset| for each
// label.
std::map<int, TrainResult> PerLabelFinetune(
    const DPTrainConfig& cfg, const TrainContext& ctx, const ParamStore& base,
    std::span<const LatentExample> data, int num_labels, double epsilon,
    double delta = -1.0);

// Single class-conditional fine-tune with label dropout for guidance;
// delta <= 0 means 1/N.
TrainResult CondCfgFinetune(const DPTrainConfig& cfg, const TrainContext& ctx,
                            const ParamStore& base,
                            std::span<const LatentExample> data,
                            double epsilon, double delta = -1.0);

double SamplingRate(int batch_size, std::size_t n);
int ExpectedBatch(double q, std::size_t n);

}  // namespace dpldm

#endif  // DPLDM_DP_OPTIMIZER_H_

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

#include "dpldm/dp_optimizer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dpldm/conditioning.h"
#include "dpldm/error.h"
#include "dpldm/parallel.h"

namespace dpldm {
namespace {

// Batch elements are reduced in fixed-size chunks, in batch order, so the
// floating-point summation order never depends on the thread count.
constexpr int kReduceChunk = 8;

struct BatchGradient {
  std::vector<double> sum;
  double loss_sum = 0.0;
  double max_norm = 0.0;
};

struct BatchSpec {
  long step = 0;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::kNull;
  double drop_p = 0.0;
  int multiplicity = 1;
  int t_min = 1;
  // Clip threshold; <= 0 disables clipping.
  double clip = 0.0;
  bool verify_clipping = false;
};

ClassLabel LabelFor(const LatentExample& ex, const NetConfig& net,
                    const BatchSpec& spec, Rng& rng) {
  if (spec.label_mode == LabelMode::kNull) return ClassLabel::Null();
  Require(net.num_classes > 0, ErrorCode::kInvalidArgument,
          "conditional training needs a class-conditioned network");
  return DropLabel(ClassLabel::Of(ex.label, net.num_classes), spec.drop_p, rng);
}

BatchGradient ComputeBatchGradient(const Denoiser& net, const ParamStore& params,
                                   const NoiseSchedule& schedule,
                                   std::span<const LatentExample> data,
                                   const std::vector<int>& batch,
                                   const BatchSpec& spec) {
  const std::size_t dim = params.unfrozen_size();
  const int n = static_cast<int>(batch.size());
  const int chunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<BatchGradient> partial(static_cast<std::size_t>(chunks));
  ParallelFor(chunks, [&](int c) {
    BatchGradient& acc = partial[static_cast<std::size_t>(c)];
    acc.sum.assign(dim, 0.0);
    const int end = std::min(n, (c + 1) * kReduceChunk);
    for (int j = c * kReduceChunk; j < end; ++j) {
      const int idx = batch[static_cast<std::size_t>(j)];
      const LatentExample& ex = data[static_cast<std::size_t>(idx)];
      Rng rng = Rng::Stream(spec.seed, StreamTag::kDataNoise,
                            {static_cast<std::uint64_t>(spec.step),
                             static_cast<std::uint64_t>(idx)});
      const ClassLabel label = LabelFor(ex, net.config(), spec, rng);
      MultiplicityLoss ml = DpdmMultiplicityLoss(net, params, schedule, ex, label,
                                                 spec.multiplicity, rng, spec.t_min);
      acc.loss_sum += ml.loss;
      std::vector<double> g = spec.clip > 0.0 ? ClipGradient(ml.grad, spec.clip)
                                              : std::move(ml.grad);
      if (spec.verify_clipping) {
        double sq = 0.0;
        for (double v : g) sq += v * v;
        const double norm = std::sqrt(sq);
        acc.max_norm = std::max(acc.max_norm, norm);
        Require(norm <= spec.clip, ErrorCode::kNonFinite,
                "clipped norm " + std::to_string(norm) + " exceeds C");
      }
      for (std::size_t i = 0; i < dim; ++i) acc.sum[i] += g[i];
    }
  });
  BatchGradient total;
  total.sum.assign(dim, 0.0);
  for (const BatchGradient& p : partial) {
    for (std::size_t i = 0; i < dim; ++i) total.sum[i] += p.sum[i];
    total.loss_sum += p.loss_sum;
    total.max_norm = std::max(total.max_norm, p.max_norm);
  }
  return total;
}

std::vector<std::size_t> LabelSubset(std::span<const LatentExample> data,
                                     int label) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label == label) idx.push_back(i);
  }
  return idx;
}

}  // namespace

std::string_view StrategyName(Strategy s) {
  return s == Strategy::kCondCfg ? "cond_cfg" : "per_label";
}

Strategy ParseStrategy(std::string_view name) {
  if (name == "cond_cfg") return Strategy::kCondCfg;
  if (name == "per_label") return Strategy::kPerLabel;
  Fail(ErrorCode::kConfig, "unknown strategy '" + std::string(name) + "'");
}

std::string_view AlgorithmName(Algorithm a) {
  return a == Algorithm::kDpdm ? "dpdm" : "dp_promise";
}

Algorithm ParseAlgorithm(std::string_view name) {
  if (name == "dpdm") return Algorithm::kDpdm;
  if (name == "dp_promise") return Algorithm::kDpPromise;
  Fail(ErrorCode::kConfig, "unknown algorithm '" + std::string(name) + "'");
}

void DPTrainConfig::Validate() const {
  Require(clip > 0.0, ErrorCode::kInvalidArgument, "clip C must be > 0");
  Require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
  Require(!sigma || *sigma >= 0.0, ErrorCode::kInvalidArgument,
          "sigma must be >= 0");
  Require(noise_multiplicity >= 1, ErrorCode::kInvalidArgument,
          "noise multiplicity must be >= 1");
  Require(adam.lr > 0.0, ErrorCode::kInvalidArgument, "learning rate must be > 0");
  Require(epochs >= 0.0, ErrorCode::kInvalidArgument, "epochs must be >= 0");
  Require(cfg_drop_p >= 0.0 && cfg_drop_p <= 1.0, ErrorCode::kInvalidArgument,
          "cfg_drop_p must lie in [0, 1]");
}

double SamplingRate(int batch_size, std::size_t n) {
  Require(n > 0, ErrorCode::kInvalidArgument, "empty dataset");
  return std::min(1.0, static_cast<double>(batch_size) / static_cast<double>(n));
}

int ExpectedBatch(double q, std::size_t n) {
  return std::max(1, static_cast<int>(std::ceil(q * static_cast<double>(n) - 1e-9)));
}

AdamState MakeAdamState(const ParamStore& params) {
  AdamState s;
  s.m.assign(params.unfrozen_size(), 0.0);
  s.v.assign(params.unfrozen_size(), 0.0);
  return s;
}

std::vector<int> PoissonSample(int n, double q, Rng& rng) {
  Require(q >= 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "sampling rate must lie in [0, 1]");
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    if (rng.Bernoulli(q)) out.push_back(i);
  }
  return out;
}

std::vector<double> ClipGradient(std::span<const double> g, double clip) {
  Require(clip > 0.0, ErrorCode::kInvalidArgument, "clip C must be > 0");
  double sq = 0.0;
  for (double v : g) {
    Require(std::isfinite(v), ErrorCode::kNonFinite,
            "non-finite per-sample gradient (training diverged)");
    sq += v * v;
  }
  const double norm = std::sqrt(sq);
  std::vector<double> out(g.begin(), g.end());
  if (norm <= clip) return out;
  // Rounding can leave the scaled norm an ulp above C; shrink until the
  // recomputed norm is within the bound.
  for (double s = clip / norm;; s = std::nextafter(s, 0.0)) {
    double scaled_sq = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = g[i] * s;
      scaled_sq += out[i] * out[i];
    }
    if (std::sqrt(scaled_sq) <= clip) return out;
  }
}

std::vector<double> FinishNoisyAggregate(std::vector<double> sum,
                                         std::size_t count, double clip,
                                         double sigma, int expected_batch,
                                         Rng& rng) {
  Require(expected_batch >= 1, ErrorCode::kInvalidArgument,
          "expected batch size must be >= 1");
  Require(count > 0 || sigma > 0.0, ErrorCode::kInvalidArgument,
          "empty batch without noise");
  const double inv_b = 1.0 / expected_batch;
  const double noise_scale = clip * sigma * inv_b;
  for (double& v : sum) {
    v *= inv_b;
    if (sigma > 0.0) v += noise_scale * rng.Normal();
  }
  return sum;
}

std::vector<double> NoisyAggregate(std::span<const std::vector<double>> clipped,
                                   std::size_t dim, double clip, double sigma,
                                   int expected_batch, Rng& rng) {
  std::vector<double> sum(dim, 0.0);
  for (const auto& g : clipped) {
    Require(g.size() == dim, ErrorCode::kShapeMismatch,
            "gradient length mismatch in aggregate");
    for (std::size_t i = 0; i < dim; ++i) sum[i] += g[i];
  }
  return FinishNoisyAggregate(std::move(sum), clipped.size(), clip, sigma,
                              expected_batch, rng);
}

MultiplicityLoss DpdmMultiplicityLoss(const Denoiser& net,
                                      const ParamStore& params,
                                      const NoiseSchedule& schedule,
                                      const LatentExample& example,
                                      const ClassLabel& label, int k, Rng& rng,
                                      int t_min) {
  Require(k >= 1, ErrorCode::kInvalidArgument, "noise multiplicity must be >= 1");
  Require(t_min >= 1 && t_min <= schedule.T(), ErrorCode::kOutOfRange,
          "t_min outside [1, T]");
  std::vector<double> full(params.total_size(), 0.0);
  const Tensor* mask = example.mask_latent ? &*example.mask_latent : nullptr;
  MultiplicityLoss out;
  Tensor eps(example.z0.shape());
  for (int i = 0; i < k; ++i) {
    const int t = rng.UniformInt(t_min, schedule.T());
    rng.FillNormal(eps.values());
    const Tensor z_t = ForwardSample(schedule, example.z0, t, eps);
    out.loss += net.LossAndGrad(z_t, t, label, mask, eps, 1.0 / k, full) / k;
  }
  out.grad = params.GatherUnfrozen(full);
  return out;
}

void AdamUpdate(ParamStore& params, std::span<const double> grad,
                AdamState& state, const AdamOptions& opts) {
  const std::size_t dim = params.unfrozen_size();
  Require(grad.size() == dim && state.m.size() == dim && state.v.size() == dim,
          ErrorCode::kShapeMismatch, "Adam gradient/state length mismatch");
  const long step = state.step + 1;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
  std::vector<double> m(dim), v(dim), delta(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * grad[i];
    v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
    delta[i] = opts.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts.eps);
    Require(std::isfinite(delta[i]), ErrorCode::kNonFinite,
            "non-finite Adam update");
  }
  std::span<double> flat = params.flat();
  std::size_t k = 0;
  for (const ParamEntry& e : params.entries()) {
    if (e.frozen) continue;
    for (std::size_t i = 0; i < e.size; ++i) flat[e.offset + i] -= delta[k++];
  }
  state.m = std::move(m);
  state.v = std::move(v);
  state.step = step;
}

TrainResult TrainDpdm(const DPTrainConfig& cfg, const TrainContext& ctx,
                      ParamStore params, std::span<const LatentExample> data,
                      std::optional<PrivacyBudget> budget, AccountantKind kind,
                      LabelMode label_mode) {
  cfg.Validate();
  Require(ctx.schedule != nullptr, ErrorCode::kInvalidArgument, "no schedule");
  Require(!data.empty(), ErrorCode::kInvalidArgument, "empty training set");
  TrainResult r;
  r.accountant = kind;
  r.q = SamplingRate(cfg.batch_size, data.size());
  const int expected_batch = ExpectedBatch(r.q, data.size());
  r.steps = StepsForEpochs(cfg.epochs, r.q);
  r.delta = budget ? budget->delta : 0.0;
  if (cfg.sigma) {
    r.sigma = *cfg.sigma;
  } else {
    Require(budget.has_value(), ErrorCode::kConfig,
            "sigma not given and no privacy budget to calibrate from");
    r.sigma = CalibrateSigma(*budget, r.q, r.steps, kind).sigma;
  }
  std::optional<PrivacyAccountant> accountant;
  if (budget) accountant.emplace(kind, r.q, r.sigma, budget->delta);
  if (cfg.freeze_time_embedding) params.SetFrozenPrefix(kTimeEmbeddingPrefix, true);

  const Denoiser net(ctx.net, params);
  AdamState adam = MakeAdamState(params);
  BatchSpec spec;
  spec.seed = ctx.seed;
  spec.label_mode = label_mode;
  spec.drop_p = cfg.cfg_drop_p;
  spec.multiplicity = cfg.noise_multiplicity;
  spec.clip = cfg.clip;
  spec.verify_clipping = cfg.verify_clipping;
  const int n = static_cast<int>(data.size());
  r.consumed_epsilon = budget ? 0.0 : std::numeric_limits<double>::infinity();
  for (long s = 1; s <= r.steps; ++s) {
    double eps_after = 0.0;
    if (accountant) {
      eps_after = accountant->EpsilonAfter(s);
      if (!(eps_after <= budget->epsilon)) {
        Fail(ErrorCode::kBudgetExceeded,
             "step " + std::to_string(s) + " would spend epsilon " +
                 std::to_string(eps_after) + " > target " +
                 std::to_string(budget->epsilon) + "; aborted before update");
      }
    }
    Rng poisson = Rng::Stream(ctx.seed, StreamTag::kPoisson,
                              {static_cast<std::uint64_t>(s)});
    const std::vector<int> batch = PoissonSample(n, r.q, poisson);
    spec.step = s;
    BatchGradient bg = batch.empty()
                           ? BatchGradient{std::vector<double>(params.unfrozen_size(), 0.0), 0.0, 0.0}
                           : ComputeBatchGradient(net, params, *ctx.schedule, data, batch, spec);
    Rng dp_noise = Rng::Stream(ctx.seed, StreamTag::kDpNoise,
                               {static_cast<std::uint64_t>(s)});
    const std::vector<double> g =
        FinishNoisyAggregate(std::move(bg.sum), batch.size(), cfg.clip, r.sigma,
                             expected_batch, dp_noise);
    AdamUpdate(params, g, adam, cfg.adam);
    r.batch_sizes.push_back(static_cast<int>(batch.size()));
    r.loss_trace.push_back(batch.empty() ? 0.0 : bg.loss_sum / batch.size());
    r.max_clipped_norm = std::max(r.max_clipped_norm, bg.max_norm);
    if (accountant) {
      r.epsilon_trace.push_back(eps_after);
      r.consumed_epsilon = eps_after;
    }
  }
  r.params = std::move(params);
  return r;
}

TrainResult TrainNonPrivate(const NonPrivateOptions& opts,
                            const TrainContext& ctx, ParamStore params,
                            std::span<const LatentExample> data) {
  Require(ctx.schedule != nullptr, ErrorCode::kInvalidArgument, "no schedule");
  Require(!data.empty(), ErrorCode::kInvalidArgument, "empty training set");
  Require(opts.batch_size >= 1, ErrorCode::kInvalidArgument,
          "batch size must be >= 1");
  TrainResult r;
  r.consumed_epsilon = std::numeric_limits<double>::infinity();
  const Denoiser net(ctx.net, params);
  AdamState adam = MakeAdamState(params);
  BatchSpec spec;
  spec.seed = ctx.seed;
  spec.label_mode = opts.label_mode;
  spec.drop_p = opts.cfg_drop_p;
  spec.t_min = opts.t_min;
  const int n = static_cast<int>(data.size());
  const int full_epochs = static_cast<int>(std::floor(opts.epochs));
  const double frac = opts.epochs - full_epochs;
  const int epochs_run = full_epochs + (frac > 0.0 ? 1 : 0);
  long step = 0;
  for (int ep = 0; ep < epochs_run; ++ep) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::Stream(ctx.seed, StreamTag::kShuffle,
                              {static_cast<std::uint64_t>(ep)});
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    const int limit = ep < full_epochs ? n : static_cast<int>(std::lround(frac * n));
    for (int start = 0; start < limit; start += opts.batch_size) {
      const int end = std::min(limit, start + opts.batch_size);
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      spec.step = ++step;
      BatchGradient bg =
          ComputeBatchGradient(net, params, *ctx.schedule, data, batch, spec);
      for (double& v : bg.sum) v /= static_cast<double>(batch.size());
      AdamUpdate(params, bg.sum, adam, opts.adam);
      r.loss_trace.push_back(bg.loss_sum / batch.size());
      r.batch_sizes.push_back(static_cast<int>(batch.size()));
    }
  }
  r.steps = step;
  r.params = std::move(params);
  return r;
}

TrainResult TrainDpPromise(const DPTrainConfig& cfg, const TrainContext& ctx,
                           ParamStore params, std::span<const LatentExample> data,
                           std::optional<PrivacyBudget> budget,
                           LabelMode label_mode) {
  cfg.Validate();
  Require(ctx.schedule != nullptr, ErrorCode::kInvalidArgument, "no schedule");
  const int T = ctx.schedule->T();
  const double phase1 = cfg.phase1_epochs >= 0.0 ? cfg.phase1_epochs : 0.1 * cfg.epochs;
  const int t_split = cfg.t_split > 0
                          ? cfg.t_split
                          : std::max(1, static_cast<int>(std::lround(0.9 * T)));
  Require(t_split >= 1 && t_split <= T, ErrorCode::kOutOfRange,
          "t_split outside (0, T]");
  if (cfg.freeze_time_embedding) params.SetFrozenPrefix(kTimeEmbeddingPrefix, true);
  long phase1_steps = 0;
  if (phase1 > 0.0) {
    NonPrivateOptions opts;
    opts.epochs = phase1;
    opts.batch_size = cfg.batch_size;
    opts.adam = cfg.adam;
    opts.t_min = t_split;
    opts.label_mode = label_mode;
    opts.cfg_drop_p = cfg.cfg_drop_p;
    TrainContext phase1_ctx = ctx;
    phase1_ctx.seed = MixSeed(ctx.seed, 0x70726f6d697365ULL);
    TrainResult p1 = TrainNonPrivate(opts, phase1_ctx, std::move(params), data);
    params = std::move(p1.params);
    phase1_steps = p1.steps;
  }
  TrainResult r =
      TrainDpdm(cfg, ctx, std::move(params), data, budget, AccountantKind::kGdp,
                label_mode);
  r.phase1_steps = phase1_steps;
  return r;
}

TrainResult TrainPrivate(const DPTrainConfig& cfg, const TrainContext& ctx,
                         ParamStore params, std::span<const LatentExample> data,
                         std::optional<PrivacyBudget> budget,
                         LabelMode label_mode) {
  if (cfg.algorithm == Algorithm::kDpPromise) {
    return TrainDpPromise(cfg, ctx, std::move(params), data, budget, label_mode);
  }
  return TrainDpdm(cfg, ctx, std::move(params), data, budget,
                   AccountantKind::kRdp, label_mode);
}

std::map<int, TrainResult> PerLabelFinetune(
    const DPTrainConfig& cfg, const TrainContext& ctx, const ParamStore& base,
    std::span<const LatentExample> data, int num_labels, double epsilon,
    double delta) {
  Require(num_labels >= 1, ErrorCode::kInvalidArgument, "need at least one label");
  std::vector<std::vector<LatentExample>> subsets(static_cast<std::size_t>(num_labels));
  std::string empty;
  for (int label = 0; label < num_labels; ++label) {
    const auto idx = LabelSubset(data, label);
    if (idx.empty()) {
      empty += (empty.empty() ? "" : ", ") + std::to_string(label);
      continue;
    }
    for (std::size_t i : idx) subsets[static_cast<std::size_t>(label)].push_back(data[i]);
  }
  Require(empty.empty(), ErrorCode::kInvalidArgument,
          "empty label subset(s): " + empty);
  std::map<int, TrainResult> out;
  for (int label = 0; label < num_labels; ++label) {
    const auto& subset = subsets[static_cast<std::size_t>(label)];
    TrainContext label_ctx = ctx;
    label_ctx.seed = MixSeed(ctx.seed, 0x6c6162656c00ULL + static_cast<std::uint64_t>(label));
    const PrivacyBudget budget{
        epsilon, delta > 0.0 ? delta : 1.0 / static_cast<double>(subset.size())};
    out.emplace(label, TrainPrivate(cfg, label_ctx, base, subset, budget,
                                    LabelMode::kNull));
  }
  return out;
}

TrainResult CondCfgFinetune(const DPTrainConfig& cfg, const TrainContext& ctx,
                            const ParamStore& base,
                            std::span<const LatentExample> data,
                            double epsilon, double delta) {
  Require(!data.empty(), ErrorCode::kInvalidArgument, "empty training set");
  const PrivacyBudget budget{
      epsilon, delta > 0.0 ? delta : 1.0 / static_cast<double>(data.size())};
  return TrainPrivate(cfg, ctx, base, data, budget, LabelMode::kConditional);
}

}  // namespace dpldm

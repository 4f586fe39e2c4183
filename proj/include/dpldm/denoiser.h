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

#ifndef DPLDM_DENOISER_H_
#define DPLDM_DENOISER_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpldm/conditioning.h"
#include "dpldm/diffusion.h"
#include "dpldm/param_store.h"
#include "dpldm/tensor.h"

namespace dpldm {

// Small conditional noise-prediction UNet.
//
//   sinusoidal(t) -> Linear -> SiLU -> Linear      (timestep embedding, "temb.")
//   + class_emb[label]  (row num_classes is the null label)
//   emb = SiLU(sum), injected into every residual block as a channel bias
//
//   [z_t ; E(mask)] -> in_conv -> {res blocks, stride-2 down} per level
//                   -> {2x up, conv, + skip} per level -> GN -> SiLU -> out_conv
//
// Widths double at each level. Residual block: GN-SiLU-conv, + emb bias,
// GN-SiLU-conv, + identity.
struct NetConfig {
  int latent_channels = 16;
  // Channels of the encoded layout mask; only used when layout_conditioned.
  int mask_channels = 16;
  int base_width = 32;
  int num_classes = 0;  // 0 => no class embedding table
  int embed_dim = 64;
  int levels = 2;
  int blocks_per_level = 2;
  int norm_groups = 8;
  bool layout_conditioned = false;

  int in_channels() const {
    return latent_channels + (layout_conditioned ? mask_channels : 0);
  }
  // Throws kInvalidArgument on inconsistent or non-positive settings.
  void Validate() const;
  // Validates a latent spatial extent against the number of levels.
  void ValidateSpatial(int height, int width) const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

inline constexpr std::string_view kTimeEmbeddingPrefix = "temb.";

// (name, shape) of every parameter, in store order.
std::vector<std::pair<std::string, std::vector<int>>> ParamLayout(
    const NetConfig& cfg);

// Fan-in scaled uniform weights, zero biases, unit norm gains.
ParamStore InitParams(const NetConfig& cfg, std::uint64_t seed);

// [sin(t * f_0..f_{d/2-1}), cos(t * f_0..f_{d/2-1})], f_k = 10000^(-k/(d/2)).
std::vector<double> TimestepEmbedding(int t, int dim);

class Denoiser {
 public:
  // Throws if `params` does not follow ParamLayout(cfg).
  Denoiser(const NetConfig& cfg, const ParamStore& params);
  ~Denoiser();
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  // Predicts eps for z_t of shape [latent_channels, h, w].
  Tensor Forward(const Tensor& z_t, int t, const ClassLabel& label,
                 const Tensor* mask_latent) const;

  // Returns mean((Forward(...) - eps)^2) and adds scale * d loss / d params
  // into `grad`, a full-size vector laid out like the parameter store.
  double LossAndGrad(const Tensor& z_t, int t, const ClassLabel& label,
                     const Tensor* mask_latent, const Tensor& eps, double scale,
                     std::span<double> grad) const;

  const NetConfig& config() const { return cfg_; }

 private:
  struct Refs;
  struct Cache;

  Tensor Run(const Tensor& z_t, int t, const ClassLabel& label,
             const Tensor* mask_latent, Cache* cache) const;

  NetConfig cfg_;
  const ParamStore& params_;
  std::unique_ptr<Refs> refs_;
};

struct DiffusionExample {
  Tensor z0;
  int t = 1;
  Tensor eps;
  ClassLabel label = ClassLabel::Null();
  std::optional<Tensor> mask_latent;
};

// Per-sample losses and gradients over the unfrozen parameters, in store
// order. Each element is computed alone, so results do not depend on batch
// composition.
struct PerSampleGrads {
  std::vector<double> losses;
  std::vector<std::vector<double>> grads;
};

PerSampleGrads LossAndPerSampleGrads(const NetConfig& cfg,
                                     const ParamStore& params,
                                     const NoiseSchedule& schedule,
                                     std::span<const DiffusionExample> batch);

}  // namespace dpldm

#endif  // DPLDM_DENOISER_H_

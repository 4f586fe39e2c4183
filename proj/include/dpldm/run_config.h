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

#ifndef DPLDM_RUN_CONFIG_H_
#define DPLDM_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dpldm/denoiser.h"
#include "dpldm/diffusion.h"
#include "dpldm/dp_optimizer.h"
#include "dpldm/privacy_accounting.h"

namespace dpldm {

// Everything a pipeline stage needs. Serialized as flat "key = value" text;
// see ConfigKeys() for the key set. Unknown keys are errors.
struct TrainRunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  // Dataset directories; empty means <output_dir>/data/{train,test,public}.
  std::string train_data, test_data, public_data;

  // Synthetic data (gen-data).
  int image_size = 32;
  int num_classes = 4;
  int train_per_class = 500;
  int test_per_class = 100;
  int public_per_class = 500;
  int jitter = 1;
  std::uint64_t data_seed = 1;
  std::uint64_t template_seed = 11;
  std::uint64_t public_template_seed = 23;

  int codec_factor = 4;
  // Latents are multiplied by this before diffusion and divided after.
  double latent_scale = 0.5;

  // Network; channel counts are derived from the codec factor.
  int base_width = 32;
  int embed_dim = 64;
  int levels = 2;
  int blocks_per_level = 2;
  int norm_groups = 8;
  bool class_conditioned = true;
  bool layout_conditioned = true;

  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sampler_steps = 100;
  ReverseVariance sampler_variance = ReverseVariance::kPosterior;
  double guidance = 1.0;
  int samples_per_class = 500;

  // Non-private pretraining on the public set.
  double pretrain_epochs = 20.0;
  int pretrain_batch_size = 32;
  double pretrain_lr = 1e-3;
  double pretrain_cfg_drop_p = 0.1;
  // Starting point of finetune-dp; empty means <output_dir>/pretrain/model.ckpt.
  std::string pretrain_checkpoint;

  DPTrainConfig dp;
  double epsilon = 10.0;
  // Negative means "auto": 1 / |private training set|, per label subset for
  // per_label runs.
  double delta = -1.0;

  int classifier_epochs = 12;
  int classifier_batch_size = 32;
  double classifier_lr = 2e-3;

  // Derived settings.
  NetConfig Net() const;
  NoiseSchedule Schedule() const;
  std::filesystem::path TrainDir() const;
  std::filesystem::path TestDir() const;
  std::filesystem::path PublicDir() const;
  std::filesystem::path PretrainCheckpoint() const;

  // Throws kConfig on inconsistent settings.
  void Validate() const;

  friend bool operator==(const TrainRunConfig&, const TrainRunConfig&);
};

std::vector<std::string_view> ConfigKeys();

// Sets one key from its text form; throws kConfig on unknown keys or bad
// values.
void SetConfigValue(TrainRunConfig& cfg, std::string_view key, std::string_view value);
std::string GetConfigValue(const TrainRunConfig& cfg, std::string_view key);

// '#' starts a comment; blank lines are ignored.
TrainRunConfig ParseRunConfig(std::string_view text);
std::string SerializeRunConfig(const TrainRunConfig& cfg);
TrainRunConfig LoadRunConfig(const std::filesystem::path& path);
void SaveRunConfig(const std::filesystem::path& path, const TrainRunConfig& cfg);

}  // namespace dpldm

#endif  // DPLDM_RUN_CONFIG_H_

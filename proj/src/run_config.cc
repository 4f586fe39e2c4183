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

#include "dpldm/run_config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include "dpldm/error.h"
#include "dpldm/latent_codec.h"

namespace dpldm {
namespace {

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void BadValue(std::string_view key, std::string_view value,
                           const char* expected) {
  Fail(ErrorCode::kConfig, "bad value '" + std::string(value) + "' for " +
                               std::string(key) + " (expected " + expected + ")");
}

template <typename T>
T ParseNumber(std::string_view key, std::string_view v, const char* expected) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    BadValue(key, v, expected);
  }
  return out;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool ParseBool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  BadValue(key, v, "true or false");
}

struct KeySpec {
  std::string_view key;
  std::function<void(TrainRunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const TrainRunConfig&)> get;
};

KeySpec Int(std::string_view key, int TrainRunConfig::*m) {
  return {key,
          [m](TrainRunConfig& c, std::string_view k, std::string_view v) {
            c.*m = ParseNumber<int>(k, v, "an integer");
          },
          [m](const TrainRunConfig& c) { return std::to_string(c.*m); }};
}

KeySpec U64(std::string_view key, std::uint64_t TrainRunConfig::*m) {
  return {key,
          [m](TrainRunConfig& c, std::string_view k, std::string_view v) {
            c.*m = ParseNumber<std::uint64_t>(k, v, "an unsigned integer");
          },
          [m](const TrainRunConfig& c) { return std::to_string(c.*m); }};
}

KeySpec Real(std::string_view key, double TrainRunConfig::*m) {
  return {key,
          [m](TrainRunConfig& c, std::string_view k, std::string_view v) {
            c.*m = ParseNumber<double>(k, v, "a number");
          },
          [m](const TrainRunConfig& c) { return FormatDouble(c.*m); }};
}

KeySpec Bool(std::string_view key, bool TrainRunConfig::*m) {
  return {key,
          [m](TrainRunConfig& c, std::string_view k, std::string_view v) {
            c.*m = ParseBool(k, v);
          },
          [m](const TrainRunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

KeySpec Str(std::string_view key, std::string TrainRunConfig::*m) {
  return {key,
          [m](TrainRunConfig& c, std::string_view, std::string_view v) {
            c.*m = std::string(v);
          },
          [m](const TrainRunConfig& c) { return c.*m; }};
}

const std::vector<KeySpec>& Specs() {
  using C = TrainRunConfig;
  static const std::vector<KeySpec> specs = {
      U64("seed", &C::seed),
      Str("output_dir", &C::output_dir),
      Str("data.train", &C::train_data),
      Str("data.test", &C::test_data),
      Str("data.public", &C::public_data),
      Int("data.image_size", &C::image_size),
      Int("data.num_classes", &C::num_classes),
      Int("data.train_per_class", &C::train_per_class),
      Int("data.test_per_class", &C::test_per_class),
      Int("data.public_per_class", &C::public_per_class),
      Int("data.jitter", &C::jitter),
      U64("data.seed", &C::data_seed),
      U64("data.template_seed", &C::template_seed),
      U64("data.public_template_seed", &C::public_template_seed),
      Int("codec.factor", &C::codec_factor),
      Real("codec.latent_scale", &C::latent_scale),
      Int("net.base_width", &C::base_width),
      Int("net.embed_dim", &C::embed_dim),
      Int("net.levels", &C::levels),
      Int("net.blocks_per_level", &C::blocks_per_level),
      Int("net.norm_groups", &C::norm_groups),
      Bool("net.class_conditioned", &C::class_conditioned),
      Bool("net.layout_conditioned", &C::layout_conditioned),
      Int("diffusion.steps", &C::diffusion_steps),
      Real("diffusion.beta_start", &C::beta_start),
      Real("diffusion.beta_end", &C::beta_end),
      Int("sampler.steps", &C::sampler_steps),
      {"sampler.variance",
       [](C& c, std::string_view k, std::string_view v) {
         if (v == "posterior") {
           c.sampler_variance = ReverseVariance::kPosterior;
         } else if (v == "beta") {
           c.sampler_variance = ReverseVariance::kBeta;
         } else {
           BadValue(k, v, "posterior or beta");
         }
       },
       [](const C& c) {
         return std::string(c.sampler_variance == ReverseVariance::kPosterior
                                ? "posterior" : "beta");
       }},
      Real("sampler.guidance", &C::guidance),
      Int("sampler.samples_per_class", &C::samples_per_class),
      Real("pretrain.epochs", &C::pretrain_epochs),
      Int("pretrain.batch_size", &C::pretrain_batch_size),
      Real("pretrain.lr", &C::pretrain_lr),
      Real("pretrain.cfg_drop_p", &C::pretrain_cfg_drop_p),
      Str("pretrain.checkpoint", &C::pretrain_checkpoint),
      {"dp.strategy",
       [](C& c, std::string_view, std::string_view v) { c.dp.strategy = ParseStrategy(v); },
       [](const C& c) { return std::string(StrategyName(c.dp.strategy)); }},
      {"dp.algorithm",
       [](C& c, std::string_view, std::string_view v) { c.dp.algorithm = ParseAlgorithm(v); },
       [](const C& c) { return std::string(AlgorithmName(c.dp.algorithm)); }},
      {"dp.clip",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.clip = ParseNumber<double>(k, v, "a number");
       },
       [](const C& c) { return FormatDouble(c.dp.clip); }},
      {"dp.batch_size",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.batch_size = ParseNumber<int>(k, v, "an integer");
       },
       [](const C& c) { return std::to_string(c.dp.batch_size); }},
      {"dp.sigma",
       [](C& c, std::string_view k, std::string_view v) {
         if (v == "auto") {
           c.dp.sigma.reset();
         } else {
           c.dp.sigma = ParseNumber<double>(k, v, "a number or auto");
         }
       },
       [](const C& c) {
         return c.dp.sigma ? FormatDouble(*c.dp.sigma) : std::string("auto");
       }},
      {"dp.multiplicity",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.noise_multiplicity = ParseNumber<int>(k, v, "an integer");
       },
       [](const C& c) { return std::to_string(c.dp.noise_multiplicity); }},
      {"dp.lr",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.adam.lr = ParseNumber<double>(k, v, "a number");
       },
       [](const C& c) { return FormatDouble(c.dp.adam.lr); }},
      {"dp.epochs",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.epochs = ParseNumber<double>(k, v, "a number");
       },
       [](const C& c) { return FormatDouble(c.dp.epochs); }},
      {"dp.cfg_drop_p",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.cfg_drop_p = ParseNumber<double>(k, v, "a number");
       },
       [](const C& c) { return FormatDouble(c.dp.cfg_drop_p); }},
      {"dp.phase1_epochs",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.phase1_epochs = v == "auto" ? -1.0 : ParseNumber<double>(k, v, "a number or auto");
       },
       [](const C& c) {
         return c.dp.phase1_epochs < 0 ? std::string("auto") : FormatDouble(c.dp.phase1_epochs);
       }},
      {"dp.t_split",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.t_split = v == "auto" ? -1 : ParseNumber<int>(k, v, "an integer or auto");
       },
       [](const C& c) {
         return c.dp.t_split < 0 ? std::string("auto") : std::to_string(c.dp.t_split);
       }},
      {"dp.freeze_time_embedding",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.freeze_time_embedding = ParseBool(k, v);
       },
       [](const C& c) { return std::string(c.dp.freeze_time_embedding ? "true" : "false"); }},
      {"dp.verify_clipping",
       [](C& c, std::string_view k, std::string_view v) {
         c.dp.verify_clipping = ParseBool(k, v);
       },
       [](const C& c) { return std::string(c.dp.verify_clipping ? "true" : "false"); }},
      Real("privacy.epsilon", &C::epsilon),
      {"privacy.delta",
       [](C& c, std::string_view k, std::string_view v) {
         c.delta = v == "auto" ? -1.0 : ParseNumber<double>(k, v, "a number or auto");
       },
       [](const C& c) { return c.delta < 0 ? std::string("auto") : FormatDouble(c.delta); }},
      Int("eval.classifier_epochs", &C::classifier_epochs),
      Int("eval.classifier_batch_size", &C::classifier_batch_size),
      Real("eval.classifier_lr", &C::classifier_lr),
  };
  return specs;
}

const KeySpec& Find(std::string_view key) {
  for (const KeySpec& s : Specs()) {
    if (s.key == key) return s;
  }
  Fail(ErrorCode::kConfig, "unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::vector<std::string_view> ConfigKeys() {
  std::vector<std::string_view> keys;
  for (const KeySpec& s : Specs()) keys.push_back(s.key);
  return keys;
}

void SetConfigValue(TrainRunConfig& cfg, std::string_view key, std::string_view value) {
  Find(key).set(cfg, key, value);
}

std::string GetConfigValue(const TrainRunConfig& cfg, std::string_view key) {
  return Find(key).get(cfg);
}

NetConfig TrainRunConfig::Net() const {
  NetConfig n;
  n.latent_channels = LatentChannels(1, codec_factor);
  n.mask_channels = n.latent_channels;
  n.base_width = base_width;
  n.num_classes = class_conditioned ? num_classes : 0;
  n.embed_dim = embed_dim;
  n.levels = levels;
  n.blocks_per_level = blocks_per_level;
  n.norm_groups = norm_groups;
  n.layout_conditioned = layout_conditioned;
  return n;
}

NoiseSchedule TrainRunConfig::Schedule() const {
  return MakeLinearSchedule(beta_start, beta_end, diffusion_steps);
}

std::filesystem::path TrainRunConfig::TrainDir() const {
  return train_data.empty() ? std::filesystem::path(output_dir) / "data" / "train"
                            : std::filesystem::path(train_data);
}
std::filesystem::path TrainRunConfig::TestDir() const {
  return test_data.empty() ? std::filesystem::path(output_dir) / "data" / "test"
                           : std::filesystem::path(test_data);
}
std::filesystem::path TrainRunConfig::PublicDir() const {
  return public_data.empty() ? std::filesystem::path(output_dir) / "data" / "public"
                             : std::filesystem::path(public_data);
}
std::filesystem::path TrainRunConfig::PretrainCheckpoint() const {
  return pretrain_checkpoint.empty()
             ? std::filesystem::path(output_dir) / "pretrain" / "model.ckpt"
             : std::filesystem::path(pretrain_checkpoint);
}

void TrainRunConfig::Validate() const {
  try {
    Require(codec_factor == 4 || codec_factor == 8, ErrorCode::kConfig,
            "codec.factor must be 4 or 8");
    Require(image_size > 0 && image_size % 8 == 0, ErrorCode::kConfig,
            "data.image_size must be a positive multiple of 8");
    Require(num_classes >= 2, ErrorCode::kConfig, "data.num_classes must be >= 2");
    Require(train_per_class >= 1 && test_per_class >= 1 && public_per_class >= 1,
            ErrorCode::kConfig, "per-class counts must be >= 1");
    Require(jitter >= 0, ErrorCode::kConfig, "data.jitter must be >= 0");
    Require(latent_scale > 0.0, ErrorCode::kConfig, "codec.latent_scale must be > 0");
    const NetConfig net = Net();
    net.Validate();
    const int latent = image_size / codec_factor;
    net.ValidateSpatial(latent, latent);
    Require(diffusion_steps >= 1 && beta_start > 0.0 && beta_end < 1.0 &&
                beta_start <= beta_end,
            ErrorCode::kConfig, "bad diffusion schedule");
    Require(sampler_steps >= 1 && sampler_steps <= diffusion_steps,
            ErrorCode::kConfig, "sampler.steps must lie in [1, diffusion.steps]");
    Require(guidance >= 0.0, ErrorCode::kConfig, "sampler.guidance must be >= 0");
    Require(guidance == 1.0 || class_conditioned, ErrorCode::kConfig,
            "guidance needs a class-conditioned network");
    Require(samples_per_class >= 1, ErrorCode::kConfig,
            "sampler.samples_per_class must be >= 1");
    Require(pretrain_epochs >= 0.0 && pretrain_batch_size >= 1 && pretrain_lr > 0.0,
            ErrorCode::kConfig, "bad pretraining settings");
    Require(pretrain_cfg_drop_p >= 0.0 && pretrain_cfg_drop_p <= 1.0,
            ErrorCode::kConfig, "pretrain.cfg_drop_p must lie in [0, 1]");
    dp.Validate();
    Require(dp.t_split < 0 || (dp.t_split >= 1 && dp.t_split <= diffusion_steps),
            ErrorCode::kConfig, "dp.t_split must lie in (0, diffusion.steps]");
    Require(dp.strategy != Strategy::kCondCfg || class_conditioned, ErrorCode::kConfig,
            "dp.strategy=cond_cfg needs net.class_conditioned=true");
    Require(epsilon > 0.0, ErrorCode::kConfig, "privacy.epsilon must be > 0");
    Require(delta < 0.0 || (delta > 0.0 && delta < 1.0), ErrorCode::kConfig,
            "privacy.delta must be auto or lie in (0, 1)");
    Require(classifier_epochs >= 1 && classifier_batch_size >= 1 && classifier_lr > 0.0,
            ErrorCode::kConfig, "bad classifier settings");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    Fail(ErrorCode::kConfig, e.what());
  }
}

bool operator==(const TrainRunConfig& a, const TrainRunConfig& b) {
  return SerializeRunConfig(a) == SerializeRunConfig(b);
}

TrainRunConfig ParseRunConfig(std::string_view text) {
  TrainRunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = Trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    Require(eq != std::string::npos, ErrorCode::kConfig,
            "line " + std::to_string(line_no) + ": expected key = value");
    SetConfigValue(cfg, Trim(std::string_view(t).substr(0, eq)),
                   Trim(std::string_view(t).substr(eq + 1)));
  }
  return cfg;
}

std::string SerializeRunConfig(const TrainRunConfig& cfg) {
  std::string out;
  for (const KeySpec& s : Specs()) {
    out += std::string(s.key) + " = " + s.get(cfg) + "\n";
  }
  return out;
}

TrainRunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  return ParseRunConfig(text);
}

void SaveRunConfig(const std::filesystem::path& path, const TrainRunConfig& cfg) {
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << SerializeRunConfig(cfg);
  Require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace dpldm

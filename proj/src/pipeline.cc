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

#include "dpldm/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>

#include "json.hpp"

#include "dpldm/conditioning.h"
#include "dpldm/denoiser.h"
#include "dpldm/diffusion.h"
#include "dpldm/error.h"
#include "dpldm/latent_codec.h"
#include "dpldm/privacy_accounting.h"
#include "dpldm/rng.h"

namespace dpldm {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string Hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json ConfigJson(const TrainRunConfig& cfg) {
  json j = json::object();
  for (std::string_view key : ConfigKeys()) {
    j[std::string(key)] = GetConfigValue(cfg, key);
  }
  return j;
}

json TrainJson(const TrainResult& r) {
  json j;
  j["sigma"] = r.sigma;
  j["q"] = r.q;
  j["delta"] = r.delta;
  j["steps"] = r.steps;
  j["phase1_steps"] = r.phase1_steps;
  j["accountant"] = std::string(AccountantName(r.accountant));
  j["consumed_epsilon"] = std::isfinite(r.consumed_epsilon) ? json(r.consumed_epsilon)
                                                            : json("inf");
  j["epsilon_trace"] = r.epsilon_trace;
  j["loss_trace"] = r.loss_trace;
  j["batch_sizes"] = r.batch_sizes;
  return j;
}

void WriteRunManifest(const fs::path& dir, const std::string& command,
                      const TrainRunConfig& cfg, json extra) {
  json j;
  j["format"] = "dpldm-run";
  j["version"] = 1;
  j["command"] = command;
  j["config"] = ConfigJson(cfg);
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(dir / kRunManifestName);
  Require(static_cast<bool>(out), ErrorCode::kIo,
          "cannot write run manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

std::string ClassDirName(int k) { return "class_" + std::to_string(k); }

Checkpoint MakeCheckpoint(const TrainRunConfig& cfg, const TrainResult& r) {
  Checkpoint c;
  c.net = cfg.Net();
  c.params = r.params;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", r.sigma);
  c.meta["sigma"] = buf;
  std::snprintf(buf, sizeof(buf), "%.17g", r.consumed_epsilon);
  c.meta["consumed_epsilon"] = buf;
  c.meta["steps"] = std::to_string(r.steps);
  return c;
}

Checkpoint LoadModel(const TrainRunConfig& cfg, const fs::path& path) {
  Checkpoint c = LoadCheckpoint(path);
  Require(c.net == cfg.Net(), ErrorCode::kConfig,
          "checkpoint " + path.string() + " was trained with a different network config");
  return c;
}

// Samples n images from one model. labels[i] is the conditioning label of
// sample i (null for per-label models); layouts[i] its layout when the
// model is layout conditioned.
std::vector<Tensor> Generate(const TrainRunConfig& cfg, const Checkpoint& model,
                             const std::vector<ClassLabel>& labels,
                             const std::vector<LayoutBBoxes>& layouts,
                             std::uint64_t seed) {
  const NetConfig net_cfg = cfg.Net();
  const Denoiser net(net_cfg, model.params);
  const NoiseSchedule schedule = cfg.Schedule();
  const RespacedSchedule respaced = MakeRespaced(schedule, cfg.sampler_steps);
  const int n = static_cast<int>(labels.size());
  std::vector<Tensor> masks;
  if (net_cfg.layout_conditioned) {
    for (const LayoutBBoxes& b : layouts) {
      Tensor m = EncodeMask(RasterizeLayout(b, cfg.image_size, cfg.image_size),
                            cfg.codec_factor).data;
      for (double& v : m.values()) v *= cfg.latent_scale;
      masks.push_back(std::move(m));
    }
  }
  const double guidance = cfg.guidance;
  DenoiserHandle handle = [&](const Tensor& x, int t, int i) {
    const auto idx = static_cast<std::size_t>(i);
    const Tensor* mask = masks.empty() ? nullptr : &masks[idx];
    const ClassLabel& label = labels[idx];
    if (label.is_null() || guidance == 1.0) return net.Forward(x, t, label, mask);
    const Tensor eps_c = net.Forward(x, t, label, mask);
    const Tensor eps_u = net.Forward(x, t, ClassLabel::Null(), mask);
    return CfgCombine(eps_u, eps_c, guidance);
  };
  const int side = cfg.image_size / cfg.codec_factor;
  const std::vector<int> shape = {net_cfg.latent_channels, side, side};
  std::vector<Tensor> latents =
      DdpmSample(handle, respaced, shape, n, seed, cfg.sampler_variance);
  std::vector<Tensor> images;
  images.reserve(latents.size());
  for (Tensor& z : latents) {
    for (double& v : z.values()) v /= cfg.latent_scale;
    Tensor img = Decode(LatentImage{std::move(z), cfg.codec_factor});
    for (double& v : img.values()) v = std::clamp(v, -1.0, 1.0);
    images.push_back(std::move(img));
  }
  return images;
}

double FinetuneEpsilon(const TrainRunConfig& cfg) {
  const fs::path path = FinetuneDir(cfg) / kRunManifestName;
  if (!fs::exists(path)) return std::numeric_limits<double>::quiet_NaN();
  std::ifstream in(path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("consumed_epsilon")) {
    Fail(ErrorCode::kCorrupt, "bad run manifest " + path.string());
  }
  const json& e = j["consumed_epsilon"];
  return e.is_number() ? e.get<double>() : std::numeric_limits<double>::infinity();
}

}  // namespace

fs::path PretrainDir(const TrainRunConfig& cfg) { return fs::path(cfg.output_dir) / "pretrain"; }
fs::path FinetuneDir(const TrainRunConfig& cfg) { return fs::path(cfg.output_dir) / "finetune"; }
fs::path SamplesDir(const TrainRunConfig& cfg) { return fs::path(cfg.output_dir) / "samples"; }
fs::path ReportPath(const TrainRunConfig& cfg) { return fs::path(cfg.output_dir) / "report.tsv"; }

std::uint64_t StageSeed(const TrainRunConfig& cfg, Stage stage) {
  return MixSeed(cfg.seed, static_cast<std::uint64_t>(stage));
}

std::vector<LatentExample> EncodeExamples(const TrainRunConfig& cfg,
                                          const std::vector<DocSample>& samples) {
  std::vector<LatentExample> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const DocSample& s = samples[i];
    Require(s.image.dim(1) == cfg.image_size && s.image.dim(2) == cfg.image_size,
            ErrorCode::kConfig,
            "dataset image size " + ShapeString(s.image.shape()) +
                " does not match data.image_size");
    LatentExample& ex = out[i];
    ex.z0 = Encode(s.image, cfg.codec_factor).data;
    for (double& v : ex.z0.values()) v *= cfg.latent_scale;
    ex.label = s.label;
    if (cfg.layout_conditioned) {
      Tensor m = EncodeMask(RasterizeLayout(s.boxes, cfg.image_size, cfg.image_size),
                            cfg.codec_factor).data;
      for (double& v : m.values()) v *= cfg.latent_scale;
      ex.mask_latent = std::move(m);
    }
  }
  return out;
}

void RunGenData(const TrainRunConfig& cfg) {
  cfg.Validate();
  auto make = [&](int per_class, std::uint64_t seed, std::uint64_t template_seed) {
    DocGenOptions o;
    o.num_classes = cfg.num_classes;
    o.per_class = per_class;
    o.height = o.width = cfg.image_size;
    o.seed = seed;
    o.template_seed = template_seed;
    o.jitter = cfg.jitter;
    return GenerateDocuments(o);
  };
  const std::uint64_t s = cfg.data_seed;
  WriteDataset(cfg.TrainDir(), make(cfg.train_per_class, MixSeed(s, 1), cfg.template_seed),
               cfg.num_classes, "train");
  WriteDataset(cfg.TestDir(), make(cfg.test_per_class, MixSeed(s, 2), cfg.template_seed),
               cfg.num_classes, "test");
  WriteDataset(cfg.PublicDir(),
               make(cfg.public_per_class, MixSeed(s, 3), cfg.public_template_seed),
               cfg.num_classes, "public");
  WriteRunManifest(fs::path(cfg.output_dir), "gen-data", cfg,
                   {{"datasets",
                     {{"train", Hex(LoadDataset(cfg.TrainDir()).hash)},
                      {"test", Hex(LoadDataset(cfg.TestDir()).hash)},
                      {"public", Hex(LoadDataset(cfg.PublicDir()).hash)}}}});
}

TrainResult RunPretrain(const TrainRunConfig& cfg) {
  cfg.Validate();
  const Dataset pub = LoadDataset(cfg.PublicDir());
  Require(pub.manifest.num_classes <= cfg.num_classes || !cfg.class_conditioned,
          ErrorCode::kConfig, "public set has more classes than the network");
  const std::vector<LatentExample> data = EncodeExamples(cfg, pub.samples);
  const NoiseSchedule schedule = cfg.Schedule();
  const NetConfig net = cfg.Net();
  NonPrivateOptions opts;
  opts.epochs = cfg.pretrain_epochs;
  opts.batch_size = cfg.pretrain_batch_size;
  opts.adam.lr = cfg.pretrain_lr;
  opts.label_mode = cfg.class_conditioned ? LabelMode::kConditional : LabelMode::kNull;
  opts.cfg_drop_p = cfg.pretrain_cfg_drop_p;
  const TrainContext ctx{net, &schedule, StageSeed(cfg, Stage::kPretrain)};
  TrainResult r = TrainNonPrivate(opts, ctx, InitParams(net, StageSeed(cfg, Stage::kInit)),
                                  data);
  const fs::path dir = PretrainDir(cfg);
  fs::create_directories(dir);
  SaveCheckpoint(dir / kCheckpointName, MakeCheckpoint(cfg, r));
  WriteRunManifest(dir, "pretrain", cfg,
                   {{"dataset_hash", Hex(pub.hash)},
                    {"steps", r.steps},
                    {"loss_trace", r.loss_trace}});
  return r;
}

FinetuneSummary RunFinetune(const TrainRunConfig& cfg) {
  cfg.Validate();
  const Dataset train = LoadDataset(cfg.TrainDir());
  Require(train.manifest.num_classes == cfg.num_classes, ErrorCode::kConfig,
          "training set class count differs from data.num_classes");
  const Checkpoint base = LoadModel(cfg, cfg.PretrainCheckpoint());
  const std::vector<LatentExample> data = EncodeExamples(cfg, train.samples);
  const NoiseSchedule schedule = cfg.Schedule();
  const TrainContext ctx{cfg.Net(), &schedule, StageSeed(cfg, Stage::kFinetune)};
  const fs::path dir = FinetuneDir(cfg);
  fs::create_directories(dir);
  FinetuneSummary summary;
  json runs = json::object();
  double consumed = 0.0;
  if (cfg.dp.strategy == Strategy::kPerLabel) {
    summary.results = PerLabelFinetune(cfg.dp, ctx, base.params, data, cfg.num_classes,
                                       cfg.epsilon, cfg.delta);
    for (const auto& [label, r] : summary.results) {
      const fs::path sub = dir / ("label_" + std::to_string(label));
      fs::create_directories(sub);
      Checkpoint c = MakeCheckpoint(cfg, r);
      c.meta["label"] = std::to_string(label);
      SaveCheckpoint(sub / kCheckpointName, c);
      runs["label_" + std::to_string(label)] = TrainJson(r);
      // Disjoint subsets: the release is as private as its worst model.
      consumed = std::max(consumed, r.consumed_epsilon);
    }
  } else {
    TrainResult r = CondCfgFinetune(cfg.dp, ctx, base.params, data, cfg.epsilon, cfg.delta);
    SaveCheckpoint(dir / kCheckpointName, MakeCheckpoint(cfg, r));
    runs["all"] = TrainJson(r);
    consumed = r.consumed_epsilon;
    summary.results.emplace(-1, std::move(r));
  }
  WriteRunManifest(dir, "finetune-dp", cfg,
                   {{"dataset_hash", Hex(train.hash)},
                    {"consumed_epsilon", consumed},
                    {"runs", runs}});
  return summary;
}

void RunSample(const TrainRunConfig& cfg) {
  cfg.Validate();
  const Dataset train = LoadDataset(cfg.TrainDir());
  const std::uint64_t seed = StageSeed(cfg, Stage::kSample);
  const int n = cfg.samples_per_class;
  const fs::path out = SamplesDir(cfg);
  std::optional<Checkpoint> shared;
  if (cfg.dp.strategy == Strategy::kCondCfg) {
    shared = LoadModel(cfg, FinetuneDir(cfg) / kCheckpointName);
  }
  for (int k = 0; k < cfg.num_classes; ++k) {
    // Layouts are drawn from this class's training records.
    std::vector<const DocSample*> pool;
    for (const DocSample& s : train.samples) {
      if (s.label == k) pool.push_back(&s);
    }
    Require(!pool.empty(), ErrorCode::kInvalidArgument,
            "no training records for class " + std::to_string(k));
    std::vector<LayoutBBoxes> layouts;
    if (cfg.layout_conditioned) {
      for (int i = 0; i < n; ++i) {
        Rng rng = Rng::Stream(seed, StreamTag::kLayoutPick,
                              {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i)});
        layouts.push_back(
            pool[static_cast<std::size_t>(rng.UniformInt(0, static_cast<int>(pool.size()) - 1))]
                ->boxes);
      }
    }
    std::vector<Tensor> images;
    const std::uint64_t class_seed = MixSeed(seed, static_cast<std::uint64_t>(k));
    if (shared) {
      std::vector<ClassLabel> labels(static_cast<std::size_t>(n),
                                     ClassLabel::Of(k, cfg.num_classes));
      images = Generate(cfg, *shared, labels, layouts, class_seed);
    } else {
      const Checkpoint model = LoadModel(
          cfg, FinetuneDir(cfg) / ("label_" + std::to_string(k)) / kCheckpointName);
      std::vector<ClassLabel> labels(static_cast<std::size_t>(n), ClassLabel::Null());
      images = Generate(cfg, model, labels, layouts, class_seed);
    }
    SaveSamples(out / ClassDirName(k), images, std::vector<int>(images.size(), k),
                cfg.num_classes, layouts);
  }
  WriteRunManifest(out, "sample", cfg, {{"dataset_hash", Hex(train.hash)}});
}

Dataset LoadSampleSet(const fs::path& samples_dir) {
  Dataset all;
  for (int k = 0;; ++k) {
    const fs::path dir = samples_dir / ClassDirName(k);
    if (!fs::exists(dir / kManifestName)) break;
    Dataset d = LoadDataset(dir);
    if (k == 0) {
      all.manifest.num_classes = d.manifest.num_classes;
      all.manifest.split = d.manifest.split;
    }
    all.hash = Fnv1a(&d.hash, sizeof(d.hash), all.hash);
    for (auto& r : d.manifest.records) all.manifest.records.push_back(r);
    for (auto& s : d.samples) all.samples.push_back(std::move(s));
  }
  Require(!all.samples.empty(), ErrorCode::kIo,
          "no class_<k> sample sets under " + samples_dir.string());
  return all;
}

EvalReportRow RunEvaluate(const TrainRunConfig& cfg, const std::string& run_id) {
  cfg.Validate();
  const Dataset test = LoadDataset(cfg.TestDir());
  const Dataset synth = LoadSampleSet(SamplesDir(cfg));
  auto split = [](const Dataset& d) {
    std::pair<std::vector<Tensor>, std::vector<int>> out;
    for (const DocSample& s : d.samples) {
      out.first.push_back(s.image);
      out.second.push_back(s.label);
    }
    return out;
  };
  const auto [test_x, test_y] = split(test);
  const auto [syn_x, syn_y] = split(synth);
  EvalReportRow row;
  row.run_id = run_id;
  row.desk_fid = DeskFid(test_x, syn_x);
  ClassifierOptions opts;
  opts.epochs = cfg.classifier_epochs;
  opts.batch_size = cfg.classifier_batch_size;
  opts.lr = cfg.classifier_lr;
  const DownstreamResult acc = TrainDownstream(syn_x, syn_y, test_x, test_y, cfg.num_classes,
                                               StageSeed(cfg, Stage::kEvaluate), opts);
  row.accuracy = acc.accuracy;
  row.per_class_accuracy = acc.per_class_accuracy;
  row.consumed_epsilon = FinetuneEpsilon(cfg);
  fs::create_directories(cfg.output_dir);
  AppendEvalReport(ReportPath(cfg), row);
  const fs::path eval_dir = fs::path(cfg.output_dir) / "evaluate";
  fs::create_directories(eval_dir);
  WriteRunManifest(eval_dir, "evaluate", cfg,
                   {{"run_id", run_id},
                    {"test_hash", Hex(test.hash)},
                    {"samples_hash", Hex(synth.hash)},
                    {"desk_fid", row.desk_fid},
                    {"accuracy", row.accuracy},
                    {"per_class_accuracy", row.per_class_accuracy}});
  return row;
}

std::vector<SigmaReport> RunCalibrateSigma(const TrainRunConfig& cfg) {
  cfg.Validate();
  const Dataset train = LoadDataset(cfg.TrainDir());
  const AccountantKind kind = cfg.dp.algorithm == Algorithm::kDpPromise
                                  ? AccountantKind::kGdp : AccountantKind::kRdp;
  std::vector<std::pair<std::string, std::size_t>> subsets;
  if (cfg.dp.strategy == Strategy::kPerLabel) {
    for (int k = 0; k < cfg.num_classes; ++k) {
      const auto n = static_cast<std::size_t>(std::count_if(
          train.samples.begin(), train.samples.end(),
          [k](const DocSample& s) { return s.label == k; }));
      Require(n > 0, ErrorCode::kInvalidArgument,
              "empty label subset: " + std::to_string(k));
      subsets.emplace_back("label " + std::to_string(k), n);
    }
  } else {
    subsets.emplace_back("all", train.samples.size());
  }
  std::vector<SigmaReport> out;
  for (const auto& [name, n] : subsets) {
    SigmaReport r;
    r.subset = name;
    r.n = n;
    r.q = SamplingRate(cfg.dp.batch_size, n);
    r.steps = StepsForEpochs(cfg.dp.epochs, r.q);
    r.delta = cfg.delta > 0.0 ? cfg.delta : 1.0 / static_cast<double>(n);
    r.calibration = CalibrateSigma({cfg.epsilon, r.delta}, r.q, r.steps, kind);
    out.push_back(r);
  }
  return out;
}

}  // namespace dpldm

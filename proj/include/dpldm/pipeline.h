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

#ifndef DPLDM_PIPELINE_H_
#define DPLDM_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dpldm/checkpoint.h"
#include "dpldm/dataset_io.h"
#include "dpldm/dp_optimizer.h"
#include "dpldm/eval.h"
#include "dpldm/run_config.h"
#include "dpldm/synth_docgen.h"

namespace dpldm {

// Stage directories below TrainRunConfig::output_dir.
std::filesystem::path PretrainDir(const TrainRunConfig& cfg);
std::filesystem::path FinetuneDir(const TrainRunConfig& cfg);
std::filesystem::path SamplesDir(const TrainRunConfig& cfg);
std::filesystem::path ReportPath(const TrainRunConfig& cfg);
inline constexpr const char* kRunManifestName = "run.json";
inline constexpr const char* kCheckpointName = "model.ckpt";

// Independent sub-seeds of the run seed, one per stage.
enum class Stage : std::uint64_t {
  kInit = 1, kPretrain, kFinetune, kSample, kEvaluate
};
std::uint64_t StageSeed(const TrainRunConfig& cfg, Stage stage);

// Codec-space training examples: scaled image latents plus encoded layout
// masks when the network is layout conditioned.
std::vector<LatentExample> EncodeExamples(const TrainRunConfig& cfg,
                                          const std::vector<DocSample>& samples);

// Writes <train>, <test> and <public> datasets. The public set uses its own
// class templates.
void RunGenData(const TrainRunConfig& cfg);

// Non-private class- and layout-conditioned pretraining on the public set.
TrainResult RunPretrain(const TrainRunConfig& cfg);

struct FinetuneSummary {
  // Keyed by label for per-label runs; a single entry -1 for cond_cfg.
  std::map<int, TrainResult> results;
};

// Private fine-tuning from the pretrained checkpoint. Throws
// kBudgetExceeded (before the offending update) if the accountant would
// exceed the target epsilon.
FinetuneSummary RunFinetune(const TrainRunConfig& cfg);

// Generates samples_per_class images per class into
// <samples>/class_<k>/, each a dataset with generated labels.
void RunSample(const TrainRunConfig& cfg);

// Loads every class_<k> dataset under a samples directory.
Dataset LoadSampleSet(const std::filesystem::path& samples_dir);

// desk-FID against the real test split and downstream accuracy of a
// classifier trained on the samples; appends a row to the report.
EvalReportRow RunEvaluate(const TrainRunConfig& cfg, const std::string& run_id);

struct SigmaReport {
  std::string subset;  // "all" or "label <k>"
  std::size_t n = 0;
  double q = 0.0;
  long steps = 0;
  double delta = 0.0;
  Calibration calibration;
};

// The sigma each fine-tune of `cfg` would use.
std::vector<SigmaReport> RunCalibrateSigma(const TrainRunConfig& cfg);

}  // namespace dpldm

#endif  // DPLDM_PIPELINE_H_

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

// Command-line front end: gen-data, pretrain, finetune-dp, sample, evaluate,
// calibrate-sigma and report.
//
// Every subcommand reads a run config (flat key = value file, or the
// run.json manifest written by an earlier run) plus --set overrides.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpldm/error.h"
#include "dpldm/eval.h"
#include "dpldm/parallel.h"
#include "dpldm/pipeline.h"
#include "dpldm/privacy_accounting.h"
#include "dpldm/run_config.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using dpldm::ErrorCode;

enum ExitStatus {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitBudget = 4,
  kExitNumeric = 5,
};

int ExitFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kShapeMismatch:
      return kExitUsage;
    case ErrorCode::kIo:
    case ErrorCode::kCorrupt:
    case ErrorCode::kVersionMismatch:
      return kExitIo;
    case ErrorCode::kBudgetExceeded:
      return kExitBudget;
    case ErrorCode::kNonFinite:
    case ErrorCode::kNotConverged:
      return kExitNumeric;
  }
  return kExitInternal;
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string output_dir;
  int threads = 1;
};

dpldm::TrainRunConfig LoadConfig(const CommonFlags& f) {
  dpldm::TrainRunConfig cfg;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    dpldm::Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + f.config);
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      // A run manifest: replay its recorded config.
      const auto j = nlohmann::json::parse(text, nullptr, false);
      dpldm::Require(!j.is_discarded() && j.contains("config") && j["config"].is_object(),
                     ErrorCode::kConfig, "not a run manifest: " + f.config);
      for (const auto& [k, v] : j["config"].items()) {
        dpldm::Require(v.is_string(), ErrorCode::kConfig, "bad manifest value for " + k);
        dpldm::SetConfigValue(cfg, k, v.get<std::string>());
      }
    } else {
      cfg = dpldm::ParseRunConfig(text);
    }
  }
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    dpldm::Require(eq != std::string::npos, ErrorCode::kConfig,
                   "--set expects key=value, got '" + kv + "'");
    dpldm::SetConfigValue(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
  if (const char* root = std::getenv("DPLDM_OUTPUT_ROOT");
      root != nullptr && *root != '\0' && fs::path(cfg.output_dir).is_relative()) {
    cfg.output_dir = (fs::path(root) / cfg.output_dir).string();
  }
  cfg.Validate();
  return cfg;
}

void AddCommon(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "run config file or run.json manifest");
  cmd->add_option("--set", f.sets, "override a config key (key=value), repeatable");
  cmd->add_option("-o,--output-dir", f.output_dir, "output directory (overrides output_dir)");
  cmd->add_option("--threads", f.threads, "worker threads (results do not depend on it)")
      ->check(CLI::Range(1, 1024));
}

std::string Fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// One row per (subset, sigma, order). The GDP accountant has no order axis:
// its rows carry alpha "-" and mu in the rho column.
void PrintBudgetTable(const dpldm::TrainRunConfig& cfg,
                      const std::vector<dpldm::SigmaReport>& reports,
                      const std::vector<double>& extra_sigmas) {
  const bool gdp = cfg.dp.algorithm == dpldm::Algorithm::kDpPromise;
  std::printf("subset\tsigma\talpha\trho\tepsilon\n");
  for (const dpldm::SigmaReport& r : reports) {
    std::vector<double> sigmas = {r.calibration.sigma};
    sigmas.insert(sigmas.end(), extra_sigmas.begin(), extra_sigmas.end());
    for (double sigma : sigmas) {
      if (gdp) {
        std::printf("%s\t%.10g\t-\t%.10g\t%.10g\n", r.subset.c_str(), sigma,
                    dpldm::GdpMu(r.q, sigma, r.steps),
                    dpldm::GdpEpsilon(r.q, sigma, r.steps, r.delta));
        continue;
      }
      dpldm::AccountantQuery query;
      query.q = r.q;
      query.sigma = sigma;
      query.steps = r.steps;
      const dpldm::RdpCurve curve = dpldm::RdpSubsampledGaussian(query);
      for (std::size_t i = 0; i < curve.orders.size(); ++i) {
        const double eps =
            curve.rho[i] - std::log(r.delta) / (curve.orders[i] - 1);
        std::printf("%s\t%.10g\t%d\t%.10g\t%.10g\n", r.subset.c_str(), sigma,
                    curve.orders[i], curve.rho[i], eps);
      }
    }
  }
}

void PrintReport(const std::vector<std::string>& files) {
  std::map<std::string, std::vector<dpldm::EvalReportRow>> by_file;
  std::printf("%-32s %12s %10s %10s  %s\n", "run_id", "desk_fid", "accuracy",
              "epsilon", "per_class");
  for (const std::string& path : files) {
    for (const dpldm::EvalReportRow& r : dpldm::ReadEvalReport(path)) {
      std::string per_class;
      for (double a : r.per_class_accuracy) per_class += Fmt(a) + " ";
      std::printf("%-32s %12s %10s %10s  %s\n", r.run_id.c_str(), Fmt(r.desk_fid).c_str(),
                  Fmt(r.accuracy).c_str(), Fmt(r.consumed_epsilon).c_str(),
                  per_class.c_str());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  dpldm::RetainFreedMemory();
  CLI::App app{"Differentially private latent diffusion for document images"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/test/public sets");
  auto* pretrain = app.add_subcommand("pretrain", "non-private pretraining on the public set");
  auto* finetune = app.add_subcommand("finetune-dp", "private fine-tuning on the train set");
  auto* sample = app.add_subcommand("sample", "generate a synthetic dataset");
  bool per_label = false;
  sample->add_flag("--per-label", per_label, "sample from per-label models");
  auto* evaluate = app.add_subcommand("evaluate", "desk-FID and downstream accuracy");
  std::string run_id;
  evaluate->add_option("--run-id", run_id, "row name in the report (default: output dir)");
  auto* calibrate = app.add_subcommand("calibrate-sigma", "noise multiplier for a budget");
  std::string epsilon_flag, delta_flag;
  calibrate->add_option("--epsilon", epsilon_flag, "target epsilon");
  calibrate->add_option("--delta", delta_flag, "target delta or auto (1/N)");
  bool budget_table = false;
  std::vector<double> extra_sigmas;
  calibrate->add_flag("--table", budget_table,
                      "also print the tab-separated budget table (alpha, rho, epsilon)");
  calibrate->add_option("--candidate", extra_sigmas,
                        "extra sigma to tabulate, repeatable")
      ->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "print evaluation reports");
  std::vector<std::string> report_files;
  report->add_option("files", report_files, "report files")->required();

  for (CLI::App* cmd : {gen, pretrain, finetune, sample, evaluate, calibrate}) {
    AddCommon(cmd, flags);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (report->parsed()) {
      PrintReport(report_files);
      return kExitOk;
    }
    if (calibrate->parsed()) {
      if (!epsilon_flag.empty()) flags.sets.push_back("privacy.epsilon=" + epsilon_flag);
      if (!delta_flag.empty()) flags.sets.push_back("privacy.delta=" + delta_flag);
    }
    if (sample->parsed() && per_label) flags.sets.push_back("dp.strategy=per_label");
    const dpldm::TrainRunConfig cfg = LoadConfig(flags);
    dpldm::SetThreadCount(flags.threads);

    if (gen->parsed()) {
      dpldm::RunGenData(cfg);
      std::printf("wrote %s, %s, %s\n", cfg.TrainDir().c_str(), cfg.TestDir().c_str(),
                  cfg.PublicDir().c_str());
    } else if (pretrain->parsed()) {
      const dpldm::TrainResult r = dpldm::RunPretrain(cfg);
      std::printf("pretrained %ld steps, final loss %s -> %s\n", r.steps,
                  r.loss_trace.empty() ? "n/a" : Fmt(r.loss_trace.back()).c_str(),
                  (dpldm::PretrainDir(cfg) / dpldm::kCheckpointName).c_str());
    } else if (finetune->parsed()) {
      const dpldm::FinetuneSummary s = dpldm::RunFinetune(cfg);
      for (const auto& [label, r] : s.results) {
        std::printf("%s: sigma %s, q %s, steps %ld, epsilon %s (delta %s)\n",
                    label < 0 ? "all" : ("label " + std::to_string(label)).c_str(),
                    Fmt(r.sigma).c_str(), Fmt(r.q).c_str(), r.steps,
                    Fmt(r.consumed_epsilon).c_str(), Fmt(r.delta).c_str());
      }
    } else if (sample->parsed()) {
      dpldm::RunSample(cfg);
      std::printf("wrote %d samples per class to %s\n", cfg.samples_per_class,
                  dpldm::SamplesDir(cfg).c_str());
    } else if (evaluate->parsed()) {
      const std::string id =
          run_id.empty() ? fs::path(cfg.output_dir).filename().string() : run_id;
      const dpldm::EvalReportRow r = dpldm::RunEvaluate(cfg, id);
      std::printf("%s: desk-FID %s, accuracy %s, epsilon %s\n", id.c_str(),
                  Fmt(r.desk_fid).c_str(), Fmt(r.accuracy).c_str(),
                  Fmt(r.consumed_epsilon).c_str());
    } else if (calibrate->parsed()) {
      const std::vector<dpldm::SigmaReport> reports = dpldm::RunCalibrateSigma(cfg);
      for (const dpldm::SigmaReport& r : reports) {
        std::printf("%s: n %zu, q %s, steps %ld, delta %s -> sigma %.10g, epsilon %.10g\n",
                    r.subset.c_str(), r.n, Fmt(r.q).c_str(), r.steps,
                    Fmt(r.delta).c_str(), r.calibration.sigma,
                    r.calibration.achieved_epsilon);
      }
      if (budget_table) PrintBudgetTable(cfg, reports, extra_sigmas);
    }
    return kExitOk;
  } catch (const dpldm::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n",
                 std::string(dpldm::ErrorCodeName(e.code())).c_str(), e.what());
    return ExitFor(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return kExitInternal;
  }
}

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

#ifndef DPLDM_EVAL_H_
#define DPLDM_EVAL_H_

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpldm/tensor.h"

namespace dpldm {

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline constexpr int kFeatureDim = 64;
// Pinned forever: changing it changes every desk-FID value.
inline constexpr std::uint64_t kFeatureSeed = 0x5eed0f1d;

// Frozen random-projection features: conv 3x3 stride 2 (1 -> 32), ReLU,
// conv 3x3 stride 2 (32 -> 64), ReLU, global average pool.
class FeatureExtractor {
 public:
  FeatureExtractor();

  // image: [1, H, W].
  Eigen::VectorXd Extract(const Tensor& image) const;
  // Rows are samples.
  Eigen::MatrixXd ExtractBatch(std::span<const Tensor> images) const;

 private:
  std::vector<double> w1_, w2_;
};

// Sample mean and unbiased covariance (symmetrized). Rows are samples.
GaussianFit FitGaussian(const Eigen::MatrixXd& features);

// Principal square root of a symmetric PSD matrix. Eigenvalues in
// [-1e-8 * scale, 0) are clamped; anything more negative is an error.
Eigen::MatrixXd SqrtPsd(const Eigen::MatrixXd& a);

// (A B)^{1/2} for symmetric positive definite A and symmetric PSD B, as
// A^{1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}.
Eigen::MatrixXd SqrtOfProduct(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the product
// root is taken from the eigenvalues of S1^{1/2} S2 S1^{1/2}.
double FrechetDistance(const GaussianFit& a, const GaussianFit& b);

// Frechet distance between feature fits of two image sets.
double DeskFid(std::span<const Tensor> real, std::span<const Tensor> generated);

struct ClassifierOptions {
  int epochs = 12;
  int batch_size = 32;
  double lr = 2e-3;
};

struct DownstreamResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
};

// Trains conv(1->8, s2) ReLU conv(8->16, s2) ReLU -> linear(K) with softmax
// cross-entropy and Adam on the training set and reports top-1 accuracy on
// the test set.
DownstreamResult TrainDownstream(std::span<const Tensor> train_images,
                                 std::span<const int> train_labels,
                                 std::span<const Tensor> test_images,
                                 std::span<const int> test_labels,
                                 int num_classes, std::uint64_t seed,
                                 const ClassifierOptions& opts = {});

struct EvalReportRow {
  std::string run_id;
  double desk_fid = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  double consumed_epsilon = 0.0;
};

// Tab-separated, one header line. Appends when the file already exists.
void AppendEvalReport(const std::filesystem::path& path, const EvalReportRow& row);
std::vector<EvalReportRow> ReadEvalReport(const std::filesystem::path& path);

}  // namespace dpldm

#endif  // DPLDM_EVAL_H_

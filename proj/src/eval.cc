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

#include "dpldm/eval.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dpldm/error.h"
#include "dpldm/nn_ops.h"
#include "dpldm/parallel.h"
#include "dpldm/rng.h"

namespace dpldm {
namespace {

constexpr int kF1 = 32;

nn::Mat ImageMat(const Tensor& image) {
  Require(image.rank() == 3 && image.dim(0) == 1, ErrorCode::kShapeMismatch,
          "expected a [1, H, W] image, got " + ShapeString(image.shape()));
  nn::Mat x(1, image.dim(1) * image.dim(2));
  std::copy(image.data(), image.data() + image.size(), x.data());
  return x;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParseDouble(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    // from_chars rejects "inf"; accept the spellings to_chars produces.
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
    Fail(ErrorCode::kCorrupt, "bad number '" + s + "' in " + what);
  }
  return v;
}

}  // namespace

FeatureExtractor::FeatureExtractor()
    : w1_(static_cast<std::size_t>(kF1) * 9),
      w2_(static_cast<std::size_t>(kFeatureDim) * kF1 * 9) {
  Rng rng = Rng::Stream(kFeatureSeed, StreamTag::kFeatures);
  nn::FanInUniform(w1_.data(), w1_.size(), 9, rng);
  nn::FanInUniform(w2_.data(), w2_.size(), kF1 * 9, rng);
}

Eigen::VectorXd FeatureExtractor::Extract(const Tensor& image) const {
  const nn::Mat x = ImageMat(image);
  const int h = image.dim(1), w = image.dim(2);
  nn::Mat cols;
  const nn::ConstMatMap k1(w1_.data(), kF1, 9);
  const nn::Mat a1 = nn::Relu(nn::Conv3x3(x, h, w, 2, k1, nullptr, cols));
  const int h1 = nn::ConvOut(h, 2), w1 = nn::ConvOut(w, 2);
  const nn::ConstMatMap k2(w2_.data(), kFeatureDim, kF1 * 9);
  const nn::Mat a2 = nn::Relu(nn::Conv3x3(a1, h1, w1, 2, k2, nullptr, cols));
  return a2.rowwise().mean();
}

Eigen::MatrixXd FeatureExtractor::ExtractBatch(std::span<const Tensor> images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), kFeatureDim);
  ParallelFor(static_cast<int>(images.size()), [&](int i) {
    out.row(i) = Extract(images[static_cast<std::size_t>(i)]).transpose();
  });
  return out;
}

GaussianFit FitGaussian(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.rows();
  Require(n >= 2, ErrorCode::kInvalidArgument,
          "need at least 2 samples to fit a Gaussian");
  GaussianFit fit;
  fit.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - fit.mean.transpose();
  fit.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose()).eval();
  return fit;
}

namespace {

Eigen::VectorXd ClampedEigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8 * scale) {
      Fail(ErrorCode::kInvalidArgument,
           std::string(what) + " is not positive semidefinite (eigenvalue " +
               FormatDouble(ev[i]) + ")");
    }
    out[i] = std::max(0.0, ev[i]);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd SqrtPsd(const Eigen::MatrixXd& a) {
  Require(a.rows() == a.cols(), ErrorCode::kShapeMismatch, "matrix not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = ClampedEigenvalues(es.eigenvalues(), "matrix");
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

Eigen::MatrixXd SqrtOfProduct(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch,
          "matrix size mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = es.eigenvalues();
  Require(ev.minCoeff() > 0.0, ErrorCode::kInvalidArgument,
          "first factor must be positive definite");
  const Eigen::MatrixXd& u = es.eigenvectors();
  const Eigen::MatrixXd s = u * ev.cwiseSqrt().asDiagonal() * u.transpose();
  const Eigen::MatrixXd s_inv =
      u * ev.cwiseSqrt().cwiseInverse().asDiagonal() * u.transpose();
  Eigen::MatrixXd inner = s * b * s;
  inner = 0.5 * (inner + inner.transpose()).eval();
  return s * SqrtPsd(inner) * s_inv;
}

double FrechetDistance(const GaussianFit& a, const GaussianFit& b) {
  Require(a.mean.size() == b.mean.size() && a.cov.rows() == b.cov.rows() &&
              a.cov.rows() == a.mean.size(),
          ErrorCode::kShapeMismatch, "Gaussian fits differ in dimension");
  const Eigen::MatrixXd s1 = SqrtPsd(a.cov);
  // Also validates b.cov.
  (void)SqrtPsd(b.cov);
  Eigen::MatrixXd inner = s1 * b.cov * s1;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = ClampedEigenvalues(es.eigenvalues(), "covariance product");
  const double tr_root = ev.cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() +
                   b.cov.trace() - 2.0 * tr_root;
  return std::max(0.0, d);
}

double DeskFid(std::span<const Tensor> real, std::span<const Tensor> generated) {
  const FeatureExtractor fx;
  return FrechetDistance(FitGaussian(fx.ExtractBatch(real)),
                         FitGaussian(fx.ExtractBatch(generated)));
}

namespace {

constexpr int kC1 = 8;
constexpr int kC2 = 16;

struct Classifier {
  int h = 0, w = 0, h1 = 0, w1 = 0, h2 = 0, w2 = 0, k = 0, flat = 0;
  // Parameter layout: w1, b1, w2, b2, w3, b3.
  std::vector<double> p;
  std::size_t o_w1 = 0, o_b1 = 0, o_w2 = 0, o_b2 = 0, o_w3 = 0, o_b3 = 0;

  Classifier(int height, int width, int classes) : h(height), w(width), k(classes) {
    h1 = nn::ConvOut(h, 2);
    w1 = nn::ConvOut(w, 2);
    h2 = nn::ConvOut(h1, 2);
    w2 = nn::ConvOut(w1, 2);
    flat = kC2 * h2 * w2;
    o_b1 = o_w1 + kC1 * 9;
    o_w2 = o_b1 + kC1;
    o_b2 = o_w2 + static_cast<std::size_t>(kC2) * kC1 * 9;
    o_w3 = o_b2 + kC2;
    o_b3 = o_w3 + static_cast<std::size_t>(k) * flat;
    p.assign(o_b3 + static_cast<std::size_t>(k), 0.0);
  }

  void Init(Rng& rng) {
    nn::FanInUniform(p.data() + o_w1, kC1 * 9, 9, rng);
    nn::FanInUniform(p.data() + o_w2, static_cast<std::size_t>(kC2) * kC1 * 9,
                     kC1 * 9, rng);
    nn::FanInUniform(p.data() + o_w3, static_cast<std::size_t>(k) * flat, flat, rng);
  }

  nn::ConstMatMap W1() const { return {p.data() + o_w1, kC1, 9}; }
  nn::ConstMatMap W2() const { return {p.data() + o_w2, kC2, kC1 * 9}; }
  nn::ConstMatMap W3() const { return {p.data() + o_w3, k, flat}; }

  Eigen::VectorXd Logits(const Tensor& image) const {
    nn::Mat cols;
    const nn::Mat a1 = nn::Conv3x3(ImageMat(image), h, w, 2, W1(), p.data() + o_b1, cols);
    const nn::Mat a2 = nn::Conv3x3(nn::Relu(a1), h1, w1, 2, W2(), p.data() + o_b2, cols);
    const nn::Mat r2 = nn::Relu(a2);
    const nn::ConstVecMap f(r2.data(), flat);
    return W3() * f + nn::ConstVecMap(p.data() + o_b3, k);
  }

  // Adds d(cross-entropy)/d p into grad; returns the loss.
  double Backprop(const Tensor& image, int label, std::vector<double>& grad) const {
    const nn::Mat x = ImageMat(image);
    nn::Mat cols1, cols2;
    const nn::Mat a1 = nn::Conv3x3(x, h, w, 2, W1(), p.data() + o_b1, cols1);
    const nn::Mat r1 = nn::Relu(a1);
    const nn::Mat a2 = nn::Conv3x3(r1, h1, w1, 2, W2(), p.data() + o_b2, cols2);
    const nn::Mat r2 = nn::Relu(a2);
    const nn::ConstVecMap f(r2.data(), flat);
    Eigen::VectorXd logits = W3() * f + nn::ConstVecMap(p.data() + o_b3, k);
    const double m = logits.maxCoeff();
    Eigen::VectorXd prob = (logits.array() - m).exp();
    const double z = prob.sum();
    prob /= z;
    const double loss = -(logits[label] - m - std::log(z));
    Eigen::VectorXd dlogits = prob;
    dlogits[label] -= 1.0;
    nn::MatMap dw3(grad.data() + o_w3, k, flat);
    dw3.noalias() += dlogits * f.transpose();
    nn::VecMap(grad.data() + o_b3, k) += dlogits;
    nn::Mat dr2(kC2, h2 * w2);
    nn::VecMap(dr2.data(), flat) = W3().transpose() * dlogits;
    const nn::Mat da2 = nn::ReluBackward(a2, dr2);
    nn::MatMap dw2(grad.data() + o_w2, kC2, kC1 * 9);
    nn::Mat dr1;
    nn::Conv3x3Backward(da2, cols2, h1, w1, 2, W2(), dw2, grad.data() + o_b2, &dr1);
    const nn::Mat da1 = nn::ReluBackward(a1, dr1);
    nn::MatMap dw1(grad.data() + o_w1, kC1, 9);
    nn::Conv3x3Backward(da1, cols1, h, w, 2, W1(), dw1, grad.data() + o_b1, nullptr);
    return loss;
  }
};

void CheckLabels(std::span<const int> labels, int k, const char* what) {
  for (int y : labels) {
    Require(y >= 0 && y < k, ErrorCode::kInvalidArgument,
            std::string(what) + " label " + std::to_string(y) +
                " outside [0, " + std::to_string(k) + ")");
  }
}

}  // namespace

DownstreamResult TrainDownstream(std::span<const Tensor> train_images,
                                 std::span<const int> train_labels,
                                 std::span<const Tensor> test_images,
                                 std::span<const int> test_labels,
                                 int num_classes, std::uint64_t seed,
                                 const ClassifierOptions& opts) {
  Require(num_classes >= 2, ErrorCode::kInvalidArgument, "need >= 2 classes");
  Require(!train_images.empty() && !test_images.empty(),
          ErrorCode::kInvalidArgument, "empty train or test set");
  Require(train_images.size() == train_labels.size() &&
              test_images.size() == test_labels.size(),
          ErrorCode::kShapeMismatch, "image/label count mismatch");
  CheckLabels(train_labels, num_classes, "training");
  CheckLabels(test_labels, num_classes, "test");
  const std::vector<int> shape = train_images[0].shape();
  Require(shape.size() == 3 && shape[0] == 1, ErrorCode::kShapeMismatch,
          "expected [1, H, W] images");
  for (const Tensor& t : train_images) RequireSameShape(train_images[0], t, "train image");
  for (const Tensor& t : test_images) RequireSameShape(train_images[0], t, "test image");

  Classifier net(shape[1], shape[2], num_classes);
  Rng init = Rng::Stream(seed, StreamTag::kClassifier, {0});
  net.Init(init);
  const std::size_t dim = net.p.size();
  std::vector<double> m(dim, 0.0), v(dim, 0.0), grad(dim);
  const int n = static_cast<int>(train_images.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  long step = 0;
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  for (int ep = 0; ep < opts.epochs; ++ep) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::Stream(seed, StreamTag::kClassifier,
                              {1, static_cast<std::uint64_t>(ep)});
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    for (int start = 0; start < n; start += opts.batch_size) {
      const int end = std::min(n, start + opts.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (int j = start; j < end; ++j) {
        const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(j)]);
        net.Backprop(train_images[idx], train_labels[idx], grad);
      }
      ++step;
      const double inv = 1.0 / (end - start);
      const double c1 = 1.0 - std::pow(kB1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kB2, static_cast<double>(step));
      for (std::size_t i = 0; i < dim; ++i) {
        const double g = grad[i] * inv;
        m[i] = kB1 * m[i] + (1.0 - kB1) * g;
        v[i] = kB2 * v[i] + (1.0 - kB2) * g * g;
        net.p[i] -= opts.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  }

  DownstreamResult r;
  std::vector<int> correct(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> total(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> pred(test_images.size());
  ParallelFor(static_cast<int>(test_images.size()), [&](int i) {
    Eigen::Index arg = 0;
    net.Logits(test_images[static_cast<std::size_t>(i)]).maxCoeff(&arg);
    pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  });
  int hits = 0;
  for (std::size_t i = 0; i < test_images.size(); ++i) {
    const auto y = static_cast<std::size_t>(test_labels[i]);
    ++total[y];
    if (pred[i] == test_labels[i]) {
      ++correct[y];
      ++hits;
    }
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(test_images.size());
  for (int c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    r.per_class_accuracy.push_back(
        total[ci] > 0 ? static_cast<double>(correct[ci]) / total[ci] : 0.0);
  }
  return r;
}

namespace {

constexpr const char* kReportHeader =
    "run_id\tdesk_fid\taccuracy\tper_class_accuracy\tconsumed_epsilon";

}  // namespace

void AppendEvalReport(const std::filesystem::path& path, const EvalReportRow& row) {
  Require(row.run_id.find_first_of("\t\n") == std::string::npos,
          ErrorCode::kInvalidArgument, "run id may not contain tabs or newlines");
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  Require(static_cast<bool>(out), ErrorCode::kIo,
          "cannot open report " + path.string());
  if (fresh) out << kReportHeader << '\n';
  std::string per_class;
  for (std::size_t i = 0; i < row.per_class_accuracy.size(); ++i) {
    if (i > 0) per_class += ',';
    per_class += FormatDouble(row.per_class_accuracy[i]);
  }
  out << row.run_id << '\t' << FormatDouble(row.desk_fid) << '\t'
      << FormatDouble(row.accuracy) << '\t' << per_class << '\t'
      << FormatDouble(row.consumed_epsilon) << '\n';
  Require(static_cast<bool>(out), ErrorCode::kIo,
          "failed writing report " + path.string());
}

std::vector<EvalReportRow> ReadEvalReport(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open report " + path.string());
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)) && line == kReportHeader,
          ErrorCode::kCorrupt, "bad report header in " + path.string());
  std::vector<EvalReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (!line.empty() && line.back() == '\t') f.emplace_back();
    Require(f.size() == 5, ErrorCode::kCorrupt,
            "report row has " + std::to_string(f.size()) + " fields");
    EvalReportRow r;
    r.run_id = f[0];
    r.desk_fid = ParseDouble(f[1], "report");
    r.accuracy = ParseDouble(f[2], "report");
    std::stringstream pc(f[3]);
    while (std::getline(pc, cell, ',')) {
      r.per_class_accuracy.push_back(ParseDouble(cell, "report"));
    }
    r.consumed_epsilon = ParseDouble(f[4], "report");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace dpldm

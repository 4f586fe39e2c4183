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

#include "dpldm/tensor.h"

#include <cmath>
#include <utility>

#include "dpldm/error.h"

namespace dpldm {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kCorrupt: return "corrupt";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kBudgetExceeded: return "budget_exceeded";
    case ErrorCode::kNotConverged: return "not_converged";
  }
  return "unknown";
}

std::size_t ShapeSize(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    Require(d >= 0, ErrorCode::kInvalidArgument, "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string ShapeString(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), values_(ShapeSize(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  Require(values_.size() == ShapeSize(shape_), ErrorCode::kShapeMismatch,
          "value count does not match shape " + ShapeString(shape_));
}

double Tensor::SquaredNorm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

bool Tensor::AllFinite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.SameShape(b)) {
    Fail(ErrorCode::kShapeMismatch, std::string(what) + ": " +
                                        ShapeString(a.shape()) + " vs " +
                                        ShapeString(b.shape()));
  }
}

}  // namespace dpldm

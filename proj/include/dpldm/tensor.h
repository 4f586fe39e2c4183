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

#ifndef DPLDM_TENSOR_H_
#define DPLDM_TENSOR_H_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dpldm {

// Dense row-major tensor of doubles with a small shape vector. Value type.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor Zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // 3-D accessor for [C, H, W] tensors.
  double& at(int c, int y, int x) {
    return values_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return values_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  bool SameShape(const Tensor& other) const { return shape_ == other.shape_; }
  double SquaredNorm() const;
  bool AllFinite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> values_;
};

std::string ShapeString(const std::vector<int>& shape);
std::size_t ShapeSize(const std::vector<int>& shape);

// Throws kShapeMismatch naming `what` when the shapes differ.
void RequireSameShape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace dpldm

#endif  // DPLDM_TENSOR_H_

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

#ifndef DPLDM_CONDITIONING_H_
#define DPLDM_CONDITIONING_H_

#include <filesystem>
#include <optional>
#include <vector>

#include "dpldm/rng.h"
#include "dpldm/tensor.h"

namespace dpldm {

// Class label or the null label used for classifier-free guidance.
class ClassLabel {
 public:
  static ClassLabel Null() { return ClassLabel(); }
  // Throws kOutOfRange unless 0 <= index < num_classes.
  static ClassLabel Of(int index, int num_classes);

  bool is_null() const { return !index_.has_value(); }
  int index() const;  // Throws on the null label.

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;

 private:
  ClassLabel() = default;
  explicit ClassLabel(int index) : index_(index) {}
  std::optional<int> index_;
};

// Normalized line-level text box, half-open: [x0, x1) x [y0, y1).
struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

using LayoutBBoxes = std::vector<BBox>;

// Binary raster [1, H, W] with entries in {0, 1}.
struct LayoutMask {
  Tensor data;
};

void ValidateBoxes(const LayoutBBoxes& boxes);

// Sets a pixel iff its center lies inside any box.
LayoutMask RasterizeLayout(const LayoutBBoxes& boxes, int height, int width);

// Returns the null label with probability p, otherwise `label`.
ClassLabel DropLabel(const ClassLabel& label, double p, Rng& rng);

// eps_uncond + scale * (eps_cond - eps_uncond). scale 1 is plain
// conditional prediction; scale 0 is unconditional.
Tensor CfgCombine(const Tensor& eps_uncond, const Tensor& eps_cond,
                  double scale);

// Sidecar format: one box per line, "x0 y0 x1 y1" as decimals.
LayoutBBoxes LoadBBoxes(const std::filesystem::path& path);
void SaveBBoxes(const std::filesystem::path& path, const LayoutBBoxes& boxes);

}  // namespace dpldm

#endif  // DPLDM_CONDITIONING_H_

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

#ifndef DPLDM_SYNTH_DOCGEN_H_
#define DPLDM_SYNTH_DOCGEN_H_

#include <cstdint>
#include <vector>

#include "dpldm/conditioning.h"
#include "dpldm/tensor.h"

namespace dpldm {

// Pixel rectangle, half-open.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// One document class: dark header blocks and text-line bands on a white
// page, in page coordinates before jitter.
struct ClassTemplate {
  std::vector<PixelRect> blocks;
  std::vector<PixelRect> lines;
};

struct DocGenOptions {
  int num_classes = 4;
  int per_class = 500;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
  // Templates come from their own seed so that a "public" set can use
  // different document classes than a "private" one.
  std::uint64_t template_seed = 0;
  // Maximum page shift in pixels. 0 also disables line-length variation and
  // word gaps, rendering the bare templates.
  int jitter = 1;

  void Validate() const;
};

struct DocSample {
  Tensor image;  // [1, H, W]; page +1, ink -1
  int label = 0;
  LayoutBBoxes boxes;
};

// Any two templates differ in at least 5% of their pixels.
std::vector<ClassTemplate> MakeTemplates(int num_classes, int height, int width,
                                         std::uint64_t template_seed);

Tensor RenderTemplate(const ClassTemplate& t, int height, int width);

// Record i has label i % num_classes and draws from its own stream, so a
// record does not depend on how many others are generated.
std::vector<DocSample> GenerateDocuments(const DocGenOptions& opts);

}  // namespace dpldm

#endif  // DPLDM_SYNTH_DOCGEN_H_

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

#include "dpldm/conditioning.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "dpldm/error.h"

namespace dpldm {
namespace {

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

ClassLabel ClassLabel::Of(int index, int num_classes) {
  if (index < 0 || index >= num_classes) {
    Fail(ErrorCode::kOutOfRange, "class index " + std::to_string(index) +
                                     " outside [0, " +
                                     std::to_string(num_classes) + ")");
  }
  return ClassLabel(index);
}

int ClassLabel::index() const {
  Require(index_.has_value(), ErrorCode::kInvalidArgument,
          "null label has no index");
  return *index_;
}

void ValidateBoxes(const LayoutBBoxes& boxes) {
  for (const BBox& b : boxes) {
    const bool ok = std::isfinite(b.x0) && std::isfinite(b.y0) &&
                    std::isfinite(b.x1) && std::isfinite(b.y1) && b.x0 < b.x1 &&
                    b.y0 < b.y1 && b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 &&
                    b.y1 <= 1.0;
    if (!ok) {
      Fail(ErrorCode::kInvalidArgument,
           "invalid box (" + FormatDouble(b.x0) + ", " + FormatDouble(b.y0) +
               ", " + FormatDouble(b.x1) + ", " + FormatDouble(b.y1) + ")");
    }
  }
}

LayoutMask RasterizeLayout(const LayoutBBoxes& boxes, int height, int width) {
  Require(height > 0 && width > 0, ErrorCode::kInvalidArgument,
          "mask dimensions must be positive");
  ValidateBoxes(boxes);
  LayoutMask mask{Tensor({1, height, width})};
  for (const BBox& b : boxes) {
    for (int y = 0; y < height; ++y) {
      const double cy = (y + 0.5) / height;
      if (cy < b.y0 || cy >= b.y1) continue;
      for (int x = 0; x < width; ++x) {
        const double cx = (x + 0.5) / width;
        if (cx >= b.x0 && cx < b.x1) mask.data.at(0, y, x) = 1.0;
      }
    }
  }
  return mask;
}

ClassLabel DropLabel(const ClassLabel& label, double p, Rng& rng) {
  Require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument,
          "drop probability must be in [0, 1]");
  return rng.Bernoulli(p) ? ClassLabel::Null() : label;
}

Tensor CfgCombine(const Tensor& eps_uncond, const Tensor& eps_cond,
                  double scale) {
  RequireSameShape(eps_uncond, eps_cond, "guidance combine");
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
  }
  return out;
}

LayoutBBoxes LoadBBoxes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot open bbox file " + path.string());
  LayoutBBoxes boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    BBox b;
    std::string extra;
    if (!(ss >> b.x0 >> b.y0 >> b.x1 >> b.y1) || (ss >> extra)) {
      Fail(ErrorCode::kCorrupt, path.string() + ":" + std::to_string(line_no) +
                                    ": expected four decimals");
    }
    boxes.push_back(b);
  }
  ValidateBoxes(boxes);
  return boxes;
}

void SaveBBoxes(const std::filesystem::path& path, const LayoutBBoxes& boxes) {
  std::ofstream out(path);
  if (!out) Fail(ErrorCode::kIo, "cannot write bbox file " + path.string());
  for (const BBox& b : boxes) {
    out << FormatDouble(b.x0) << ' ' << FormatDouble(b.y0) << ' '
        << FormatDouble(b.x1) << ' ' << FormatDouble(b.y1) << '\n';
  }
  if (!out) Fail(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace dpldm

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

#include "dpldm/latent_codec.h"

#include <string>

#include "dpldm/conditioning.h"
#include "dpldm/error.h"

namespace dpldm {
namespace {

int LevelsFor(int factor) {
  if (factor == 4) return 2;
  if (factor == 8) return 3;
  Fail(ErrorCode::kInvalidArgument,
       "unsupported codec factor " + std::to_string(factor) + " (use 4 or 8)");
}

Tensor AnalyzeLevel(const Tensor& x) {
  const int c_in = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
  Tensor out({4 * c_in, h, w});
  for (int c = 0; c < c_in; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int k = 0; k < w; ++k) {
        const double a = x.at(c, 2 * y, 2 * k), b = x.at(c, 2 * y, 2 * k + 1);
        const double cc = x.at(c, 2 * y + 1, 2 * k),
                     d = x.at(c, 2 * y + 1, 2 * k + 1);
        out.at(c, y, k) = 0.5 * (a + b + cc + d);
        out.at(c_in + c, y, k) = 0.5 * (a - b + cc - d);
        out.at(2 * c_in + c, y, k) = 0.5 * (a + b - cc - d);
        out.at(3 * c_in + c, y, k) = 0.5 * (a - b - cc + d);
      }
    }
  }
  return out;
}

Tensor SynthesizeLevel(const Tensor& z) {
  const int c_out = z.dim(0) / 4, h = z.dim(1), w = z.dim(2);
  Tensor out({c_out, 2 * h, 2 * w});
  for (int c = 0; c < c_out; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int k = 0; k < w; ++k) {
        const double ll = z.at(c, y, k), lh = z.at(c_out + c, y, k);
        const double hl = z.at(2 * c_out + c, y, k),
                     hh = z.at(3 * c_out + c, y, k);
        out.at(c, 2 * y, 2 * k) = 0.5 * (ll + lh + hl + hh);
        out.at(c, 2 * y, 2 * k + 1) = 0.5 * (ll - lh + hl - hh);
        out.at(c, 2 * y + 1, 2 * k) = 0.5 * (ll + lh - hl - hh);
        out.at(c, 2 * y + 1, 2 * k + 1) = 0.5 * (ll - lh - hl + hh);
      }
    }
  }
  return out;
}

}  // namespace

int LatentChannels(int image_channels, int factor) {
  LevelsFor(factor);
  return image_channels * factor * factor;
}

LatentImage Encode(const Tensor& image, int factor) {
  const int levels = LevelsFor(factor);
  Require(image.rank() == 3, ErrorCode::kShapeMismatch,
          "image must be [C, H, W], got " + ShapeString(image.shape()));
  Require(image.dim(1) % factor == 0 && image.dim(2) % factor == 0 &&
              image.dim(1) > 0 && image.dim(2) > 0,
          ErrorCode::kShapeMismatch,
          "image " + ShapeString(image.shape()) + " not divisible by factor " +
              std::to_string(factor));
  Tensor z = image;
  for (int l = 0; l < levels; ++l) z = AnalyzeLevel(z);
  return {std::move(z), factor};
}

Tensor Decode(const LatentImage& latent) {
  const int levels = LevelsFor(latent.factor);
  const int f2 = latent.factor * latent.factor;
  Require(latent.data.rank() == 3 && latent.data.dim(0) % f2 == 0 &&
              latent.data.dim(0) > 0,
          ErrorCode::kShapeMismatch,
          "latent " + ShapeString(latent.data.shape()) +
              " does not have a multiple of factor^2 channels");
  Tensor x = latent.data;
  for (int l = 0; l < levels; ++l) x = SynthesizeLevel(x);
  return x;
}

LatentImage EncodeMask(const LayoutMask& mask, int factor) {
  return Encode(mask.data, factor);
}

}  // namespace dpldm

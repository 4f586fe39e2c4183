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

#ifndef DPLDM_LATENT_CODEC_H_
#define DPLDM_LATENT_CODEC_H_

#include "dpldm/tensor.h"

namespace dpldm {

struct LayoutMask;

// Codec-space image: [channels * factor^2, height / factor, width / factor].
struct LatentImage {
  Tensor data;
  int factor = 4;
};

// Multi-level orthonormal 2x2 Haar analysis. Each level maps every channel c
// of a [C, H, W] input to four channels s * C + c at half resolution, with
// subband order s = (LL, LH, HL, HH):
//
//   LL = (a + b + c + d) / 2    LH = (a - b + c - d) / 2
//   HL = (a + b - c - d) / 2    HH = (a - b - c + d) / 2
//
// for the block [a b; c d]. Levels repeat log2(factor) times over all
// channels, so channels [0, C) of the result hold the recursive LL band.
// The transform is orthonormal: energy is preserved and Decode is exact.
LatentImage Encode(const Tensor& image, int factor);
Tensor Decode(const LatentImage& latent);

LatentImage EncodeMask(const LayoutMask& mask, int factor);

// Number of latent channels produced for `image_channels` inputs.
int LatentChannels(int image_channels, int factor);

}  // namespace dpldm

#endif  // DPLDM_LATENT_CODEC_H_

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

#ifndef DPLDM_CHECKPOINT_H_
#define DPLDM_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "dpldm/denoiser.h"
#include "dpldm/param_store.h"

namespace dpldm {

// Binary layout, little-endian:
//   "DPLDMCKP" | u32 version | u32 n + config text (key=value lines)
//   | u32 count | count x { u32 len + name | u8 dtype | u8 frozen | u32 rank
//   | rank x u32 dim | raw values } | u64 FNV-1a of everything before it
enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetConfig net;
  // Free-form metadata (label, sigma, epsilon, ...), stored with the config.
  std::map<std::string, std::string> meta;
  ParamStore params;
};

// kFloat64 (the default) round-trips parameters bit-exactly; kFloat32
// halves the file size.
void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                    DType dtype = DType::kFloat64);

// Errors: kIo (missing/unreadable), kVersionMismatch, kCorrupt (bad magic,
// truncation, checksum or layout that does not match the stored config).
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

}  // namespace dpldm

#endif  // DPLDM_CHECKPOINT_H_

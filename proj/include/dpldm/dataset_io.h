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

#ifndef DPLDM_DATASET_IO_H_
#define DPLDM_DATASET_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpldm/conditioning.h"
#include "dpldm/synth_docgen.h"
#include "dpldm/tensor.h"

namespace dpldm {

// 8-bit binary PGM. Pixel values in [-1, 1] map to round((v + 1) / 2 * 255);
// values outside the range are clamped.
void WritePgm(const std::filesystem::path& path, const Tensor& image);
Tensor ReadPgm(const std::filesystem::path& path);

struct ManifestRecord {
  std::filesystem::path image;   // relative to the manifest directory
  int label = 0;
  std::filesystem::path bboxes;  // empty when the record has no sidecar
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  int num_classes = 0;
  std::string split;  // train, val, test, public or synthetic
  std::vector<ManifestRecord> records;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr const char* kManifestName = "manifest.tsv";

void SaveManifest(const std::filesystem::path& path, const DatasetManifest& m);
// Checks that labels are below the class count and that referenced files
// exist.
DatasetManifest LoadManifest(const std::filesystem::path& path);

// Writes images, bbox sidecars (when present) and the manifest into `dir`.
void WriteDataset(const std::filesystem::path& dir,
                  const std::vector<DocSample>& samples, int num_classes,
                  const std::string& split);

struct Dataset {
  DatasetManifest manifest;
  std::vector<DocSample> samples;
  std::uint64_t hash = 0;  // FNV-1a over manifest and file bytes
};

// Accepts a dataset directory or the manifest file itself.
Dataset LoadDataset(const std::filesystem::path& dir_or_manifest);

// Generated samples with their labels; sidecars are written when `boxes`
// holds one entry per image.
void SaveSamples(const std::filesystem::path& dir, const std::vector<Tensor>& images,
                 const std::vector<int>& labels, int num_classes,
                 const std::vector<LayoutBBoxes>& boxes = {});

std::uint64_t Fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t HashFile(const std::filesystem::path& path,
                       std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace dpldm

#endif  // DPLDM_DATASET_IO_H_

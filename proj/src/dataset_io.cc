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

#include "dpldm/dataset_io.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dpldm/error.h"

namespace dpldm {
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestMagic = "dpldm-manifest";
constexpr int kManifestVersion = 1;

std::string ReadAll(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Skips whitespace and '#' comments between PGM header fields.
int PgmField(const std::string& s, std::size_t& pos, const fs::path& path) {
  while (pos < s.size()) {
    if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  int v = 0;
  bool any = false;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + (s[pos++] - '0');
    any = true;
    Require(v < (1 << 20), ErrorCode::kCorrupt, "PGM field too large in " + path.string());
  }
  Require(any, ErrorCode::kCorrupt, "bad PGM header in " + path.string());
  return v;
}

std::string RecordStem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

}  // namespace

void WritePgm(const fs::path& path, const Tensor& image) {
  Require(image.rank() == 3 && image.dim(0) == 1, ErrorCode::kShapeMismatch,
          "PGM images must be [1, H, W], got " + ShapeString(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], -1.0, 1.0);
    bytes.push_back(static_cast<char>(std::lround((v + 1.0) * 0.5 * 255.0)));
  }
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  Require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path.string());
}

Tensor ReadPgm(const fs::path& path) {
  Require(fs::exists(path), ErrorCode::kIo, "missing image " + path.string());
  const std::string s = ReadAll(path);
  Require(s.size() >= 2 && s[0] == 'P' && s[1] == '5', ErrorCode::kCorrupt,
          "not a binary PGM: " + path.string());
  std::size_t pos = 2;
  const int w = PgmField(s, pos, path);
  const int h = PgmField(s, pos, path);
  const int maxval = PgmField(s, pos, path);
  Require(w > 0 && h > 0 && maxval == 255, ErrorCode::kCorrupt,
          "unsupported PGM header in " + path.string());
  ++pos;  // single whitespace before the raster
  Require(s.size() - std::min(pos, s.size()) == static_cast<std::size_t>(w) * h,
          ErrorCode::kCorrupt, "truncated PGM raster in " + path.string());
  Tensor img({1, h, w});
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<unsigned char>(s[pos + i]) / 255.0 * 2.0 - 1.0;
  }
  return img;
}

void SaveManifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << kManifestMagic << ' ' << kManifestVersion << '\n'
      << "classes " << m.num_classes << '\n'
      << "split " << m.split << '\n';
  for (const ManifestRecord& r : m.records) {
    out << r.image.generic_string() << '\t' << r.label << '\t'
        << (r.bboxes.empty() ? std::string("-") : r.bboxes.generic_string()) << '\n';
  }
  Require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path.string());
}

DatasetManifest LoadManifest(const fs::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open manifest " + path.string());
  DatasetManifest m;
  std::string magic, key;
  int version = 0;
  in >> magic >> version;
  Require(static_cast<bool>(in) && magic == kManifestMagic, ErrorCode::kCorrupt,
          "not a dataset manifest: " + path.string());
  Require(version == kManifestVersion, ErrorCode::kVersionMismatch,
          "manifest version " + std::to_string(version) + " unsupported");
  in >> key >> m.num_classes;
  Require(static_cast<bool>(in) && key == "classes" && m.num_classes >= 1,
          ErrorCode::kCorrupt, "bad class count in " + path.string());
  in >> key >> m.split;
  Require(static_cast<bool>(in) && key == "split", ErrorCode::kCorrupt,
          "missing split in " + path.string());
  std::string line;
  std::getline(in, line);
  const fs::path base = path.parent_path();
  int line_no = 3;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string image, label, boxes;
    Require(static_cast<bool>(std::getline(ss, image, '\t')) &&
                static_cast<bool>(std::getline(ss, label, '\t')) &&
                static_cast<bool>(std::getline(ss, boxes)),
            ErrorCode::kCorrupt,
            "malformed manifest line " + std::to_string(line_no));
    ManifestRecord r;
    r.image = image;
    try {
      std::size_t used = 0;
      r.label = std::stoi(label, &used);
      Require(used == label.size(), ErrorCode::kCorrupt, "");
    } catch (const std::logic_error&) {
      Fail(ErrorCode::kCorrupt, "bad label on manifest line " + std::to_string(line_no));
    }
    Require(r.label >= 0 && r.label < m.num_classes, ErrorCode::kCorrupt,
            "label " + std::to_string(r.label) + " outside [0, " +
                std::to_string(m.num_classes) + ") on manifest line " +
                std::to_string(line_no));
    if (boxes != "-") r.bboxes = boxes;
    Require(fs::exists(base / r.image), ErrorCode::kIo,
            "missing image " + (base / r.image).string());
    Require(r.bboxes.empty() || fs::exists(base / r.bboxes), ErrorCode::kIo,
            "missing bbox sidecar " + (base / r.bboxes).string());
    m.records.push_back(std::move(r));
  }
  return m;
}

void WriteDataset(const fs::path& dir, const std::vector<DocSample>& samples,
                  int num_classes, const std::string& split) {
  fs::create_directories(dir / "images");
  DatasetManifest m;
  m.num_classes = num_classes;
  m.split = split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ManifestRecord r;
    r.image = fs::path("images") / (RecordStem(i) + ".pgm");
    r.label = samples[i].label;
    WritePgm(dir / r.image, samples[i].image);
    if (!samples[i].boxes.empty()) {
      r.bboxes = fs::path("images") / (RecordStem(i) + ".bbox");
      SaveBBoxes(dir / r.bboxes, samples[i].boxes);
    }
    m.records.push_back(std::move(r));
  }
  SaveManifest(dir / kManifestName, m);
}

Dataset LoadDataset(const fs::path& dir_or_manifest) {
  const fs::path manifest = fs::is_directory(dir_or_manifest)
                                ? dir_or_manifest / kManifestName
                                : dir_or_manifest;
  Dataset d;
  d.manifest = LoadManifest(manifest);
  d.hash = HashFile(manifest);
  const fs::path base = manifest.parent_path();
  for (const ManifestRecord& r : d.manifest.records) {
    DocSample s;
    s.image = ReadPgm(base / r.image);
    s.label = r.label;
    d.hash = HashFile(base / r.image, d.hash);
    if (!r.bboxes.empty()) {
      s.boxes = LoadBBoxes(base / r.bboxes);
      d.hash = HashFile(base / r.bboxes, d.hash);
    }
    if (!d.samples.empty()) {
      RequireSameShape(d.samples.front().image, s.image, "dataset image");
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

void SaveSamples(const fs::path& dir, const std::vector<Tensor>& images,
                 const std::vector<int>& labels, int num_classes,
                 const std::vector<LayoutBBoxes>& boxes) {
  Require(images.size() == labels.size(), ErrorCode::kShapeMismatch,
          "image/label count mismatch");
  Require(boxes.empty() || boxes.size() == images.size(), ErrorCode::kShapeMismatch,
          "image/layout count mismatch");
  std::vector<DocSample> samples(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    samples[i].image = images[i];
    samples[i].label = labels[i];
    if (!boxes.empty()) samples[i].boxes = boxes[i];
  }
  WriteDataset(dir, samples, num_classes, "synthetic");
}

std::uint64_t Fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t HashFile(const fs::path& path, std::uint64_t h) {
  const std::string s = ReadAll(path);
  return Fnv1a(s.data(), s.size(), h);
}

}  // namespace dpldm

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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "dpldm/checkpoint.h"
#include "dpldm/conditioning.h"
#include "dpldm/dataset_io.h"
#include "dpldm/error.h"
#include "dpldm/run_config.h"
#include "dpldm/synth_docgen.h"

namespace dpldm {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("dpldm_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string ReadBytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void WriteBytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

template <typename F>
std::optional<ErrorCode> CodeOf(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return std::nullopt;
}

DocGenOptions Opts(int per_class, int jitter, std::uint64_t seed = 3) {
  DocGenOptions o;
  o.per_class = per_class;
  o.jitter = jitter;
  o.seed = seed;
  o.template_seed = 11;
  return o;
}

TEST(DocGenTest, SeededAndBalanced) {
  const auto a = GenerateDocuments(Opts(5, 1));
  const auto b = GenerateDocuments(Opts(5, 1));
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, static_cast<int>(i % 4));
    EXPECT_EQ(a[i].boxes.size(), b[i].boxes.size());
  }
  const auto c = GenerateDocuments(Opts(5, 1, 4));
  EXPECT_FALSE(a[0].image == c[0].image);
}

TEST(DocGenTest, TemplatesDifferByFivePercent) {
  for (std::uint64_t ts : {11ULL, 23ULL, 99ULL}) {
    const auto t = MakeTemplates(6, 32, 32, ts);
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t j = i + 1; j < t.size(); ++j) {
        const Tensor a = RenderTemplate(t[i], 32, 32);
        const Tensor b = RenderTemplate(t[j], 32, 32);
        int diff = 0;
        for (std::size_t k = 0; k < a.size(); ++k) diff += a[k] != b[k];
        EXPECT_GE(diff, 0.05 * 32 * 32) << i << " vs " << j;
      }
    }
  }
}

TEST(DocGenTest, BoxesRasterizeToInkAtZeroJitter) {
  DocGenOptions o = Opts(3, 0);
  for (int size : {32, 48}) {
    o.height = size;
    o.width = size;
    for (const DocSample& s : GenerateDocuments(o)) {
      ValidateBoxes(s.boxes);
      const LayoutMask m = RasterizeLayout(s.boxes, size, size);
      for (std::size_t k = 0; k < s.image.size(); ++k) {
        ASSERT_EQ(m.data[k] == 1.0, s.image[k] < 0.0) << "pixel " << k;
      }
    }
  }
}

TEST(DocGenTest, JitteredBoxesCoverAllInk) {
  for (const DocSample& s : GenerateDocuments(Opts(10, 1))) {
    const LayoutMask m = RasterizeLayout(s.boxes, 32, 32);
    for (std::size_t k = 0; k < s.image.size(); ++k) {
      if (s.image[k] < 0.0) ASSERT_EQ(m.data[k], 1.0);
    }
  }
}

TEST(DocGenTest, Validation) {
  DocGenOptions o = Opts(1, 1);
  o.num_classes = 1;
  EXPECT_THROW(o.Validate(), Error);
  o = Opts(1, 1);
  o.height = 36;
  EXPECT_THROW(o.Validate(), Error);
}

TEST(PgmTest, RoundTripQuantized) {
  TempDir dir("pgm");
  Tensor img({1, 8, 16});
  for (std::size_t k = 0; k < img.size(); ++k) {
    img[k] = -1.0 + 2.0 * static_cast<double>(k % 256) / 255.0;
  }
  WritePgm(dir.path() / "a.pgm", img);
  const Tensor back = ReadPgm(dir.path() / "a.pgm");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t k = 0; k < img.size(); ++k) EXPECT_NEAR(back[k], img[k], 1e-12);
  EXPECT_EQ(ReadBytes(dir.path() / "a.pgm").substr(0, 2), "P5");
  EXPECT_EQ(CodeOf([&] { ReadPgm(dir.path() / "nope.pgm"); }), ErrorCode::kIo);
  WriteBytes(dir.path() / "bad.pgm", "P2\n1 1\n255\n0");
  EXPECT_EQ(CodeOf([&] { ReadPgm(dir.path() / "bad.pgm"); }), ErrorCode::kCorrupt);
  WriteBytes(dir.path() / "short.pgm", "P5\n4 4\n255\nab");
  EXPECT_EQ(CodeOf([&] { ReadPgm(dir.path() / "short.pgm"); }), ErrorCode::kCorrupt);
}

TEST(ManifestTest, DatasetRoundTripPreservesOrder) {
  TempDir dir("manifest");
  auto docs = GenerateDocuments(Opts(3, 1));
  std::swap(docs[0], docs[5]);
  WriteDataset(dir.path(), docs, 4, "train");
  const Dataset d = LoadDataset(dir.path());
  EXPECT_EQ(d.manifest.num_classes, 4);
  EXPECT_EQ(d.manifest.split, "train");
  ASSERT_EQ(d.samples.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    EXPECT_EQ(d.samples[i].label, docs[i].label);
    EXPECT_EQ(d.samples[i].image, docs[i].image);  // values are exact in 8 bits
    ASSERT_EQ(d.samples[i].boxes.size(), docs[i].boxes.size());
  }
  const DatasetManifest m = LoadManifest(dir.path() / kManifestName);
  SaveManifest(dir.path() / "copy.tsv", m);
  EXPECT_EQ(LoadManifest(dir.path() / "copy.tsv"), m);
  EXPECT_EQ(LoadDataset(dir.path()).hash, d.hash);
}

TEST(ManifestTest, ErrorsAreDistinct) {
  TempDir dir("manifest_err");
  WriteDataset(dir.path(), GenerateDocuments(Opts(1, 1)), 4, "test");
  const fs::path mpath = dir.path() / kManifestName;
  const std::string good = ReadBytes(mpath);
  EXPECT_EQ(CodeOf([&] { LoadManifest(dir.path() / "none.tsv"); }), ErrorCode::kIo);

  std::string v2 = good;
  v2.replace(v2.find("manifest 1"), 10, "manifest 2");
  WriteBytes(mpath, v2);
  EXPECT_EQ(CodeOf([&] { LoadManifest(mpath); }), ErrorCode::kVersionMismatch);

  std::string bad_label = good;
  const auto tab = bad_label.find('\t', bad_label.find("images/"));
  bad_label[tab + 1] = '9';
  WriteBytes(mpath, bad_label);
  EXPECT_EQ(CodeOf([&] { LoadManifest(mpath); }), ErrorCode::kCorrupt);

  WriteBytes(mpath, good);
  fs::remove(dir.path() / "images" / "000002.pgm");
  EXPECT_EQ(CodeOf([&] { LoadManifest(mpath); }), ErrorCode::kIo);
}

TEST(ManifestTest, SaveSamplesLabelsGenerated) {
  TempDir dir("samples");
  std::vector<Tensor> imgs(3, Tensor({1, 8, 8}, 1.0));
  SaveSamples(dir.path(), imgs, {2, 2, 2}, 4);
  const Dataset d = LoadDataset(dir.path());
  EXPECT_EQ(d.manifest.split, "synthetic");
  for (const DocSample& s : d.samples) EXPECT_EQ(s.label, 2);
  EXPECT_THROW(SaveSamples(dir.path(), imgs, {1}, 4), Error);
}

Checkpoint SmallCheckpoint() {
  Checkpoint c;
  c.net.latent_channels = 4;
  c.net.base_width = 8;
  c.net.embed_dim = 8;
  c.net.norm_groups = 4;
  c.net.num_classes = 3;
  c.net.layout_conditioned = true;
  c.net.mask_channels = 4;
  c.params = InitParams(c.net, 7);
  c.params.SetFrozenPrefix(kTimeEmbeddingPrefix, true);
  c.meta["label"] = "2";
  c.meta["sigma"] = "1.25";
  return c;
}

TEST(CheckpointTest, BitIdenticalRoundTrip) {
  TempDir dir("ckpt");
  const Checkpoint c = SmallCheckpoint();
  SaveCheckpoint(dir.path() / "m.ckpt", c);
  const Checkpoint back = LoadCheckpoint(dir.path() / "m.ckpt");
  EXPECT_EQ(back.net, c.net);
  EXPECT_EQ(back.meta, c.meta);
  EXPECT_EQ(back.params, c.params);
  // Saving again gives the same bytes.
  SaveCheckpoint(dir.path() / "n.ckpt", back);
  EXPECT_EQ(ReadBytes(dir.path() / "m.ckpt"), ReadBytes(dir.path() / "n.ckpt"));
}

TEST(CheckpointTest, Float32Storage) {
  TempDir dir("ckpt32");
  const Checkpoint c = SmallCheckpoint();
  SaveCheckpoint(dir.path() / "m.ckpt", c, DType::kFloat32);
  const Checkpoint back = LoadCheckpoint(dir.path() / "m.ckpt");
  ASSERT_EQ(back.params.total_size(), c.params.total_size());
  for (std::size_t i = 0; i < c.params.total_size(); ++i) {
    EXPECT_EQ(back.params.flat()[i],
              static_cast<double>(static_cast<float>(c.params.flat()[i])));
  }
  EXPECT_LT(fs::file_size(dir.path() / "m.ckpt"),
            c.params.total_size() * 8);
}

TEST(CheckpointTest, VersionMismatchAndCorruption) {
  TempDir dir("ckpt_err");
  SaveCheckpoint(dir.path() / "m.ckpt", SmallCheckpoint());
  const std::string good = ReadBytes(dir.path() / "m.ckpt");
  ASSERT_EQ(good.substr(0, 8), "DPLDMCKP");

  std::string flipped = good;
  flipped[8] ^= 0x01;  // version field follows the magic
  WriteBytes(dir.path() / "v.ckpt", flipped);
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint(dir.path() / "v.ckpt"); }),
            ErrorCode::kVersionMismatch);

  std::string body = good;
  body[body.size() / 2] ^= 0x40;
  WriteBytes(dir.path() / "b.ckpt", body);
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint(dir.path() / "b.ckpt"); }),
            ErrorCode::kCorrupt);

  WriteBytes(dir.path() / "t.ckpt", good.substr(0, good.size() - 100));
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint(dir.path() / "t.ckpt"); }),
            ErrorCode::kCorrupt);

  std::string magic = good;
  magic[0] = 'X';
  WriteBytes(dir.path() / "m2.ckpt", magic);
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint(dir.path() / "m2.ckpt"); }),
            ErrorCode::kCorrupt);

  EXPECT_EQ(CodeOf([&] { LoadCheckpoint(dir.path() / "missing.ckpt"); }),
            ErrorCode::kIo);
}

TEST(RunConfigTest, SerializeRoundTripIsLossless) {
  TrainRunConfig cfg;
  cfg.seed = 0xfeedfacecafebeefULL;
  cfg.output_dir = "out dir/with space";
  cfg.latent_scale = 0.1 + 0.2;
  cfg.dp.sigma = 1.0 / 3.0;
  cfg.dp.strategy = Strategy::kCondCfg;
  cfg.dp.algorithm = Algorithm::kDpPromise;
  cfg.delta = 1.0 / 2000.0;
  cfg.sampler_variance = ReverseVariance::kBeta;
  cfg.guidance = 3.0;
  const TrainRunConfig back = ParseRunConfig(SerializeRunConfig(cfg));
  EXPECT_TRUE(back == cfg);
  EXPECT_EQ(SerializeRunConfig(back), SerializeRunConfig(cfg));
  EXPECT_EQ(*back.dp.sigma, 1.0 / 3.0);
  EXPECT_EQ(back.latent_scale, 0.1 + 0.2);
  for (std::string_view key : ConfigKeys()) {
    EXPECT_EQ(GetConfigValue(back, key), GetConfigValue(cfg, key)) << key;
  }
}

TEST(RunConfigTest, ParsingRules) {
  const TrainRunConfig cfg = ParseRunConfig(
      "# comment\n\nseed = 5\n  dp.sigma = auto  \nprivacy.delta = auto\n"
      "net.class_conditioned = false\nsampler.guidance = 1\n");
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_FALSE(cfg.dp.sigma.has_value());
  EXPECT_LT(cfg.delta, 0.0);
  EXPECT_FALSE(cfg.class_conditioned);
  EXPECT_EQ(CodeOf([] { ParseRunConfig("dp.clipp = 0.01\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseRunConfig("seed 5\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseRunConfig("dp.clip = abc\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ParseRunConfig("dp.strategy = joint\n"); }),
            ErrorCode::kConfig);
}

TEST(RunConfigTest, ConsistencyChecks) {
  TrainRunConfig cfg;
  cfg.codec_factor = 8;
  cfg.Validate();
  EXPECT_EQ(cfg.Net().latent_channels, 64);
  EXPECT_EQ(cfg.Net().mask_channels, 64);
  cfg.image_size = 40;
  EXPECT_EQ(CodeOf([&] { cfg.Validate(); }), ErrorCode::kConfig);
  cfg = TrainRunConfig{};
  cfg.codec_factor = 2;
  EXPECT_EQ(CodeOf([&] { cfg.Validate(); }), ErrorCode::kConfig);
  cfg = TrainRunConfig{};
  cfg.class_conditioned = false;
  cfg.guidance = 3.0;
  EXPECT_EQ(CodeOf([&] { cfg.Validate(); }), ErrorCode::kConfig);
  cfg = TrainRunConfig{};
  cfg.class_conditioned = false;
  cfg.dp.strategy = Strategy::kCondCfg;
  EXPECT_EQ(CodeOf([&] { cfg.Validate(); }), ErrorCode::kConfig);
}

TEST(RunConfigTest, FileRoundTrip) {
  TempDir dir("runcfg");
  TrainRunConfig cfg;
  cfg.epsilon = 1.0;
  SaveRunConfig(dir.path() / "a.cfg", cfg);
  EXPECT_TRUE(LoadRunConfig(dir.path() / "a.cfg") == cfg);
  EXPECT_EQ(CodeOf([&] { LoadRunConfig(dir.path() / "missing.cfg"); }),
            ErrorCode::kIo);
}

}  // namespace
}  // namespace dpldm

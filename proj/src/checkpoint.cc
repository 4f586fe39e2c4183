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

#include "dpldm/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include "dpldm/dataset_io.h"
#include "dpldm/error.h"

namespace dpldm {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'P', 'L', 'D', 'M', 'C', 'K', 'P'};

class Writer {
 public:
  template <typename T>
  void Put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void PutBytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void PutString(const std::string& s) {
    Put(static_cast<std::uint32_t>(s.size()));
    PutBytes(s.data(), s.size());
  }
  std::vector<char>& buf() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end) : buf_(buf), end_(end) {}

  template <typename T>
  T Get() {
    T v;
    GetBytes(&v, sizeof(T));
    return v;
  }
  void GetBytes(void* out, std::size_t n) {
    Require(n <= end_ - pos_, ErrorCode::kCorrupt, "truncated checkpoint");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string GetString() {
    const auto n = Get<std::uint32_t>();
    Require(n <= end_ - pos_, ErrorCode::kCorrupt, "truncated checkpoint string");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string ConfigText(const Checkpoint& c) {
  const NetConfig& n = c.net;
  std::ostringstream out;
  out << "latent_channels=" << n.latent_channels << '\n'
      << "mask_channels=" << n.mask_channels << '\n'
      << "base_width=" << n.base_width << '\n'
      << "num_classes=" << n.num_classes << '\n'
      << "embed_dim=" << n.embed_dim << '\n'
      << "levels=" << n.levels << '\n'
      << "blocks_per_level=" << n.blocks_per_level << '\n'
      << "norm_groups=" << n.norm_groups << '\n'
      << "layout_conditioned=" << (n.layout_conditioned ? 1 : 0) << '\n';
  for (const auto& [k, v] : c.meta) {
    Require(k.find_first_of("=\n") == std::string::npos &&
                v.find('\n') == std::string::npos,
            ErrorCode::kInvalidArgument, "bad checkpoint metadata key '" + k + "'");
    out << "meta." << k << '=' << v << '\n';
  }
  return out.str();
}

void ParseConfigText(const std::string& text, Checkpoint& c) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> ints;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    Require(eq != std::string::npos, ErrorCode::kCorrupt,
            "bad checkpoint config line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("meta.", 0) == 0) {
      c.meta[key.substr(5)] = value;
      continue;
    }
    try {
      ints[key] = std::stoi(value);
    } catch (const std::logic_error&) {
      Fail(ErrorCode::kCorrupt, "bad checkpoint config value for " + key);
    }
  }
  auto take = [&](const char* key) {
    auto it = ints.find(key);
    Require(it != ints.end(), ErrorCode::kCorrupt,
            std::string("checkpoint config lacks ") + key);
    return it->second;
  };
  c.net.latent_channels = take("latent_channels");
  c.net.mask_channels = take("mask_channels");
  c.net.base_width = take("base_width");
  c.net.num_classes = take("num_classes");
  c.net.embed_dim = take("embed_dim");
  c.net.levels = take("levels");
  c.net.blocks_per_level = take("blocks_per_level");
  c.net.norm_groups = take("norm_groups");
  c.net.layout_conditioned = take("layout_conditioned") != 0;
}

}  // namespace

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                    DType dtype) {
  Writer w;
  w.PutBytes(kMagic, sizeof(kMagic));
  w.Put(kCheckpointVersion);
  w.PutString(ConfigText(ckpt));
  w.Put(static_cast<std::uint32_t>(ckpt.params.entries().size()));
  const std::span<const double> flat = ckpt.params.flat();
  for (const ParamEntry& e : ckpt.params.entries()) {
    w.PutString(e.name);
    w.Put(static_cast<std::uint8_t>(dtype));
    w.Put(static_cast<std::uint8_t>(e.frozen ? 1 : 0));
    w.Put(static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) w.Put(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < e.size; ++i) {
      if (dtype == DType::kFloat32) {
        w.Put(static_cast<float>(flat[e.offset + i]));
      } else {
        w.Put(flat[e.offset + i]);
      }
    }
  }
  const std::uint64_t sum = Fnv1a(w.buf().data(), w.buf().size());
  w.Put(sum);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(w.buf().data(), static_cast<std::streamsize>(w.buf().size()));
    Require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  Require(std::filesystem::exists(path), ErrorCode::kIo,
          "missing checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), {});
  Require(buf.size() >= sizeof(kMagic) + 4 + 8 &&
              std::memcmp(buf.data(), kMagic, sizeof(kMagic)) == 0,
          ErrorCode::kCorrupt, "not a checkpoint: " + path.string());
  Reader r(buf, buf.size() - 8);
  char magic[8];
  r.GetBytes(magic, sizeof(magic));
  const auto version = r.Get<std::uint32_t>();
  Require(version == kCheckpointVersion, ErrorCode::kVersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " +
              std::to_string(kCheckpointVersion));
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  Require(stored == Fnv1a(buf.data(), buf.size() - 8), ErrorCode::kCorrupt,
          "checkpoint checksum mismatch: " + path.string());

  Checkpoint c;
  ParseConfigText(r.GetString(), c);
  const auto count = r.Get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.GetString();
    const auto dtype = static_cast<DType>(r.Get<std::uint8_t>());
    Require(dtype == DType::kFloat32 || dtype == DType::kFloat64,
            ErrorCode::kCorrupt, "unknown dtype for " + name);
    const bool frozen = r.Get<std::uint8_t>() != 0;
    const auto rank = r.Get<std::uint32_t>();
    Require(rank <= 8, ErrorCode::kCorrupt, "implausible rank for " + name);
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.Get<std::uint32_t>();
      Require(d >= 1 && d < (1u << 24), ErrorCode::kCorrupt,
              "implausible dimension for " + name);
      shape.push_back(static_cast<int>(d));
    }
    std::span<double> dst = c.params.Add(name, shape);
    for (double& v : dst) {
      v = dtype == DType::kFloat32 ? static_cast<double>(r.Get<float>())
                                   : r.Get<double>();
    }
    c.params.SetFrozen(name, frozen);
  }
  Require(r.done(), ErrorCode::kCorrupt, "trailing bytes in checkpoint");
  // The stored config must describe exactly the stored tensors.
  try {
    c.net.Validate();
    const auto layout = ParamLayout(c.net);
    Require(layout.size() == c.params.entries().size(), ErrorCode::kCorrupt, "");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      Require(layout[i].first == c.params.entries()[i].name &&
                  layout[i].second == c.params.entries()[i].shape,
              ErrorCode::kCorrupt, "");
    }
  } catch (const Error&) {
    Fail(ErrorCode::kCorrupt,
         "checkpoint tensors do not match its network config: " + path.string());
  }
  return c;
}

}  // namespace dpldm

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

#include "dpldm/denoiser.h"

#include <cmath>

#include "dpldm/error.h"
#include "dpldm/nn_ops.h"
#include "dpldm/parallel.h"
#include "dpldm/rng.h"

namespace dpldm {

using nn::ConstMatMap;
using nn::Mat;
using nn::MatMap;
using nn::Vec;

namespace {

std::string BlockName(int level, int block) {
  return "enc" + std::to_string(level) + ".block" + std::to_string(block) + ".";
}

int WidthAt(const NetConfig& cfg, int level) { return cfg.base_width << level; }

}  // namespace

void NetConfig::Validate() const {
  Require(latent_channels > 0 && base_width > 0 && embed_dim > 0 &&
              levels > 0 && blocks_per_level >= 0 && norm_groups > 0 &&
              num_classes >= 0,
          ErrorCode::kInvalidArgument, "network dimensions must be positive");
  Require(!layout_conditioned || mask_channels > 0, ErrorCode::kInvalidArgument,
          "layout conditioning needs mask channels");
  Require(embed_dim % 2 == 0, ErrorCode::kInvalidArgument,
          "embed_dim must be even");
  Require(base_width % norm_groups == 0, ErrorCode::kInvalidArgument,
          "base_width must be a multiple of norm_groups");
}

void NetConfig::ValidateSpatial(int height, int width) const {
  const int div = 1 << (levels - 1);
  Require(height > 0 && width > 0 && height % div == 0 && width % div == 0,
          ErrorCode::kShapeMismatch,
          "latent extent " + std::to_string(height) + "x" + std::to_string(width) +
              " not divisible by 2^(levels-1)");
}

std::vector<std::pair<std::string, std::vector<int>>> ParamLayout(
    const NetConfig& cfg) {
  cfg.Validate();
  const int e = cfg.embed_dim;
  std::vector<std::pair<std::string, std::vector<int>>> out;
  auto conv = [&](const std::string& name, int c_out, int c_in) {
    out.push_back({name + ".weight", {c_out, c_in, 3, 3}});
    out.push_back({name + ".bias", {c_out}});
  };
  auto norm = [&](const std::string& name, int c) {
    out.push_back({name + ".weight", {c}});
    out.push_back({name + ".bias", {c}});
  };
  out.push_back({"temb.fc1.weight", {e, e}});
  out.push_back({"temb.fc1.bias", {e}});
  out.push_back({"temb.fc2.weight", {e, e}});
  out.push_back({"temb.fc2.bias", {e}});
  if (cfg.num_classes > 0) {
    out.push_back({"class_emb.weight", {cfg.num_classes + 1, e}});
  }
  conv("in_conv", cfg.base_width, cfg.in_channels());
  for (int l = 0; l < cfg.levels; ++l) {
    const int c = WidthAt(cfg, l);
    for (int b = 0; b < cfg.blocks_per_level; ++b) {
      const std::string p = BlockName(l, b);
      norm(p + "norm1", c);
      conv(p + "conv1", c, c);
      out.push_back({p + "emb_proj.weight", {c, e}});
      out.push_back({p + "emb_proj.bias", {c}});
      norm(p + "norm2", c);
      conv(p + "conv2", c, c);
    }
    if (l + 1 < cfg.levels) {
      conv("down" + std::to_string(l), WidthAt(cfg, l + 1), c);
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    conv("up" + std::to_string(l), WidthAt(cfg, l), WidthAt(cfg, l + 1));
  }
  norm("out_norm", cfg.base_width);
  conv("out_conv", cfg.latent_channels, cfg.base_width);
  return out;
}

ParamStore InitParams(const NetConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  Rng rng = Rng::Stream(seed, StreamTag::kInit);
  for (auto& [name, shape] : ParamLayout(cfg)) {
    std::span<double> v = store.Add(name, shape);
    const bool is_bias = name.ends_with(".bias");
    const bool is_norm = name.find("norm") != std::string::npos;
    if (is_bias) continue;
    if (is_norm) {
      for (double& x : v) x = 1.0;
      continue;
    }
    int fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    nn::FanInUniform(v.data(), v.size(), fan_in, rng);
  }
  return store;
}

std::vector<double> TimestepEmbedding(int t, int dim) {
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    out[static_cast<std::size_t>(k)] = std::sin(t * freq);
    out[static_cast<std::size_t>(half + k)] = std::cos(t * freq);
  }
  return out;
}

// Offsets of each layer's tensors inside the parameter store.
struct Denoiser::Refs {
  struct Affine {
    std::size_t w = 0, b = 0;
    int rows = 0, cols = 0;
  };
  struct Block {
    Affine norm1, conv1, emb, norm2, conv2;
    int channels = 0;
  };
  Affine fc1, fc2;
  std::size_t class_emb = 0;
  Affine in_conv;
  std::vector<std::vector<Block>> blocks;
  std::vector<Affine> down;  // down[l]: level l -> l + 1
  std::vector<Affine> up;    // up[l]: level l + 1 -> l
  Affine out_norm, out_conv;
};

struct Denoiser::Cache {
  struct Block {
    nn::GroupNormCache gn1, gn2;
    Mat a1, a2;  // GN outputs (SiLU inputs)
    Mat cols1, cols2;
  };
  Vec sinus, fc1_out, emb, emb_act;
  int label_row = -1;
  Mat in_cols;
  std::vector<std::vector<Block>> blocks;
  std::vector<Mat> down_cols;
  std::vector<Mat> up_cols;
  nn::GroupNormCache out_gn;
  Mat out_a, out_cols;
  int h = 0, w = 0;
};

Denoiser::Denoiser(const NetConfig& cfg, const ParamStore& params)
    : cfg_(cfg), params_(params), refs_(std::make_unique<Refs>()) {
  const auto layout = ParamLayout(cfg_);
  const auto& entries = params_.entries();
  if (entries.size() != layout.size()) {
    Fail(ErrorCode::kShapeMismatch,
         "parameter store does not match network config (entry count)");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (entries[i].name != layout[i].first ||
        entries[i].shape != layout[i].second) {
        Fail(ErrorCode::kShapeMismatch,
           "parameter " + entries[i].name + " does not match layout entry " +
               layout[i].first + ShapeString(layout[i].second));
    }
  }
  auto affine = [&](const std::string& name) {
    Refs::Affine a;
    const ParamEntry& w = params_.Entry(name + ".weight");
    a.w = w.offset;
    a.b = params_.Entry(name + ".bias").offset;
    a.rows = w.shape[0];
    a.cols = w.shape.size() > 1 ? static_cast<int>(w.size / w.shape[0]) : 1;
    return a;
  };
  Refs& r = *refs_;
  r.fc1 = affine("temb.fc1");
  r.fc2 = affine("temb.fc2");
  if (cfg_.num_classes > 0) r.class_emb = params_.Entry("class_emb.weight").offset;
  r.in_conv = affine("in_conv");
  r.blocks.resize(static_cast<std::size_t>(cfg_.levels));
  for (int l = 0; l < cfg_.levels; ++l) {
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      const std::string p = BlockName(l, b);
      Refs::Block blk;
      blk.norm1 = affine(p + "norm1");
      blk.conv1 = affine(p + "conv1");
      blk.emb = affine(p + "emb_proj");
      blk.norm2 = affine(p + "norm2");
      blk.conv2 = affine(p + "conv2");
      blk.channels = WidthAt(cfg_, l);
      r.blocks[static_cast<std::size_t>(l)].push_back(blk);
    }
  }
  r.down.resize(static_cast<std::size_t>(cfg_.levels - 1));
  r.up.resize(static_cast<std::size_t>(cfg_.levels - 1));
  for (int l = 0; l + 1 < cfg_.levels; ++l) {
    r.down[static_cast<std::size_t>(l)] = affine("down" + std::to_string(l));
    r.up[static_cast<std::size_t>(l)] = affine("up" + std::to_string(l));
  }
  r.out_norm = affine("out_norm");
  r.out_conv = affine("out_conv");
}

Denoiser::~Denoiser() = default;

namespace {

ConstMatMap WeightMap(const double* base, std::size_t offset, int rows,
                      int cols) {
  return ConstMatMap(base + offset, rows, cols);
}

}  // namespace

Tensor Denoiser::Run(const Tensor& z_t, int t, const ClassLabel& label,
                     const Tensor* mask_latent, Cache* cache) const {
  const Refs& r = *refs_;
  const double* p = params_.flat().data();
  Require(z_t.rank() == 3 && z_t.dim(0) == cfg_.latent_channels,
          ErrorCode::kShapeMismatch,
          "latent input " + ShapeString(z_t.shape()) + " expects " +
              std::to_string(cfg_.latent_channels) + " channels");
  const int h = z_t.dim(1), w = z_t.dim(2);
  cfg_.ValidateSpatial(h, w);
  if (cfg_.layout_conditioned) {
    Require(mask_latent != nullptr, ErrorCode::kInvalidArgument,
            "layout-conditioned network requires a mask latent");
    Require(mask_latent->rank() == 3 &&
                mask_latent->dim(0) == cfg_.mask_channels &&
                mask_latent->dim(1) == h && mask_latent->dim(2) == w,
            ErrorCode::kShapeMismatch,
            "mask latent " + ShapeString(mask_latent->shape()) +
                " does not match input");
  } else {
    Require(mask_latent == nullptr, ErrorCode::kInvalidArgument,
            "network is not layout-conditioned but a mask was given");
  }
  int label_row = -1;
  if (cfg_.num_classes > 0) {
    label_row = label.is_null() ? cfg_.num_classes : label.index();
    Require(label.is_null() || (label_row >= 0 && label_row < cfg_.num_classes),
            ErrorCode::kOutOfRange, "class label outside network range");
  } else {
    Require(label.is_null(), ErrorCode::kInvalidArgument,
            "unconditional network received a class label");
  }

  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.h = h;
  c.w = w;
  c.label_row = label_row;

  // Embedding path.
  const int e = cfg_.embed_dim;
  const std::vector<double> sin_emb = TimestepEmbedding(t, e);
  c.sinus = nn::ConstVecMap(sin_emb.data(), e);
  c.fc1_out = WeightMap(p, r.fc1.w, e, e) * c.sinus +
              nn::ConstVecMap(p + r.fc1.b, e);
  c.emb = WeightMap(p, r.fc2.w, e, e) * nn::Silu(c.fc1_out) +
          nn::ConstVecMap(p + r.fc2.b, e);
  if (label_row >= 0) {
    c.emb += nn::ConstVecMap(p + r.class_emb + static_cast<std::size_t>(label_row) * e, e);
  }
  c.emb_act = nn::Silu(c.emb);

  // Input.
  Mat x(cfg_.in_channels(), h * w);
  std::copy(z_t.data(), z_t.data() + z_t.size(), x.data());
  if (mask_latent != nullptr) {
    std::copy(mask_latent->data(), mask_latent->data() + mask_latent->size(),
              x.data() + z_t.size());
  }
  Mat hcur = nn::Conv3x3(x, h, w, 1,
                         WeightMap(p, r.in_conv.w, r.in_conv.rows, r.in_conv.cols),
                         p + r.in_conv.b, c.in_cols);

  c.blocks.assign(static_cast<std::size_t>(cfg_.levels), {});
  c.down_cols.assign(static_cast<std::size_t>(cfg_.levels), Mat());
  c.up_cols.assign(static_cast<std::size_t>(cfg_.levels), Mat());
  std::vector<Mat> skips(static_cast<std::size_t>(cfg_.levels));
  int lh = h, lw = w;
  const int groups = cfg_.norm_groups;
  for (int l = 0; l < cfg_.levels; ++l) {
    auto& level_cache = c.blocks[static_cast<std::size_t>(l)];
    level_cache.resize(static_cast<std::size_t>(cfg_.blocks_per_level));
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      const Refs::Block& blk = r.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)];
      Cache::Block& bc = level_cache[static_cast<std::size_t>(b)];
      const int ch = blk.channels;
      bc.a1 = nn::GroupNorm(hcur, groups, p + blk.norm1.w, p + blk.norm1.b, bc.gn1);
      Mat c1 = nn::Conv3x3(nn::Silu(bc.a1), lh, lw, 1,
                           WeightMap(p, blk.conv1.w, ch, ch * 9), p + blk.conv1.b,
                           bc.cols1);
      const Vec bias = WeightMap(p, blk.emb.w, ch, e) * c.emb_act +
                       nn::ConstVecMap(p + blk.emb.b, ch);
      c1.colwise() += bias;
      bc.a2 = nn::GroupNorm(c1, groups, p + blk.norm2.w, p + blk.norm2.b, bc.gn2);
      hcur += nn::Conv3x3(nn::Silu(bc.a2), lh, lw, 1,
                          WeightMap(p, blk.conv2.w, ch, ch * 9), p + blk.conv2.b,
                          bc.cols2);
    }
    if (l + 1 < cfg_.levels) {
      skips[static_cast<std::size_t>(l)] = hcur;
      const Refs::Affine& d = r.down[static_cast<std::size_t>(l)];
      hcur = nn::Conv3x3(hcur, lh, lw, 2, WeightMap(p, d.w, d.rows, d.cols),
                         p + d.b, c.down_cols[static_cast<std::size_t>(l)]);
      lh /= 2;
      lw /= 2;
    }
  }
  for (int l = cfg_.levels - 2; l >= 0; --l) {
    const Refs::Affine& u = r.up[static_cast<std::size_t>(l)];
    Mat up = nn::Upsample2x(hcur, lh, lw);
    lh *= 2;
    lw *= 2;
    hcur = nn::Conv3x3(up, lh, lw, 1, WeightMap(p, u.w, u.rows, u.cols), p + u.b,
                       c.up_cols[static_cast<std::size_t>(l)]);
    hcur += skips[static_cast<std::size_t>(l)];
  }
  c.out_a = nn::GroupNorm(hcur, groups, p + r.out_norm.w, p + r.out_norm.b, c.out_gn);
  Mat out = nn::Conv3x3(nn::Silu(c.out_a), h, w, 1,
                        WeightMap(p, r.out_conv.w, r.out_conv.rows, r.out_conv.cols),
                        p + r.out_conv.b, c.out_cols);
  Tensor result({cfg_.latent_channels, h, w});
  std::copy(out.data(), out.data() + out.size(), result.data());
  return result;
}

Tensor Denoiser::Forward(const Tensor& z_t, int t, const ClassLabel& label,
                         const Tensor* mask_latent) const {
  return Run(z_t, t, label, mask_latent, nullptr);
}

double Denoiser::LossAndGrad(const Tensor& z_t, int t, const ClassLabel& label,
                             const Tensor* mask_latent, const Tensor& eps,
                             double scale, std::span<double> grad) const {
  Require(grad.size() == params_.total_size(), ErrorCode::kShapeMismatch,
          "gradient buffer does not match parameter store");
  Cache c;
  const Tensor pred = Run(z_t, t, label, mask_latent, &c);
  RequireSameShape(pred, eps, "denoiser loss");
  const double n = static_cast<double>(pred.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - eps[i];
    loss += d * d;
  }
  loss /= n;

  const Refs& r = *refs_;
  const double* p = params_.flat().data();
  double* g = grad.data();
  const int e = cfg_.embed_dim;
  const int groups = cfg_.norm_groups;
  const int h = c.h, w = c.w;
  auto gmap = [&](const Refs::Affine& a) { return MatMap(g + a.w, a.rows, a.cols); };

  Mat dout(cfg_.latent_channels, h * w);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    dout.data()[i] = scale * 2.0 * (pred[i] - eps[i]) / n;
  }

  // Output head.
  Mat dact;
  {
    MatMap dw = gmap(r.out_conv);
    nn::Conv3x3Backward(dout, c.out_cols, h, w, 1,
                        WeightMap(p, r.out_conv.w, r.out_conv.rows, r.out_conv.cols),
                        dw, g + r.out_conv.b, &dact);
  }
  Mat dh;
  nn::GroupNormBackward(nn::SiluBackward(c.out_a, dact), c.out_gn, groups,
                        p + r.out_norm.w, g + r.out_norm.w, g + r.out_norm.b, dh);

  Vec demb_act = Vec::Zero(e);
  std::vector<Mat> dskips(static_cast<std::size_t>(cfg_.levels));

  // Decoder, in reverse of the forward order.
  int lh = h >> (cfg_.levels - 1), lw = w >> (cfg_.levels - 1);
  for (int l = 0; l + 1 < cfg_.levels; ++l) {
    const Refs::Affine& u = r.up[static_cast<std::size_t>(l)];
    const int sh = h >> l, sw = w >> l;
    dskips[static_cast<std::size_t>(l)] = dh;
    Mat dup;
    MatMap dw = gmap(u);
    nn::Conv3x3Backward(dh, c.up_cols[static_cast<std::size_t>(l)], sh, sw, 1,
                        WeightMap(p, u.w, u.rows, u.cols), dw, g + u.b, &dup);
    dh = nn::Upsample2xBackward(dup, sh / 2, sw / 2);
  }
  (void)lh;
  (void)lw;

  // Encoder.
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    const int sh = h >> l, sw = w >> l;
    if (l + 1 < cfg_.levels) {
      const Refs::Affine& d = r.down[static_cast<std::size_t>(l)];
      Mat dprev;
      MatMap dw = gmap(d);
      nn::Conv3x3Backward(dh, c.down_cols[static_cast<std::size_t>(l)], sh, sw, 2,
                          WeightMap(p, d.w, d.rows, d.cols), dw, g + d.b, &dprev);
      dh = dprev + dskips[static_cast<std::size_t>(l)];
    }
    for (int b = cfg_.blocks_per_level - 1; b >= 0; --b) {
      const Refs::Block& blk = r.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)];
      const Cache::Block& bc = c.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)];
      const int ch = blk.channels;
      Mat ds2;
      MatMap dw2 = gmap(blk.conv2);
      nn::Conv3x3Backward(dh, bc.cols2, sh, sw, 1, WeightMap(p, blk.conv2.w, ch, ch * 9),
                          dw2, g + blk.conv2.b, &ds2);
      Mat dc1;
      nn::GroupNormBackward(nn::SiluBackward(bc.a2, ds2), bc.gn2, groups,
                            p + blk.norm2.w, g + blk.norm2.w, g + blk.norm2.b, dc1);
      const Vec dbias = dc1.rowwise().sum();
      MatMap(g + blk.emb.w, ch, e).noalias() += dbias * c.emb_act.transpose();
      nn::VecMap(g + blk.emb.b, ch) += dbias;
      demb_act.noalias() += WeightMap(p, blk.emb.w, ch, e).transpose() * dbias;
      Mat ds1;
      MatMap dw1 = gmap(blk.conv1);
      nn::Conv3x3Backward(dc1, bc.cols1, sh, sw, 1, WeightMap(p, blk.conv1.w, ch, ch * 9),
                          dw1, g + blk.conv1.b, &ds1);
      Mat dx;
      nn::GroupNormBackward(nn::SiluBackward(bc.a1, ds1), bc.gn1, groups,
                            p + blk.norm1.w, g + blk.norm1.w, g + blk.norm1.b, dx);
      dh += dx;
    }
  }
  {
    MatMap dw = gmap(r.in_conv);
    nn::Conv3x3Backward(dh, c.in_cols, h, w, 1,
                        WeightMap(p, r.in_conv.w, r.in_conv.rows, r.in_conv.cols),
                        dw, g + r.in_conv.b, nullptr);
  }

  // Embedding path.
  const Vec demb = nn::SiluBackward(c.emb, demb_act);
  if (c.label_row >= 0) {
    nn::VecMap(g + r.class_emb + static_cast<std::size_t>(c.label_row) * e, e) += demb;
  }
  const Vec a1 = nn::Silu(c.fc1_out);
  MatMap(g + r.fc2.w, e, e).noalias() += demb * a1.transpose();
  nn::VecMap(g + r.fc2.b, e) += demb;
  const Vec da1 = WeightMap(p, r.fc2.w, e, e).transpose() * demb;
  const Vec dfc1 = nn::SiluBackward(c.fc1_out, da1);
  MatMap(g + r.fc1.w, e, e).noalias() += dfc1 * c.sinus.transpose();
  nn::VecMap(g + r.fc1.b, e) += dfc1;
  return loss;
}

PerSampleGrads LossAndPerSampleGrads(const NetConfig& cfg,
                                     const ParamStore& params,
                                     const NoiseSchedule& schedule,
                                     std::span<const DiffusionExample> batch) {
  Require(!batch.empty(), ErrorCode::kInvalidArgument, "empty batch");
  const Denoiser net(cfg, params);
  PerSampleGrads out;
  out.losses.resize(batch.size());
  out.grads.resize(batch.size());
  ParallelFor(static_cast<int>(batch.size()), [&](int i) {
    const DiffusionExample& ex = batch[static_cast<std::size_t>(i)];
    const Tensor z_t = ForwardSample(schedule, ex.z0, ex.t, ex.eps);
    std::vector<double> full(params.total_size(), 0.0);
    out.losses[static_cast<std::size_t>(i)] = net.LossAndGrad(
        z_t, ex.t, ex.label, ex.mask_latent ? &*ex.mask_latent : nullptr, ex.eps,
        1.0, full);
    out.grads[static_cast<std::size_t>(i)] = params.GatherUnfrozen(full);
  });
  return out;
}

}  // namespace dpldm

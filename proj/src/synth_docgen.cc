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

#include "dpldm/synth_docgen.h"

#include <algorithm>
#include <string>

#include "dpldm/error.h"
#include "dpldm/rng.h"

namespace dpldm {
namespace {

constexpr double kPage = 1.0;
constexpr double kInk = -1.0;
constexpr double kMinTemplateDifference = 0.05;
constexpr int kMaxTemplateTries = 1000;

// Clipped to the page; empty rectangles are dropped.
void Push(std::vector<PixelRect>& out, PixelRect r, int h, int w) {
  r.x0 = std::clamp(r.x0, 0, w);
  r.x1 = std::clamp(r.x1, 0, w);
  r.y0 = std::clamp(r.y0, 0, h);
  r.y1 = std::clamp(r.y1, 0, h);
  if (r.x1 > r.x0 && r.y1 > r.y0) out.push_back(r);
}

ClassTemplate DrawTemplate(int h, int w, Rng& rng) {
  ClassTemplate t;
  const int margin_x = rng.UniformInt(1, std::max(1, w / 8));
  const int margin_top = rng.UniformInt(1, std::max(1, h / 8));
  const int margin_bottom = rng.UniformInt(1, std::max(1, h / 8));
  int y = margin_top;

  // Header: a left, centred or full-width block (letterhead, title, form bar).
  if (rng.Bernoulli(0.7)) {
    const int hh = rng.UniformInt(2, std::max(2, h / 8));
    const int style = rng.UniformInt(0, 2);
    const int span = w - 2 * margin_x;
    int x0 = margin_x, x1 = w - margin_x;
    if (style == 0) {
      x1 = margin_x + span * rng.UniformInt(3, 6) / 10;
    } else if (style == 1) {
      const int half = span * rng.UniformInt(2, 4) / 10;
      x0 = w / 2 - half;
      x1 = w / 2 + half;
    }
    Push(t.blocks, {x0, y, x1, y + hh}, h, w);
    y += hh + rng.UniformInt(1, 3);
  }

  const int columns = rng.Bernoulli(0.35) ? 2 : 1;
  const int line_h = rng.UniformInt(1, 2);
  const int gap = rng.UniformInt(1, 3);
  const int gutter = 2;
  const int col_w = (w - 2 * margin_x - (columns - 1) * gutter) / columns;
  // Optional block inside the body (figure, signature or stamp).
  const bool figure = rng.Bernoulli(0.4);
  const int fig_h = rng.UniformInt(3, std::max(3, h / 4));
  const int fig_at = rng.UniformInt(0, 3);
  const bool indent = rng.Bernoulli(0.5);
  int line_index = 0;
  while (y + line_h <= h - margin_bottom) {
    if (figure && line_index == fig_at && y + fig_h <= h - margin_bottom) {
      const int fw = col_w * rng.UniformInt(4, 9) / 10;
      Push(t.blocks, {margin_x, y, margin_x + fw, y + fig_h}, h, w);
      y += fig_h + gap;
      ++line_index;
      continue;
    }
    for (int c = 0; c < columns; ++c) {
      const int x0 = margin_x + c * (col_w + gutter) +
                     (indent && line_index % 4 == 0 ? 2 : 0);
      const int x1 = margin_x + c * (col_w + gutter) + col_w;
      Push(t.lines, {x0, y, x1, y + line_h}, h, w);
    }
    y += line_h + gap;
    ++line_index;
  }
  return t;
}

double PixelDifference(const Tensor& a, const Tensor& b) {
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

void Fill(Tensor& img, const PixelRect& r) {
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) img.at(0, y, x) = kInk;
  }
}

BBox Normalize(const PixelRect& r, int h, int w) {
  return {static_cast<double>(r.x0) / w, static_cast<double>(r.y0) / h,
          static_cast<double>(r.x1) / w, static_cast<double>(r.y1) / h};
}

}  // namespace

void DocGenOptions::Validate() const {
  Require(num_classes >= 2, ErrorCode::kInvalidArgument, "need at least 2 classes");
  Require(per_class >= 1, ErrorCode::kInvalidArgument, "need >= 1 sample per class");
  Require(height >= 8 && width >= 8 && height % 8 == 0 && width % 8 == 0,
          ErrorCode::kInvalidArgument,
          "image size must be a positive multiple of 8, got " +
              std::to_string(height) + "x" + std::to_string(width));
  Require(jitter >= 0, ErrorCode::kInvalidArgument, "jitter must be >= 0");
}

Tensor RenderTemplate(const ClassTemplate& t, int height, int width) {
  Tensor img({1, height, width}, kPage);
  for (const PixelRect& r : t.blocks) Fill(img, r);
  for (const PixelRect& r : t.lines) Fill(img, r);
  return img;
}

std::vector<ClassTemplate> MakeTemplates(int num_classes, int height, int width,
                                         std::uint64_t template_seed) {
  std::vector<ClassTemplate> out;
  std::vector<Tensor> rendered;
  Rng rng = Rng::Stream(template_seed, StreamTag::kTemplate);
  for (int tries = 0; static_cast<int>(out.size()) < num_classes; ++tries) {
    Require(tries < kMaxTemplateTries, ErrorCode::kNotConverged,
            "could not draw " + std::to_string(num_classes) +
                " distinct class templates");
    ClassTemplate t = DrawTemplate(height, width, rng);
    Tensor img = RenderTemplate(t, height, width);
    const bool distinct = std::all_of(rendered.begin(), rendered.end(), [&](const Tensor& o) {
      return PixelDifference(o, img) >= kMinTemplateDifference;
    });
    if (!distinct || t.lines.empty()) continue;
    out.push_back(std::move(t));
    rendered.push_back(std::move(img));
  }
  return out;
}

std::vector<DocSample> GenerateDocuments(const DocGenOptions& opts) {
  opts.Validate();
  const int h = opts.height, w = opts.width;
  const std::vector<ClassTemplate> templates =
      MakeTemplates(opts.num_classes, h, w, opts.template_seed);
  const int n = opts.num_classes * opts.per_class;
  std::vector<DocSample> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    DocSample& s = out[static_cast<std::size_t>(i)];
    s.label = i % opts.num_classes;
    const ClassTemplate& t = templates[static_cast<std::size_t>(s.label)];
    Rng rng = Rng::Stream(opts.seed, StreamTag::kDocGen, {static_cast<std::uint64_t>(i)});
    const int j = opts.jitter;
    const int dx = j > 0 ? rng.UniformInt(-j, j) : 0;
    const int dy = j > 0 ? rng.UniformInt(-j, j) : 0;
    s.image = Tensor({1, h, w}, kPage);
    auto shifted = [&](PixelRect r) {
      r.x0 += dx;
      r.x1 += dx;
      r.y0 += dy;
      r.y1 += dy;
      return r;
    };
    std::vector<PixelRect> ink;
    for (const PixelRect& b : t.blocks) Push(ink, shifted(b), h, w);
    for (const PixelRect& b : ink) {
      Fill(s.image, b);
      s.boxes.push_back(Normalize(b, h, w));
    }
    for (const PixelRect& l : t.lines) {
      PixelRect r = shifted(l);
      if (j > 0) {
        // Ragged right edge, an occasional short last line, word gaps.
        const int len = r.x1 - r.x0;
        int cut = rng.UniformInt(0, std::max(0, len * 3 / 10));
        if (rng.Bernoulli(0.15)) cut = std::max(cut, len / 2);
        r.x1 -= cut;
      }
      std::vector<PixelRect> clipped;
      Push(clipped, r, h, w);
      if (clipped.empty()) continue;
      r = clipped.front();
      Fill(s.image, r);
      if (j > 0) {
        for (int x = r.x0 + 3; x < r.x1 - 2; ++x) {
          if (rng.Bernoulli(0.2)) {
            for (int y = r.y0; y < r.y1; ++y) s.image.at(0, y, x) = kPage;
            x += 2;
          }
        }
      }
      s.boxes.push_back(Normalize(r, h, w));
    }
  }
  return out;
}

}  // namespace dpldm

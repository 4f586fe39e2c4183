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

#include "dpldm/nn_ops.h"

#include <cmath>

namespace dpldm::nn {

void Im2Col(const Mat& x, int h, int w, int stride, Mat& cols) {
  const int c_in = static_cast<int>(x.rows());
  const int ho = ConvOut(h, stride), wo = ConvOut(w, stride);
  cols.setZero(c_in * 9, ho * wo);
  for (int c = 0; c < c_in; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            dst[oy * wo + ox] = src[iy * w + ix];
          }
        }
      }
    }
  }
}

void Col2ImAdd(const Mat& cols, int h, int w, int stride, Mat& dx) {
  const int c_in = static_cast<int>(cols.rows() / 9);
  const int ho = ConvOut(h, stride), wo = ConvOut(w, stride);
  for (int c = 0; c < c_in; ++c) {
    double* dst = dx.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            dst[iy * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

Mat Conv3x3(const Mat& x, int h, int w, int stride, const ConstMatMap& weight,
            const double* bias, Mat& cols) {
  Im2Col(x, h, w, stride, cols);
  Mat y = weight * cols;
  if (bias != nullptr) {
    for (Eigen::Index c = 0; c < y.rows(); ++c) y.row(c).array() += bias[c];
  }
  return y;
}

void Conv3x3Backward(const Mat& dy, const Mat& cols, int h, int w, int stride,
                     const ConstMatMap& weight, MatMap& dweight, double* dbias,
                     Mat* dx) {
  dweight.noalias() += dy * cols.transpose();
  if (dbias != nullptr) {
    for (Eigen::Index c = 0; c < dy.rows(); ++c) dbias[c] += dy.row(c).sum();
  }
  if (dx != nullptr) {
    Mat dcols = weight.transpose() * dy;
    dx->setZero(weight.cols() / 9, static_cast<Eigen::Index>(h) * w);
    Col2ImAdd(dcols, h, w, stride, *dx);
  }
}

Mat GroupNorm(const Mat& x, int groups, const double* gamma, const double* beta,
              GroupNormCache& cache) {
  constexpr double kEps = 1e-5;
  const Eigen::Index channels = x.rows(), hw = x.cols();
  const Eigen::Index per = channels / groups;
  cache.xhat.resize(channels, hw);
  cache.inv_std.assign(static_cast<std::size_t>(groups), 0.0);
  Mat y(channels, hw);
  for (int g = 0; g < groups; ++g) {
    auto block = x.middleRows(g * per, per);
    const double n = static_cast<double>(per * hw);
    const double mean = block.sum() / n;
    const double var = (block.array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    cache.inv_std[static_cast<std::size_t>(g)] = inv;
    cache.xhat.middleRows(g * per, per) = (block.array() - mean) * inv;
  }
  for (Eigen::Index c = 0; c < channels; ++c) {
    y.row(c) = cache.xhat.row(c).array() * gamma[c] + beta[c];
  }
  return y;
}

void GroupNormBackward(const Mat& dy, const GroupNormCache& cache, int groups,
                       const double* gamma, double* dgamma, double* dbeta,
                       Mat& dx) {
  const Eigen::Index channels = dy.rows(), hw = dy.cols();
  const Eigen::Index per = channels / groups;
  Mat dxhat(channels, hw);
  for (Eigen::Index c = 0; c < channels; ++c) {
    dgamma[c] += (dy.row(c).array() * cache.xhat.row(c).array()).sum();
    dbeta[c] += dy.row(c).sum();
    dxhat.row(c) = dy.row(c) * gamma[c];
  }
  dx.resize(channels, hw);
  for (int g = 0; g < groups; ++g) {
    const double n = static_cast<double>(per * hw);
    auto dxh = dxhat.middleRows(g * per, per);
    auto xh = cache.xhat.middleRows(g * per, per);
    const double mean_dxh = dxh.sum() / n;
    const double mean_dxh_xh = (dxh.array() * xh.array()).sum() / n;
    dx.middleRows(g * per, per) =
        (dxh.array() - mean_dxh - xh.array() * mean_dxh_xh) *
        cache.inv_std[static_cast<std::size_t>(g)];
  }
}

namespace {
inline double Sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

Mat Silu(const Mat& x) {
  return x.unaryExpr([](double v) { return v * Sigmoid(v); });
}

Mat SiluBackward(const Mat& x, const Mat& dy) {
  return x.binaryExpr(dy, [](double v, double g) {
    const double s = Sigmoid(v);
    return g * s * (1.0 + v * (1.0 - s));
  });
}

Vec Silu(const Vec& x) {
  return x.unaryExpr([](double v) { return v * Sigmoid(v); });
}

Vec SiluBackward(const Vec& x, const Vec& dy) {
  return x.binaryExpr(dy, [](double v, double g) {
    const double s = Sigmoid(v);
    return g * s * (1.0 + v * (1.0 - s));
  });
}

Mat Relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat ReluBackward(const Mat& x, const Mat& dy) {
  return x.binaryExpr(dy, [](double v, double g) { return v > 0.0 ? g : 0.0; });
}

Mat Upsample2x(const Mat& x, int h, int w) {
  Mat y(x.rows(), 4 * h * w);
  const int w2 = 2 * w;
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const double* src = x.row(c).data();
    double* dst = y.row(c).data();
    for (int yy = 0; yy < 2 * h; ++yy) {
      for (int xx = 0; xx < w2; ++xx) dst[yy * w2 + xx] = src[(yy / 2) * w + xx / 2];
    }
  }
  return y;
}

Mat Upsample2xBackward(const Mat& dy, int h, int w) {
  Mat dx = Mat::Zero(dy.rows(), h * w);
  const int w2 = 2 * w;
  for (Eigen::Index c = 0; c < dy.rows(); ++c) {
    const double* src = dy.row(c).data();
    double* dst = dx.row(c).data();
    for (int yy = 0; yy < 2 * h; ++yy) {
      for (int xx = 0; xx < w2; ++xx) dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
    }
  }
  return dx;
}

void FanInUniform(double* data, std::size_t n, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < n; ++i) data[i] = (2.0 * rng.Uniform() - 1.0) * bound;
}

}  // namespace dpldm::nn

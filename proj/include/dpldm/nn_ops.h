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

#ifndef DPLDM_NN_OPS_H_
#define DPLDM_NN_OPS_H_

// Forward/backward kernels shared by the denoiser, the feature extractor and
// the downstream classifier. Feature maps are [C, H*W] row-major matrices;
// spatial extents travel alongside.

#include <Eigen/Dense>

#include <vector>

#include "dpldm/rng.h"

namespace dpldm::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

inline int ConvOut(int n, int stride) { return (n - 1) / stride + 1; }

// 3x3 kernel, zero padding 1. Rows of `cols` are (c_in, ky, kx).
void Im2Col(const Mat& x, int h, int w, int stride, Mat& cols);
void Col2ImAdd(const Mat& cols, int h, int w, int stride, Mat& dx);

// weight: [c_out, c_in * 9]; bias may be null.
Mat Conv3x3(const Mat& x, int h, int w, int stride, const ConstMatMap& weight,
            const double* bias, Mat& cols);
// Accumulates into dweight/dbias; writes dx when non-null.
void Conv3x3Backward(const Mat& dy, const Mat& cols, int h, int w, int stride,
                     const ConstMatMap& weight, MatMap& dweight, double* dbias,
                     Mat* dx);

struct GroupNormCache {
  Mat xhat;
  std::vector<double> inv_std;  // per group
};

Mat GroupNorm(const Mat& x, int groups, const double* gamma, const double* beta,
              GroupNormCache& cache);
void GroupNormBackward(const Mat& dy, const GroupNormCache& cache, int groups,
                       const double* gamma, double* dgamma, double* dbeta,
                       Mat& dx);

Mat Silu(const Mat& x);
// dy * d silu(x) / dx
Mat SiluBackward(const Mat& x, const Mat& dy);
Vec Silu(const Vec& x);
Vec SiluBackward(const Vec& x, const Vec& dy);

Mat Relu(const Mat& x);
Mat ReluBackward(const Mat& x, const Mat& dy);

// Nearest-neighbour 2x upsampling of an h x w map, and its adjoint.
Mat Upsample2x(const Mat& x, int h, int w);
Mat Upsample2xBackward(const Mat& dy, int h, int w);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void FanInUniform(double* data, std::size_t n, int fan_in, Rng& rng);

}  // namespace dpldm::nn

#endif  // DPLDM_NN_OPS_H_

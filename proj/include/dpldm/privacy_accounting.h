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

#ifndef DPLDM_PRIVACY_ACCOUNTING_H_
#define DPLDM_PRIVACY_ACCOUNTING_H_

#include <string_view>
#include <vector>

namespace dpldm {

struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 1e-5;
};

std::vector<int> DefaultRdpOrders();  // 2, 3, ..., 256

struct AccountantQuery {
  double q = 0.0;       // Poisson sampling rate
  double sigma = 1.0;   // noise multiplier
  long steps = 1;
  std::vector<int> orders = DefaultRdpOrders();
};

struct RdpCurve {
  std::vector<int> orders;
  std::vector<double> rho;
};

// Integer-order RDP of the Poisson-subsampled Gaussian mechanism composed
// over `steps` steps:
//
//   rho_a = steps / (a - 1) * log sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 sigma^2))
//
// The k = 0, 1 terms contribute exactly the binomial mass, so the sum is
// evaluated as 1 + S with S accumulated in log space from k >= 2.
RdpCurve RdpSubsampledGaussian(const AccountantQuery& query);

// eps = min_a rho_a + log(1/delta) / (a - 1).
double RdpToDp(const RdpCurve& curve, double delta);

// CLT Gaussian-DP parameter mu = q sqrt(steps) sqrt(exp(1/sigma^2) - 1).
double GdpMu(double q, double sigma, long steps);
// delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2).
double GdpDelta(double epsilon, double mu);
// Inverts GdpDelta for the given delta by bracketed bisection.
double GdpEpsilon(double q, double sigma, long steps, double delta);

enum class AccountantKind { kRdp, kGdp };

std::string_view AccountantName(AccountantKind kind);
AccountantKind ParseAccountant(std::string_view name);

// Epsilon spent after `steps` steps at (q, sigma). Infinite when sigma == 0
// and q > 0.
double ComputeEpsilon(AccountantKind kind, double q, double sigma, long steps,
                      double delta);

// Tracks spend step by step for one (q, sigma, delta) setting.
class PrivacyAccountant {
 public:
  PrivacyAccountant(AccountantKind kind, double q, double sigma, double delta);
  double EpsilonAfter(long steps) const;
  AccountantKind kind() const { return kind_; }

 private:
  AccountantKind kind_;
  double q_, sigma_, delta_;
  RdpCurve per_step_;
};

struct Calibration {
  double sigma = 0.0;
  double achieved_epsilon = 0.0;
  int iterations = 0;
};

inline constexpr double kSigmaSearchLow = 0.3;
inline constexpr double kSigmaSearchHigh = 1000.0;
inline constexpr double kCalibrationRelTol = 1e-3;

// Bisection on sigma until target*(1 - 1e-3) <= eps(sigma) <= target. The
// returned sigma always satisfies eps <= target. Throws kNotConverged with
// the bracket when the target cannot be met inside [low, high].
Calibration CalibrateSigma(const PrivacyBudget& target, double q, long steps,
                           AccountantKind kind,
                           double sigma_low = kSigmaSearchLow,
                           double sigma_high = kSigmaSearchHigh);

// Number of Poisson-sampled steps covering `epochs` passes at rate q.
long StepsForEpochs(double epochs, double q);

}  // namespace dpldm

#endif  // DPLDM_PRIVACY_ACCOUNTING_H_

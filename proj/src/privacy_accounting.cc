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

#include "dpldm/privacy_accounting.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dpldm/error.h"

namespace dpldm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double LogBinomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log(exp(x) - 1) for x > 0.
double LogExpm1(double x) {
  return x > 30.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x));
}

// log(1 + exp(x)).
double Softplus(double x) {
  return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Per-step (a - 1) * rho_a for one order.
double ScaledLogMoment(int alpha, double q, double sigma) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(alpha));
  double max_term = -kInf;
  for (int k = 2; k <= alpha; ++k) {
    double t = LogBinomial(alpha, k) + k * log_q +
               LogExpm1(static_cast<double>(k) * (k - 1) * inv2s2);
    if (alpha > k) t += (alpha - k) * log_1mq;
    terms.push_back(t);
    max_term = std::max(max_term, t);
  }
  if (max_term == -kInf) return 0.0;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  return Softplus(max_term + std::log(acc));
}

double StdNormalCdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double LogStdNormalCdf(double x) {
  if (x > -30.0) return std::log(StdNormalCdf(x));
  // Asymptotic tail: Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4).
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * M_PI) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

void CheckQuery(double q, double sigma, long steps) {
  Require(q >= 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "sampling rate q must lie in [0, 1]");
  Require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::kInvalidArgument,
          "noise multiplier must be finite and non-negative");
  Require(steps >= 0, ErrorCode::kInvalidArgument, "steps must be >= 0");
}

}  // namespace

std::vector<int> DefaultRdpOrders() {
  std::vector<int> orders;
  for (int a = 2; a <= 256; ++a) orders.push_back(a);
  return orders;
}

RdpCurve RdpSubsampledGaussian(const AccountantQuery& query) {
  CheckQuery(query.q, query.sigma, query.steps);
  Require(!query.orders.empty(), ErrorCode::kInvalidArgument, "no RDP orders");
  RdpCurve curve;
  curve.orders = query.orders;
  curve.rho.resize(query.orders.size());
  const double steps = static_cast<double>(query.steps);
  for (std::size_t i = 0; i < query.orders.size(); ++i) {
    const int a = query.orders[i];
    Require(a >= 2, ErrorCode::kInvalidArgument, "RDP orders must be >= 2");
    double rho;
    if (query.q == 0.0 || query.steps == 0) {
      rho = 0.0;
    } else if (query.sigma == 0.0) {
      rho = kInf;
    } else if (query.q == 1.0) {
      rho = steps * a / (2.0 * query.sigma * query.sigma);
    } else {
      rho = ScaledLogMoment(a, query.q, query.sigma) / (a - 1) * steps;
    }
    curve.rho[i] = rho;
  }
  return curve;
}

double RdpToDp(const RdpCurve& curve, double delta) {
  Require(!curve.orders.empty() && curve.orders.size() == curve.rho.size(),
          ErrorCode::kInvalidArgument, "empty or malformed RDP curve");
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "delta must lie in (0, 1)");
  const double log_inv_delta = -std::log(delta);
  double best = kInf;
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    best = std::min(best, curve.rho[i] + log_inv_delta / (curve.orders[i] - 1));
  }
  return best;
}

double GdpMu(double q, double sigma, long steps) {
  CheckQuery(q, sigma, steps);
  if (q == 0.0 || steps == 0) return 0.0;
  if (sigma == 0.0) return kInf;
  return q * std::sqrt(static_cast<double>(steps)) *
         std::sqrt(std::expm1(1.0 / (sigma * sigma)));
}

double GdpDelta(double epsilon, double mu) {
  if (mu == 0.0) return 0.0;
  const double a = -epsilon / mu + mu / 2.0;
  const double b = -epsilon / mu - mu / 2.0;
  const double second = std::exp(epsilon + LogStdNormalCdf(b));
  return StdNormalCdf(a) - second;
}

double GdpEpsilon(double q, double sigma, long steps, double delta) {
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "delta must lie in (0, 1)");
  const double mu = GdpMu(q, sigma, steps);
  if (mu == 0.0) return 0.0;
  if (!std::isfinite(mu)) return kInf;
  if (GdpDelta(0.0, mu) <= delta) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (GdpDelta(hi, mu) > delta) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e7) {
      Fail(ErrorCode::kNotConverged,
           "GDP epsilon root not bracketed within [0, 1e7] (mu=" +
               std::to_string(mu) + ")");
    }
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (GdpDelta(mid, mu) > delta) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

std::string_view AccountantName(AccountantKind kind) {
  return kind == AccountantKind::kRdp ? "rdp" : "gdp";
}

AccountantKind ParseAccountant(std::string_view name) {
  if (name == "rdp") return AccountantKind::kRdp;
  if (name == "gdp") return AccountantKind::kGdp;
  Fail(ErrorCode::kInvalidArgument,
       "unknown accountant '" + std::string(name) + "' (use rdp or gdp)");
}

double ComputeEpsilon(AccountantKind kind, double q, double sigma, long steps,
                      double delta) {
  if (kind == AccountantKind::kGdp) return GdpEpsilon(q, sigma, steps, delta);
  AccountantQuery query;
  query.q = q;
  query.sigma = sigma;
  query.steps = steps;
  return RdpToDp(RdpSubsampledGaussian(query), delta);
}

PrivacyAccountant::PrivacyAccountant(AccountantKind kind, double q,
                                     double sigma, double delta)
    : kind_(kind), q_(q), sigma_(sigma), delta_(delta) {
  CheckQuery(q, sigma, 1);
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "delta must lie in (0, 1)");
  if (kind_ == AccountantKind::kRdp) {
    AccountantQuery query;
    query.q = q;
    query.sigma = sigma;
    query.steps = 1;
    per_step_ = RdpSubsampledGaussian(query);
  }
}

double PrivacyAccountant::EpsilonAfter(long steps) const {
  if (kind_ == AccountantKind::kGdp) {
    return GdpEpsilon(q_, sigma_, steps, delta_);
  }
  RdpCurve curve = per_step_;
  for (double& r : curve.rho) r *= static_cast<double>(steps);
  return RdpToDp(curve, delta_);
}

Calibration CalibrateSigma(const PrivacyBudget& target, double q, long steps,
                           AccountantKind kind, double sigma_low,
                           double sigma_high) {
  Require(target.epsilon > 0.0, ErrorCode::kInvalidArgument,
          "target epsilon must be positive");
  Require(sigma_low > 0.0 && sigma_low < sigma_high, ErrorCode::kInvalidArgument,
          "invalid sigma bracket");
  const double floor = target.epsilon * (1.0 - kCalibrationRelTol);
  auto eps_at = [&](double s) {
    return ComputeEpsilon(kind, q, s, steps, target.delta);
  };
  const std::string bracket = "[" + std::to_string(sigma_low) + ", " +
                              std::to_string(sigma_high) + "]";
  const double eps_high = eps_at(sigma_high);
  if (eps_high > target.epsilon) {
    Fail(ErrorCode::kNotConverged,
         "target epsilon " + std::to_string(target.epsilon) +
             " unachievable: sigma bracket " + bracket + " yields at best " +
             std::to_string(eps_high));
  }
  const double eps_low = eps_at(sigma_low);
  if (eps_low <= target.epsilon) {
    if (eps_low >= floor) return {sigma_low, eps_low, 0};
    Fail(ErrorCode::kNotConverged,
         "target epsilon " + std::to_string(target.epsilon) +
             " is looser than the spend at the bracket floor: sigma bracket " +
             bracket + " yields at most " + std::to_string(eps_low));
  }
  double lo = sigma_low, hi = sigma_high, eps_hi = eps_high;
  for (int it = 1; it <= 200; ++it) {
    if (eps_hi >= floor) return {hi, eps_hi, it};
    const double mid = std::sqrt(lo * hi);
    const double e = eps_at(mid);
    if (e <= target.epsilon) {
      hi = mid;
      eps_hi = e;
    } else {
      lo = mid;
    }
  }
  if (eps_hi >= floor) return {hi, eps_hi, 200};
  Fail(ErrorCode::kNotConverged,
       "sigma bisection did not reach the tolerance window within bracket " +
           bracket);
}

long StepsForEpochs(double epochs, double q) {
  Require(q > 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "sampling rate must lie in (0, 1]");
  Require(epochs >= 0.0, ErrorCode::kInvalidArgument, "epochs must be >= 0");
  return std::lround(epochs / q);
}

}  // namespace dpldm

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace acegfn {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Logit assigned to masked actions before the log-softmax.
inline constexpr double kMaskedLogit = -1e30;

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline double log_sum_exp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// log(1 + exp(q)), stable for large |q|.
inline double softplus(double q) {
  if (q > 0.0) return q + std::log1p(std::exp(-q));
  return std::log1p(std::exp(q));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace acegfn

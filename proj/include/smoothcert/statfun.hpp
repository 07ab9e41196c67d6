#pragma once

// Special functions and confidence bounds shared by the radius formulas and
// the Monte Carlo engine. Everything here is a pure function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "smoothcert/error.hpp"

namespace smoothcert {

/// A real number in [0, 1].
class Probability {
 public:
  constexpr Probability() = default;
  explicit Probability(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw DomainError("probability out of [0,1]: " + std::to_string(value));
    }
  }
  constexpr double value() const { return value_; }
  constexpr operator double() const { return value_; }

 private:
  double value_ = 0.0;
};

/// Miscoverage level alpha of a one-sided bound, strictly inside (0, 1).
class ConfidenceLevel {
 public:
  explicit ConfidenceLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw DomainError("alpha must lie in (0,1): " + std::to_string(alpha));
    }
  }
  constexpr double alpha() const { return alpha_; }

 private:
  double alpha_;
};

/// Radius, dimension and noise scale of an isotropic Gaussian ball-mass query.
struct BallMassQuery {
  double radius;
  std::int64_t dim;
  double sigma;

  void validate() const {
    if (!(radius >= 0.0) || dim < 1 || !(sigma > 0.0)) {
      throw DomainError("ball mass query needs radius >= 0, dim >= 1, sigma > 0");
    }
  }
};

/// Standard normal CDF.
inline Probability normal_cdf(double z) {
  if (!std::isfinite(z)) throw DomainError("normal_cdf: non-finite argument");
  return Probability(0.5 * std::erfc(-z / std::numbers::sqrt2));
}

namespace detail {

// Acklam's rational approximation for the lower half, p in (0, 0.5].
// Relative error about 1e-9, polished afterwards by a Halley step.
inline double quantile_lower_initial(double p) {
  constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                          -2.759285104469687e+02, 1.383577518672690e+02,
                          -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                          -1.556989798598866e+02, 6.680131188771972e+01,
                          -1.328068155288572e+01};
  constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                          -2.400758277161838e+00, -2.549732539343734e+00,
                          4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                          2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

inline double quantile_lower(double p) {
  double x = quantile_lower_initial(p);
  // Halley refinement against the erfc-based CDF; two passes reach full
  // double precision from Acklam's starting point.
  for (int i = 0; i < 2; ++i) {
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

}  // namespace detail

/// Inverse standard normal CDF. Exact 0 and 1 are rejected; callers that may
/// hit them clamp first (see clamp_open_unit) and record the clamp.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie in (0,1), got " + std::to_string(p));
  }
  if (p == 0.5) return 0.0;
  // 1 - p is exact for p >= 0.5, so the reflection is exact too.
  if (p > 0.5) return -detail::quantile_lower(1.0 - p);
  return detail::quantile_lower(p);
}

inline constexpr double kQuantileClampEps = 1e-15;

/// Clamps into [1e-15, 1 - 1e-15]; sets *clamped when the value moved.
inline double clamp_open_unit(double p, bool* clamped = nullptr) {
  const double out = std::clamp(p, kQuantileClampEps, 1.0 - kQuantileClampEps);
  if (clamped != nullptr && out != p) *clamped = true;
  return out;
}

/// P(X >= k) for X ~ Binomial(n, p). The pmf is accumulated relative to its
/// value at max(k, mode) using the term ratio recurrence, walking outward and
/// stopping once terms drop below 1e-18 of the running sum.
inline double binomial_upper_tail(std::int64_t k, std::int64_t n, double p) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;

  const double nd = static_cast<double>(n);
  const double log_odds = std::log(p) - std::log1p(-p);
  const auto mode = std::clamp(static_cast<std::int64_t>(std::floor((nd + 1.0) * p)),
                               std::int64_t{0}, n);
  const std::int64_t start = std::max(k, mode);
  const double sd = static_cast<double>(start);
  const double log_anchor = std::lgamma(nd + 1.0) - std::lgamma(sd + 1.0) -
                            std::lgamma(nd - sd + 1.0) + sd * std::log(p) +
                            (nd - sd) * std::log1p(-p);

  constexpr double kCutoff = 1e-18;
  double sum = 1.0;
  // log pmf(j+1) - log pmf(j) = log((n-j)/(j+1)) + log(p/q)
  double log_term = 0.0;
  for (std::int64_t j = start; j < n; ++j) {
    log_term += std::log((nd - static_cast<double>(j)) / static_cast<double>(j + 1)) + log_odds;
    const double term = std::exp(log_term);
    sum += term;
    if (term < kCutoff * sum && j + 1 > mode) break;
  }
  log_term = 0.0;
  for (std::int64_t j = start; j > k; --j) {
    log_term -= std::log((nd - static_cast<double>(j) + 1.0) / static_cast<double>(j)) + log_odds;
    const double term = std::exp(log_term);
    sum += term;
    if (term < kCutoff * sum) break;
  }
  return std::min(1.0, sum * std::exp(log_anchor));
}

/// One-sided Clopper-Pearson lower limit: the p solving
/// P(X >= successes | Binomial(trials, p)) = alpha, found by bisection on
/// the exact tail.
inline Probability clopper_pearson_lower(std::int64_t successes, std::int64_t trials,
                                         ConfidenceLevel alpha) {
  if (trials < 1) throw DomainError("clopper_pearson_lower: trials must be >= 1");
  if (successes < 0 || successes > trials) {
    throw DomainError("clopper_pearson_lower: successes outside [0, trials]");
  }
  if (successes == 0) return Probability(0.0);
  if (successes == trials) {
    // Tail is p^n, so the root has a closed form.
    return Probability(std::pow(alpha.alpha(), 1.0 / static_cast<double>(trials)));
  }
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (binomial_upper_tail(successes, trials, mid) < alpha.alpha()) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return Probability(lo);
}

/// Psi(r): mass of N(0, sigma^2 I_dim) inside the l2 ball of radius r,
/// i.e. P(dim/2, r^2 / (2 sigma^2)).
inline Probability gaussian_ball_mass(const BallMassQuery& q) {
  q.validate();
  if (q.radius == 0.0) return Probability(0.0);
  const double x = q.radius * q.radius / (2.0 * q.sigma * q.sigma);
  if (std::isinf(x)) return Probability(1.0);
  return Probability(boost::math::gamma_p(0.5 * static_cast<double>(q.dim), x));
}

namespace detail {

// Upper tail 1 - Psi(r), evaluated directly to keep relative accuracy.
inline double gaussian_ball_tail(double radius, std::int64_t dim, double sigma) {
  const double x = radius * radius / (2.0 * sigma * sigma);
  return boost::math::gamma_q(0.5 * static_cast<double>(dim), x);
}

}  // namespace detail

/// Inverse of gaussian_ball_mass in the radius, by bisection with automatic
/// bracket expansion.
inline double gaussian_ball_mass_inv(double p, std::int64_t dim, double sigma) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("gaussian_ball_mass_inv: p must lie in (0,1)");
  }
  if (dim < 1 || !(sigma > 0.0)) {
    throw DomainError("gaussian_ball_mass_inv: dim >= 1 and sigma > 0 required");
  }
  // Work on whichever side of the distribution keeps the target away from 1.
  const bool upper = p > 0.5;
  const double target = upper ? 1.0 - p : p;
  auto below_root = [&](double r) {
    if (upper) return detail::gaussian_ball_tail(r, dim, sigma) > target;
    return gaussian_ball_mass({r, dim, sigma}).value() < target;
  };

  double lo = 0.0;
  double hi = sigma * std::sqrt(static_cast<double>(dim));
  while (below_root(hi)) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi)) throw DomainError("gaussian_ball_mass_inv: bracket diverged");
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (below_root(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace smoothcert

#pragma once

// Closed-form smoothed probabilities for a noisy branch that is up-sampled by
// a linear resize before a linear score is applied: the score difference is
// Gaussian with mean dw.R(x) + db and deviation sigma * ||R^T dw||.

#include <cmath>
#include <span>
#include <vector>

#include "smoothcert/partition.hpp"
#include "smoothcert/statfun.hpp"

namespace smoothcert::testing {

/// R^T w, built column by column from R applied to basis vectors.
inline std::vector<double> pullback(const ResizePlan& plan, std::span<const double> w) {
  const std::size_t in = plan.from().size(), out = plan.to().size();
  std::vector<double> e(in, 0.0), col(out), v(in, 0.0);
  for (std::size_t j = 0; j < in; ++j) {
    e[j] = 1.0;
    plan.apply(e, col);
    e[j] = 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < out; ++i) s += w[i] * col[i];
    v[j] = s;
  }
  return v;
}

/// Mean and deviation of dw.R(x + eps) + db with eps ~ N(0, sigma^2 I).
struct ProjectedScore {
  double mean = 0.0;
  double sd = 0.0;
};

inline ProjectedScore projected_score(const ResizePlan& plan, std::span<const double> dw, double db,
                                      std::span<const double> sub, double sigma) {
  const auto v = pullback(plan, dw);
  ProjectedScore p;
  p.mean = db;
  double n2 = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    p.mean += v[j] * sub[j];
    n2 += v[j] * v[j];
  }
  p.sd = sigma * std::sqrt(n2);
  return p;
}

/// P(class 0) for a two-class linear model seen through the resize.
inline double branch_prob_class0(const ResizePlan& plan, std::span<const double> w0,
                                 std::span<const double> w1, double b0, double b1,
                                 std::span<const double> sub, double sigma) {
  std::vector<double> dw(w0.size());
  for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = w0[i] - w1[i];
  const auto s = projected_score(plan, dw, b0 - b1, sub, sigma);
  return normal_cdf(s.mean / s.sd);
}

}  // namespace smoothcert::testing

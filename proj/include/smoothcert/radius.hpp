#pragma once

// Certified l2 radii for single-input smoothing and for dual (two sub-input)
// smoothing, their lower-bound forms, the dimension-dependent upper bounds,
// the k-way generalization and the unequal-noise extension.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smoothcert/error.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/statfun.hpp"

namespace smoothcert {

/// Most-probable (p_a) and runner-up (p_b) smoothed probabilities of one
/// branch. p_a is normally a lower bound and p_b an upper bound.
struct BranchProbs {
  double p_a = 0.0;
  double p_b = 0.0;

  /// Worst-case runner-up convention p_b = 1 - p_a.
  static BranchProbs worst_case(double p_a) { return {p_a, 1.0 - p_a}; }

  void require_open_unit() const {
    if (!(p_a > 0.0 && p_a < 1.0 && p_b > 0.0 && p_b < 1.0)) {
      throw DomainError("branch probabilities must lie in (0,1)");
    }
  }
};

enum class RadiusCaveat { none, saddle_point_k_gt_2, boundary_optimum };

inline std::string to_string(RadiusCaveat c) {
  switch (c) {
    case RadiusCaveat::none: return "none";
    case RadiusCaveat::saddle_point_k_gt_2: return "saddle_point_k_gt_2";
    case RadiusCaveat::boundary_optimum: return "boundary_optimum";
  }
  return "unknown";
}

struct RadiusResult {
  double radius = 0.0;
  std::optional<double> tilde_p;  // averaged probability sum, multi-branch results only
  bool certified = false;
  RadiusCaveat caveat = RadiusCaveat::none;
  double sigma = 0.0;
  double budget = 0.0;  // s: lower bound on the sum of per-branch perturbation norms
  bool clamped = false;

  static RadiusResult abstain(double sigma) {
    RadiusResult r;
    r.sigma = sigma;
    return r;
  }
};

namespace detail {

inline void require_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be positive");
}

inline void require_open(double p, const char* what) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError(std::string(what) + " must lie in (0,1), got " + std::to_string(p));
  }
}

// tilde_p is a sum of four rounded values; accept it up to a few ulps past 1.
inline constexpr double kTildeSlack = 1e-12;

inline double checked_tilde(double sum_half, double limit) {
  if (sum_half > limit + kTildeSlack) {
    throw DomainError("tilde_p = " + std::to_string(sum_half) + " exceeds " +
                      std::to_string(limit));
  }
  return std::min(sum_half, limit);
}

inline double quantile_clamped(double p, bool& clamped) {
  return normal_quantile(clamp_open_unit(p, &clamped));
}

}  // namespace detail

/// sigma/2 * (Phi^-1(p_a) - Phi^-1(p_b)); not certified when p_a < p_b.
inline RadiusResult rs_radius(const BranchProbs& p, double sigma) {
  detail::require_sigma(sigma);
  p.require_open_unit();
  RadiusResult r = RadiusResult::abstain(sigma);
  if (p.p_a < p.p_b) return r;
  r.budget = sigma * (normal_quantile(p.p_a) - normal_quantile(p.p_b));
  r.radius = 0.5 * r.budget;
  r.certified = true;
  return r;
}

/// sigma * Phi^-1(p_a_lower) when p_a_lower > 1/2, otherwise abstain.
inline RadiusResult rs_radius_lower(double p_a_lower, double sigma) {
  detail::require_sigma(sigma);
  detail::require_open(p_a_lower, "p_a_lower");
  RadiusResult r = RadiusResult::abstain(sigma);
  if (!(p_a_lower > 0.5)) return r;
  r.radius = sigma * normal_quantile(p_a_lower);
  r.budget = 2.0 * r.radius;
  r.certified = true;
  return r;
}

/// Dual smoothing radius from both branches' top-two probabilities:
/// sigma/sqrt2 * (Phi^-1(pA_l) + Phi^-1(pA_r) - 2 Phi^-1(tilde_p / 2)).
inline RadiusResult drs_radius(const BranchProbs& left, const BranchProbs& right, double sigma) {
  detail::require_sigma(sigma);
  left.require_open_unit();
  right.require_open_unit();
  const double tilde =
      detail::checked_tilde(0.5 * (left.p_a + right.p_a + left.p_b + right.p_b), 1.0);
  RadiusResult r = RadiusResult::abstain(sigma);
  r.tilde_p = tilde;
  if (left.p_a + right.p_a < left.p_b + right.p_b) return r;
  const double s = sigma * (normal_quantile(left.p_a) + normal_quantile(right.p_a) -
                            2.0 * normal_quantile(0.5 * tilde));
  if (s < 0.0) return r;
  r.budget = s;
  r.radius = s / std::numbers::sqrt2;
  r.certified = true;
  return r;
}

/// Lower-bound form: certified iff p_l + p_r >= 1, radius
/// sigma/sqrt2 * (Phi^-1(p_l) + Phi^-1(p_r)).
inline RadiusResult drs_radius_lower(double p_a_left, double p_a_right, double sigma) {
  detail::require_sigma(sigma);
  detail::require_open(p_a_left, "p_a_left");
  detail::require_open(p_a_right, "p_a_right");
  RadiusResult r = RadiusResult::abstain(sigma);
  r.tilde_p = 1.0;
  if (!(p_a_left + p_a_right >= 1.0)) return r;
  const double s = sigma * (normal_quantile(p_a_left) + normal_quantile(p_a_right));
  r.budget = std::max(0.0, s);
  r.radius = r.budget / std::numbers::sqrt2;
  r.certified = true;
  return r;
}

/// Combines two single-branch lower-bound radii: (R_l + R_r) / sqrt2.
inline RadiusResult drs_from_rs_identity(const RadiusResult& left, const RadiusResult& right) {
  if (left.sigma != right.sigma) {
    throw DomainError("drs_from_rs_identity: branch radii computed with different sigma");
  }
  RadiusResult r = RadiusResult::abstain(left.sigma);
  if (!left.certified || !right.certified) return r;
  r.budget = left.radius + right.radius;
  r.radius = r.budget / std::numbers::sqrt2;
  r.certified = true;
  r.tilde_p = 1.0;
  return r;
}

/// Error margin between estimated and true probability used by the
/// dimension upper bound.
inline constexpr double kUpperBoundMargin = 5e-7;

/// (5 / sqrt d) * Psi^-1(p_max / (1 - 5e-7); N(0, sigma^2 I_d)).
inline double rs_upper_bound(double p_max, std::int64_t dim, double sigma) {
  detail::require_sigma(sigma);
  if (dim < 1) throw DomainError("rs_upper_bound: dim must be >= 1");
  if (!(p_max >= 0.0 && p_max <= 1.0)) throw DomainError("rs_upper_bound: p_max outside [0,1]");
  const double adjusted = p_max / (1.0 - kUpperBoundMargin);
  if (!(adjusted < 1.0)) {
    throw DomainError("rs_upper_bound: p_max / (1 - 5e-7) must stay below 1");
  }
  if (adjusted == 0.0) return 0.0;
  return 5.0 / std::sqrt(static_cast<double>(dim)) * gaussian_ball_mass_inv(adjusted, dim, sigma);
}

/// Sum of the per-branch bounds, each taken in the branch's own dimension:
/// 5/sqrt(2m) Psi^-1(.; m) + 5/sqrt(2n) Psi^-1(.; n).
inline double drs_upper_bound(double p_max_left, double p_max_right, std::int64_t m,
                              std::int64_t n, double sigma) {
  detail::require_sigma(sigma);
  if (m < 1 || n < 1) throw DomainError("drs_upper_bound: branch dimensions must be >= 1");
  auto term = [&](double p, std::int64_t dim) {
    // rs_upper_bound(p, dim) = 5/sqrt(dim) * Psi^-1; rescale 1/sqrt(dim) -> 1/sqrt(2 dim).
    return rs_upper_bound(p, dim, sigma) / std::numbers::sqrt2;
  };
  return term(p_max_left, m) + term(p_max_right, n);
}

/// k-way generalization evaluated at the symmetric stationary point
/// p'_j = tilde_p / k. Only k = 2 is a certified minimum; larger k is
/// reported with the saddle caveat and certified = false.
inline RadiusResult k_partition_radius(std::span<const BranchProbs> branches, double sigma) {
  detail::require_sigma(sigma);
  const std::size_t k = branches.size();
  if (k < 2) throw DomainError("k_partition_radius needs at least two branches");
  double sum = 0.0;
  double quantile_sum = 0.0;
  for (const auto& b : branches) {
    detail::require_open(b.p_a, "p_a");
    if (!(b.p_b >= 0.0 && b.p_b < 1.0)) throw DomainError("p_b must lie in [0,1)");
    sum += b.p_a + b.p_b;
    quantile_sum += normal_quantile(b.p_a);
  }
  const double kd = static_cast<double>(k);
  double tilde = 0.5 * sum;
  if (k == 2) tilde = detail::checked_tilde(tilde, 1.0);
  const double share = tilde / kd;
  if (!(share > 0.0 && share < 1.0)) {
    throw DomainError("k_partition_radius: tilde_p / k outside (0,1)");
  }
  RadiusResult r = RadiusResult::abstain(sigma);
  r.tilde_p = tilde;
  const double s = sigma * (quantile_sum - kd * normal_quantile(share));
  r.budget = s;
  r.radius = std::max(0.0, s) / std::sqrt(kd);
  if (k == 2) {
    r.certified = s >= 0.0;
    if (!r.certified) r.radius = 0.0;
  } else {
    r.caveat = RadiusCaveat::saddle_point_k_gt_2;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Numerical minimization of the adversary's objective
//   min -sum_j Phi^-1(p'_j)  s.t.  sum_j p'_j = 1/2 sum_j (pA_j + pB_j),
//                                  p'_j <= pA_j.
// Used as a brute-force check on the closed-form stationary points.

struct AdvObjectiveResult {
  std::vector<double> minimizer;
  double value = 0.0;
  RadiusCaveat caveat = RadiusCaveat::none;
  int sweeps = 0;
};

struct AdvObjectiveOptions {
  int starts = 16;
  int max_sweeps = 2000;
  double tolerance = 1e-10;
  std::uint64_t seed = 0x5eedULL;
};

inline double adv_prob_objective(std::span<const double> p_prime) {
  double v = 0.0;
  for (double p : p_prime) v -= normal_quantile(clamp_open_unit(p));
  return v;
}

namespace detail {

struct AdvProblem {
  std::vector<double> lo;
  std::vector<double> hi;
  double target = 0.0;

  AdvProblem(std::span<const double> p_a, std::span<const double> p_b) {
    if (p_a.size() != p_b.size() || p_a.size() < 2) {
      throw DomainError("adv_prob_objective_min needs k >= 2 matching p_a/p_b entries");
    }
    double sum = 0.0;
    double cap = 0.0;
    for (std::size_t j = 0; j < p_a.size(); ++j) {
      require_open(p_a[j], "p_a");
      if (!(p_b[j] >= 0.0 && p_b[j] < 1.0)) throw DomainError("p_b must lie in [0,1)");
      sum += p_a[j] + p_b[j];
      cap += p_a[j];
      lo.push_back(kQuantileClampEps);
      hi.push_back(p_a[j]);
    }
    target = 0.5 * sum;
    const double floor_sum = kQuantileClampEps * static_cast<double>(p_a.size());
    if (target > cap * (1.0 + 1e-15) || target < floor_sum) {
      throw DomainError("adv_prob_objective_min: constraint set is empty");
    }
  }

  std::size_t k() const { return lo.size(); }

  // Moves x onto the constraint slice, staying inside the box.
  void project(std::vector<double>& x) const {
    for (std::size_t j = 0; j < k(); ++j) x[j] = std::clamp(x[j], lo[j], hi[j]);
    for (int pass = 0; pass < 4; ++pass) {
      double sum = 0.0;
      for (double v : x) sum += v;
      const double gap = target - sum;
      if (std::abs(gap) <= 1e-15 * std::max(1.0, target)) return;
      double room = 0.0;
      for (std::size_t j = 0; j < k(); ++j) room += gap > 0 ? hi[j] - x[j] : x[j] - lo[j];
      if (room <= 0.0) return;
      const double t = std::min(1.0, std::abs(gap) / room);
      for (std::size_t j = 0; j < k(); ++j) {
        x[j] += gap > 0 ? t * (hi[j] - x[j]) : -t * (x[j] - lo[j]);
      }
    }
  }
};

// d/dt [-Phi^-1(t)] = -sqrt(2 pi) exp(z^2 / 2)
inline double neg_quantile_slope(double t) {
  const double z = normal_quantile(clamp_open_unit(t));
  return -std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * z * z);
}

// Minimizes -Phi^-1(t) - Phi^-1(s - t) over [a, b] by a grid scan followed by
// bisection on the derivative sign inside the best cell.
inline double minimize_pair(double s, double a, double b) {
  auto f = [&](double t) {
    return -normal_quantile(clamp_open_unit(t)) - normal_quantile(clamp_open_unit(s - t));
  };
  auto df = [&](double t) { return neg_quantile_slope(t) - neg_quantile_slope(s - t); };
  if (!(b > a)) return a;
  constexpr int kGrid = 64;
  int best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kGrid; ++i) {
    const double t = a + (b - a) * i / kGrid;
    const double v = f(t);
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  double lo = a + (b - a) * std::max(0, best - 1) / kGrid;
  double hi = a + (b - a) * std::min(kGrid, best + 1) / kGrid;
  // Interior minimum: derivative goes from negative to positive.
  if (df(lo) < 0.0 && df(hi) > 0.0) {
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (df(mid) < 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double t = 0.5 * (lo + hi);
    if (f(t) <= best_v) return t;
  }
  return a + (b - a) * best / kGrid;
}

}  // namespace detail

/// Projected pairwise coordinate descent from one starting point.
inline AdvObjectiveResult adv_prob_objective_descend(std::span<const double> p_a,
                                                     std::span<const double> p_b,
                                                     std::vector<double> start,
                                                     const AdvObjectiveOptions& opt = {}) {
  const detail::AdvProblem prob(p_a, p_b);
  if (start.size() != prob.k()) throw DomainError("start point has wrong dimension");
  prob.project(start);
  std::vector<double> x = std::move(start);
  double value = adv_prob_objective(x);
  int sweeps = 0;
  for (; sweeps < opt.max_sweeps; ++sweeps) {
    for (std::size_t i = 0; i < prob.k(); ++i) {
      for (std::size_t j = i + 1; j < prob.k(); ++j) {
        const double s = x[i] + x[j];
        const double a = std::max(prob.lo[i], s - prob.hi[j]);
        const double b = std::min(prob.hi[i], s - prob.lo[j]);
        const double t = detail::minimize_pair(s, a, b);
        x[i] = t;
        x[j] = s - t;
      }
    }
    const double next = adv_prob_objective(x);
    const bool done = std::abs(value - next) < opt.tolerance;
    value = next;
    if (done) {
      ++sweeps;
      break;
    }
  }
  AdvObjectiveResult r;
  r.value = value;
  r.sweeps = sweeps;
  for (std::size_t j = 0; j < prob.k(); ++j) {
    if (x[j] >= prob.hi[j] - 1e-9) r.caveat = RadiusCaveat::boundary_optimum;
  }
  r.minimizer = std::move(x);
  return r;
}

/// Multi-start minimization; returns the best point found over all starts.
inline AdvObjectiveResult adv_prob_objective_min(std::span<const double> p_a,
                                                 std::span<const double> p_b,
                                                 const AdvObjectiveOptions& opt = {}) {
  const detail::AdvProblem prob(p_a, p_b);
  const std::size_t k = prob.k();
  RandomStream rng(opt.seed, k);
  std::optional<AdvObjectiveResult> best;
  const int starts = std::max(16, opt.starts);
  for (int s = 0; s < starts; ++s) {
    std::vector<double> x(k);
    for (std::size_t j = 0; j < k; ++j) {
      switch (s) {
        case 0: x[j] = prob.hi[j]; break;                     // scaled down from the caps
        case 1: x[j] = prob.target / static_cast<double>(k); break;
        default: x[j] = prob.lo[j] + rng.next_uniform() * (prob.hi[j] - prob.lo[j]);
      }
    }
    auto r = adv_prob_objective_descend(p_a, p_b, std::move(x), opt);
    if (!best || r.value < best->value) best = std::move(r);
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Unequal noise scales on the two branches (eta = sigma_r / sigma_l).

/// eta * Phi^-1(p' + 1 - tilde_p) - Phi^-1(p'), the adversary's objective in
/// units of sigma_l.
inline double asym_objective(double p_prime, double tilde_p, double eta) {
  return eta * normal_quantile(clamp_open_unit(p_prime + 1.0 - tilde_p)) -
         normal_quantile(clamp_open_unit(p_prime));
}

struct AsymRadiusResult : RadiusResult {
  double eta = 1.0;
  double p_prime = 0.0;  // optimal adversarial p'_A on the left branch
  double objective = 0.0;
  double feasible_lo = 0.0;
  double feasible_hi = 0.0;
};

/// Radius for branch noise scales sigma_l, sigma_r. The budget is
/// s = sigma_l (Phi^-1(pA_l) + eta Phi^-1(pA_r) + v) with v the constrained
/// minimum of asym_objective, and the radius is s / sqrt2.
inline AsymRadiusResult asym_variance_radius(const BranchProbs& left, const BranchProbs& right,
                                             double sigma_l, double sigma_r) {
  detail::require_sigma(sigma_l);
  detail::require_sigma(sigma_r);
  detail::require_open(left.p_a, "left p_a");
  detail::require_open(right.p_a, "right p_a");
  const double tilde =
      detail::checked_tilde(0.5 * (left.p_a + right.p_a + left.p_b + right.p_b), 1.0);
  if (!(tilde > 0.0)) throw DomainError("asym_variance_radius: tilde_p must be positive");

  AsymRadiusResult r;
  r.sigma = sigma_l;
  r.tilde_p = tilde;
  r.eta = sigma_r / sigma_l;
  const double eps = kQuantileClampEps;
  r.feasible_lo = std::max(eps, tilde - right.p_a);
  r.feasible_hi = std::min(left.p_a, tilde - eps);
  if (r.feasible_lo > r.feasible_hi) return r;

  const double lo = r.feasible_lo;
  const double hi = r.feasible_hi;
  auto objective = [&](double p) { return asym_objective(p, tilde, r.eta); };

  double best_p = lo;
  double best_v = objective(lo);
  bool interior = false;
  if (const double v_hi = objective(hi); v_hi < best_v) {
    best_v = v_hi;
    best_p = hi;
  }
  if (tilde < 1.0) {
    const double critical = 2.0 * std::log(1.0 / r.eta);
    auto condition = [&](double p) {
      const double a = normal_quantile(clamp_open_unit(p + 1.0 - tilde));
      const double b = normal_quantile(clamp_open_unit(p));
      return a * a - b * b - critical;
    };
    double a = lo;
    double b = hi;
    if (condition(a) < 0.0 && condition(b) > 0.0) {
      for (int it = 0; it < 300; ++it) {
        const double mid = 0.5 * (a + b);
        if (mid <= a || mid >= b) break;
        const double g = condition(mid);
        if (std::abs(g) < 1e-12) {
          a = b = mid;
          break;
        }
        if (g < 0.0) {
          a = mid;
        } else {
          b = mid;
        }
      }
      const double root = 0.5 * (a + b);
      if (const double v = objective(root); v <= best_v) {
        best_v = v;
        best_p = root;
        interior = true;
      }
    }
  }
  // With tilde_p = 1 and eta = 1 the objective is identically zero.
  const bool flat = tilde >= 1.0 && r.eta == 1.0;
  r.caveat = (interior || flat) ? RadiusCaveat::none : RadiusCaveat::boundary_optimum;
  r.p_prime = best_p;
  r.objective = best_v;
  r.clamped = lo <= eps || best_p + 1.0 - tilde >= 1.0 - eps;

  const double s = sigma_l * (normal_quantile(left.p_a) + r.eta * normal_quantile(right.p_a) +
                              best_v);
  r.budget = s;
  if (s >= 0.0) {
    r.radius = s / std::numbers::sqrt2;
    r.certified = true;
  }
  return r;
}

}  // namespace smoothcert

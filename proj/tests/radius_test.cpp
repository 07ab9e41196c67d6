#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "smoothcert/radius.hpp"

using namespace smoothcert;

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

// d = 1 inverse ball mass: Psi(r) = 2 Phi(r / sigma) - 1.
double ball_inv_d1(double p, double sigma) { return sigma * normal_quantile(0.5 * (1.0 + p)); }

// Brute-force minimum of the unequal-noise objective over an even grid.
double grid_min_asym(double lo, double hi, double tilde, double eta, int points) {
  double best = INFINITY;
  for (int i = 0; i < points; ++i) {
    const double p = lo + (hi - lo) * i / (points - 1);
    best = std::min(best, asym_objective(p, tilde, eta));
  }
  return best;
}

}  // namespace

TEST(RsRadius, ReferenceValues) {
  EXPECT_EQ(rs_radius({0.5, 0.5}, 1.0).radius, 0.0);
  EXPECT_NEAR(rs_radius({0.999, 0.001}, 1.0).radius, 3.0902323061678135415, 1e-13);
  EXPECT_NEAR(rs_radius({0.9, 0.1}, 0.5).radius, 0.64077578277230023348, 1e-14);
  const auto r = rs_radius({0.3, 0.4}, 1.0);
  EXPECT_FALSE(r.certified);
  EXPECT_EQ(r.radius, 0.0);
  EXPECT_THROW(rs_radius({1.0, 0.0}, 1.0), DomainError);
}

TEST(RsRadiusLower, GateAndValues) {
  EXPECT_FALSE(rs_radius_lower(0.5, 1.0).certified);
  EXPECT_NEAR(rs_radius_lower(0.999, 0.25).radius, 0.77255807654195338539, 1e-14);
  for (double p = 0.51; p < 1.0; p += 0.01) {
    EXPECT_NEAR(rs_radius_lower(p, 0.7).radius, rs_radius(BranchProbs::worst_case(p), 0.7).radius,
                1e-14);
  }
}

TEST(DrsRadius, ReferenceValues) {
  const auto r = drs_radius({0.8, 0.1}, {0.8, 0.1}, 1.0);
  EXPECT_TRUE(r.certified);
  EXPECT_NEAR(*r.tilde_p, 0.9, 1e-15);
  EXPECT_NEAR(r.radius, 1.3679441438885050741, 1e-13);
  EXPECT_NEAR(drs_radius({0.4, 0.4}, {0.4, 0.4}, 1.0).radius, 0.0, 1e-15);
  EXPECT_THROW(drs_radius({0.8, 0.3}, {0.8, 0.3}, 1.0), DomainError);
}

TEST(DrsRadius, ReducesToLowerFormAtWorstCaseRunnerUp) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0.5, 0.9999);
  for (int i = 0; i < 1000; ++i) {
    const double pl = u(g), pr = u(g), s = 0.1 + u(g);
    EXPECT_NEAR(drs_radius(BranchProbs::worst_case(pl), BranchProbs::worst_case(pr), s).radius,
                drs_radius_lower(pl, pr, s).radius, 1e-12);
  }
}

TEST(DrsRadiusLower, GateAndValues) {
  const auto half = drs_radius_lower(0.5, 0.5, 1.0);
  EXPECT_TRUE(half.certified);
  EXPECT_EQ(half.radius, 0.0);
  EXPECT_NEAR(drs_radius_lower(0.9, 0.9, 0.25).radius, 0.45309690121841161004, 1e-14);
  EXPECT_FALSE(drs_radius_lower(0.6, 0.3, 1.0).certified);
  // One branch below 1/2 is fine as long as the sum clears 1.
  const auto mixed = drs_radius_lower(0.95, 0.2, 1.0);
  EXPECT_TRUE(mixed.certified);
  EXPECT_NEAR(mixed.radius, (normal_quantile(0.95) + normal_quantile(0.2)) / kSqrt2, 1e-14);
}

TEST(DrsFromRsIdentity, CombinesBranchRadii) {
  const auto l = rs_radius_lower(0.9, 0.25), r = rs_radius_lower(0.9, 0.25);
  EXPECT_NEAR(l.radius, 0.32038789138615011674, 1e-15);
  EXPECT_NEAR(drs_from_rs_identity(l, r).radius, 0.45309690121841161004, 1e-14);
  EXPECT_FALSE(drs_from_rs_identity(l, rs_radius_lower(0.4, 0.25)).certified);
  EXPECT_THROW(drs_from_rs_identity(l, rs_radius_lower(0.9, 0.5)), DomainError);
}

TEST(DrsRadiusLower, EqualBranchesGainSqrtTwo) {
  for (double p = 0.55; p < 1.0; p += 0.05) {
    EXPECT_NEAR(drs_radius_lower(p, p, 0.3).radius, kSqrt2 * rs_radius_lower(p, 0.3).radius,
                1e-14);
  }
}

TEST(Radius, ScalesLinearlyInSigma) {
  for (double c : {0.1, 2.0, 7.5}) {
    EXPECT_NEAR(rs_radius({0.8, 0.15}, c).radius, c * rs_radius({0.8, 0.15}, 1.0).radius, 1e-13);
    EXPECT_NEAR(drs_radius({0.8, 0.1}, {0.7, 0.2}, c).radius,
                c * drs_radius({0.8, 0.1}, {0.7, 0.2}, 1.0).radius, 1e-13);
    EXPECT_NEAR(drs_radius_lower(0.8, 0.7, c).radius, c * drs_radius_lower(0.8, 0.7, 1.0).radius,
                1e-13);
    EXPECT_NEAR(asym_variance_radius({0.8, 0.1}, {0.7, 0.1}, c, 2 * c).radius,
                c * asym_variance_radius({0.8, 0.1}, {0.7, 0.1}, 1.0, 2.0).radius, 1e-12);
    EXPECT_NEAR(rs_upper_bound(0.99, 8, c), c * rs_upper_bound(0.99, 8, 1.0), 1e-12 * c);
  }
}

TEST(UpperBound, OneDimensionalClosedForm) {
  EXPECT_NEAR(rs_upper_bound(0.5, 1, 1.0), 3.3724507177723283734, 1e-12);
  const double adj = 0.999 / (1.0 - kUpperBoundMargin);
  const double s = 1.0 / kSqrt2;
  EXPECT_NEAR(drs_upper_bound(0.999, 0.999, 1, 1, s), 2.0 * 5.0 / kSqrt2 * ball_inv_d1(adj, s),
              1e-12);
  EXPECT_NEAR(drs_upper_bound(0.999, 0.999, 1, 1, s), 16.453336474377035089, 1e-12);
  EXPECT_NEAR(rs_upper_bound(0.999, 2, s), 9.2926415136007576096, 1e-12);
}

TEST(UpperBound, EdgeCases) {
  EXPECT_EQ(rs_upper_bound(0.0, 10, 1.0), 0.0);
  // Tiny mass: 5/sqrt(10) * sqrt(chi2_10 quantile); mpmath.
  EXPECT_NEAR(rs_upper_bound(1e-12, 10, 1.0), 0.227918251718003558809, 1e-12);
  EXPECT_THROW(rs_upper_bound(1.0 - 1e-7, 10, 1.0), DomainError);
  EXPECT_THROW(rs_upper_bound(0.5, 0, 1.0), DomainError);
  EXPECT_NEAR(drs_upper_bound(0.9, 0.9, 6, 6, 0.4), 2.0 * rs_upper_bound(0.9, 6, 0.4) / kSqrt2,
              1e-13);
}

TEST(KPartition, TwoBranchesMatchDrs) {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double al = 0.5 + 0.49 * u(g), ar = 0.5 + 0.49 * u(g);
    const double bl = (1 - al) * u(g), br = (1 - ar) * u(g);
    const BranchProbs b[] = {{al, bl}, {ar, br}};
    EXPECT_NEAR(k_partition_radius(b, 0.5).radius, drs_radius(b[0], b[1], 0.5).radius, 1e-12);
  }
}

TEST(KPartition, ThreeBranchesCarrySaddleCaveat) {
  const BranchProbs b[] = {{0.9, 0.1}, {0.9, 0.1}, {0.9, 0.1}};
  const auto r = k_partition_radius(b, 1.0);
  EXPECT_NEAR(*r.tilde_p, 1.5, 1e-15);
  EXPECT_NEAR(r.radius, 2.2197124240426842194, 1e-13);
  EXPECT_FALSE(r.certified);
  EXPECT_EQ(r.caveat, RadiusCaveat::saddle_point_k_gt_2);
  const BranchProbs flat[] = {{0.3, 0.3}, {0.3, 0.3}, {0.3, 0.3}};
  EXPECT_NEAR(k_partition_radius(flat, 1.0).radius, 0.0, 1e-15);
}

TEST(AdvObjective, TwoBranchUnconstrainedMinimumIsSymmetric) {
  const std::vector<double> a{0.7, 0.6}, b{0.1, 0.2};  // tilde 0.8, caps above 0.4
  const auto r = adv_prob_objective_min(a, b);
  EXPECT_NEAR(r.minimizer[0], 0.4, 1e-4);
  EXPECT_NEAR(r.minimizer[1], 0.4, 1e-4);
  EXPECT_NEAR(r.value, -2.0 * normal_quantile(0.4), 1e-9);
  EXPECT_EQ(r.caveat, RadiusCaveat::none);
}

TEST(AdvObjective, ActiveConstraintLandsOnBoundary) {
  // tilde = 0.95, left cap 0.4 < 0.475.
  const std::vector<double> a{0.4, 0.9}, b{0.35, 0.25};
  const auto r = adv_prob_objective_min(a, b);
  EXPECT_NEAR(r.minimizer[0], 0.4, 1e-9);
  EXPECT_NEAR(r.minimizer[1], 0.55, 1e-9);
  EXPECT_EQ(r.caveat, RadiusCaveat::boundary_optimum);
  // Constrained grid oracle.
  double best = INFINITY;
  for (int i = 0; i <= 100000; ++i) {
    const double t = 0.05 + (0.4 - 0.05) * i / 100000.0;
    best = std::min(best, -normal_quantile(t) - normal_quantile(0.95 - t));
  }
  EXPECT_NEAR(r.value, best, 1e-9);
}

TEST(AdvObjective, ThreeBranchSymmetricStationaryValue) {
  const std::vector<double> a{0.6, 0.6, 0.6}, b{0.2, 0.2, 0.2};  // tilde 1.2, share 0.4
  std::vector<double> start{0.401, 0.3995, 0.3995};
  const auto r = adv_prob_objective_descend(a, b, start);
  EXPECT_NEAR(r.value, -3.0 * normal_quantile(0.4), 1e-6);
  EXPECT_THROW(adv_prob_objective_min(std::vector<double>{0.2, 0.2}, std::vector<double>{0.9, 0.9}),
               DomainError);
}

TEST(AsymVariance, EtaOneMatchesDrs) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const double al = 0.5 + 0.49 * u(g), ar = 0.5 + 0.49 * u(g);
    const BranchProbs l{al, (1 - al) * u(g)}, r{ar, (1 - ar) * u(g)};
    EXPECT_NEAR(asym_variance_radius(l, r, 0.4, 0.4).radius, drs_radius(l, r, 0.4).radius, 1e-9);
  }
}

TEST(AsymVariance, MatchesGridOracle) {
  const BranchProbs l{0.8, 0.1}, r{0.8, 0.1};
  for (double eta : {0.5, 2.0}) {
    const auto res = asym_variance_radius(l, r, 1.0, eta);
    const double v = grid_min_asym(res.feasible_lo, res.feasible_hi, 0.9, eta, 200001);
    const double s = normal_quantile(0.8) + eta * normal_quantile(0.8) + v;
    EXPECT_NEAR(res.radius, s / kSqrt2, 1e-6) << eta;
    EXPECT_LE(res.objective, v + 1e-12);
  }
}

TEST(AsymVariance, MirroredInputsSwapBranches) {
  const BranchProbs l{0.85, 0.05}, r{0.7, 0.2};
  const auto a = asym_variance_radius(l, r, 0.3, 0.6);
  const auto b = asym_variance_radius(r, l, 0.6, 0.3);
  EXPECT_NEAR(a.radius, b.radius, 1e-9);
}

TEST(AsymVariance, WorstCaseRunnerUpTakesTheLowerEndpoint) {
  // tilde = 1: the objective is (eta - 1) Phi^-1(p'), monotone, so the
  // budget collapses to min(sigma_l, sigma_r) (Phi^-1(pl) + Phi^-1(pr)).
  for (double eta : {0.5, 2.0}) {
    const auto res = asym_variance_radius(BranchProbs::worst_case(0.9), BranchProbs::worst_case(0.8),
                                          1.0, eta);
    const double want = std::min(1.0, eta) * (normal_quantile(0.9) + normal_quantile(0.8));
    EXPECT_NEAR(res.budget, want, 1e-12) << eta;
    EXPECT_EQ(res.caveat, RadiusCaveat::boundary_optimum);
  }
}

TEST(ProofNumerics, BranchInequalityAndMonotoneDifference) {
  // Phi^-1(pA) - Phi^-1(pA - dp) <= Phi^-1(pB + dp) - Phi^-1(pB) for pB <= 1 - pA.
  for (double pa = 0.51; pa < 1.0; pa += 0.02) {
    for (double pb = 0.01; pb <= 1.0 - pa + 1e-12; pb += 0.02) {
      const double cap = std::min(pa - pb, 1.0 - pb);
      for (double f = 0.05; f < 1.0; f += 0.1) {
        const double dp = f * cap;
        const double lhs = normal_quantile(pa) - normal_quantile(pa - dp);
        const double rhs = normal_quantile(pb + dp) - normal_quantile(pb);
        EXPECT_LE(lhs, rhs + 1e-12) << pa << " " << pb << " " << dp;
      }
    }
  }
}

TEST(ProofNumerics, SplitNormInRange) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double s = 5.0 * u(g), t = u(g);
    const double n = std::hypot(t * s, (1 - t) * s);
    EXPECT_GE(n, s / kSqrt2 - 1e-12);
    EXPECT_LE(n, s + 1e-12);
  }
}

#include "pocd/harness.hpp"
#include "pocd/sampler.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace pocd;

namespace {

struct Instance {
  ModelParams model;
  UcrInputs in;
};

Instance random_instance(Rng& rng, int p, int q, double alpha = 0.3) {
  Instance inst;
  inst.model = test::random_model(rng, q, p, 0.7);
  inst.in.f_hat = test::random_vector(rng, q);
  inst.in.sigma_f = test::random_spd(rng, q, 0.2) * 0.1;
  inst.in.g_next = Matrix::Identity(q, q) + 0.3 * test::random_spd(rng, q, 0.0);
  inst.in.p_pred = test::random_spd(rng, q, 0.05) * 0.05;
  inst.in.alpha = alpha;
  return inst;
}

/// Independent dense evaluation with explicit inverses.
Matrix omega_dense(const ObservationMask& mask, const Matrix& g, const Matrix& p, const ModelParams& m) {
  Matrix cz(mask.size(), m.q());
  for (int i = 0; i < mask.size(); ++i) cz.row(i) = m.C.row(mask.indices()[i]);
  const Matrix v = cz * p * cz.transpose() + m.sigma_r * m.sigma_r * Matrix::Identity(mask.size(), mask.size());
  return g.transpose() * cz.transpose() * v.inverse() * cz * g;
}

/// Maximum of f' Omega f over `samples` uniformly distributed boundary points.
double boundary_brute_force(const Vector& f_hat, const Matrix& sigma_f, const Matrix& om, double r2, int samples,
                            Rng& rng) {
  const Eigen::Index q = f_hat.size();
  const Matrix b = Eigen::LLT<Matrix>(sigma_f).matrixL();
  const double r = std::sqrt(r2);
  std::normal_distribution<double> n01(0.0, 1.0);
  double best = -1.0;
  Vector u(q);
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < q; ++i) u[i] = n01(rng);
    const Vector f = f_hat + r * b * (u / u.norm());
    best = std::max(best, f.dot(om * f));
  }
  return best;
}

}  // namespace

TEST(ChiSquared, MatchesReferenceQuantiles) {
  // Reference values computed with scipy.stats.chi2.ppf.
  const struct {
    double prob;
    double df;
    double value;
  } ref[] = {{0.95, 1, 3.841458820694124},  {0.95, 7, 14.067140449340169}, {0.9, 2, 4.605170185988092},
             {0.15, 7, 3.3582843792081403}, {0.9, 7, 12.017036623780532},  {0.5, 3, 2.3659738843753377},
             {0.999, 15, 37.69729821835383}, {0.01, 5, 0.5542980767282772}};
  for (const auto& r : ref) {
    EXPECT_NEAR(chi_squared_quantile(r.prob, r.df), r.value, 1e-8 * r.value) << r.prob << " " << r.df;
    EXPECT_NEAR(chi_squared_cdf(r.value, r.df), r.prob, 1e-10);
  }
  EXPECT_NEAR(confidence_radius2(0.05, 7), 14.067140449340169, 1e-8);
}

TEST(AdaptiveAlpha, DefaultSchedule) {
  const AlphaSchedule s{15.0, 6.67, 0.1, 0.85};
  EXPECT_DOUBLE_EQ(adaptive_alpha(0.0, s), 0.1);
  EXPECT_DOUBLE_EQ(adaptive_alpha(100.0, s), 0.85);
  EXPECT_NEAR(adaptive_alpha(20.0, s), 0.1 + 5.0 / 6.67, 1e-12);
  EXPECT_NEAR(adaptive_alpha(20.0, s), 0.8496, 1e-4);
  EXPECT_DOUBLE_EQ(AlphaPolicy(0.3).at(50.0), 0.3);
}

TEST(AdaptiveAlpha, Validation) {
  EXPECT_THROW((AlphaSchedule{15.0, 0.0, 0.1, 0.85}.validate()), ConfigError);
  EXPECT_THROW((AlphaSchedule{15.0, 6.67, 0.9, 0.85}.validate()), ConfigError);
  EXPECT_THROW(AlphaPolicy(1.0).validate(), ConfigError);
}

TEST(Omega, ZeroRowsGiveZero) {
  ModelParams m = paper_p10_model();
  m.C.row(2).setZero();
  m.C.row(5).setZero();
  const Matrix om = omega(ObservationMask({2, 5}, m.p()), Matrix::Identity(7, 7), stationary_covariance(m), m);
  EXPECT_EQ(om.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Omega, ScalarSubstitution) {
  ModelParams m;
  m.A = Matrix::Constant(1, 1, 0.5);
  m.C = Matrix::Ones(1, 1);
  m.sigma_q = 0.1;
  m.sigma_r = std::sqrt(0.5);
  const Matrix om = omega(ObservationMask::full(1), Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 0.5), m);
  EXPECT_NEAR(om(0, 0), 4.0, 1e-12);
}

TEST(Omega, MatchesDenseOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = random_instance(rng, 6, 1 + trial % 4);
    const ObservationMask mask = select_random(6, 1 + trial % 3, rng);
    const Matrix a = omega(mask, inst.in.g_next, inst.in.p_pred, inst.model);
    const Matrix b = omega_dense(mask, inst.in.g_next, inst.in.p_pred, inst.model);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, b.cwiseAbs().maxCoeff()));
  }
}

TEST(Ellipsoid, WorkedTwoDimensionalInstance) {
  Matrix om = Matrix::Zero(2, 2);
  om(0, 0) = 2.0;
  om(1, 1) = 1.0;
  const auto sol = solve_ellipsoid_max(Vector::Unit(2, 0), Matrix::Identity(2, 2), om, 1.0);
  EXPECT_NEAR(sol.f_star[0], 2.0, 1e-8);
  EXPECT_NEAR(sol.f_star[1], 0.0, 1e-8);
  EXPECT_NEAR(sol.score, 8.0, 1e-8);
  EXPECT_NEAR(sol.lambda, -4.0, 1e-8);
}

TEST(Ellipsoid, ZeroRadiusReturnsCentre) {
  Rng rng(2);
  const Vector f = test::random_vector(rng, 3);
  const Matrix om = test::random_spd(rng, 3);
  const auto sol = solve_ellipsoid_max(f, test::random_spd(rng, 3), om, 0.0);
  EXPECT_EQ(sol.f_star, f);
  EXPECT_NEAR(sol.score, f.dot(om * f), 1e-12);
}

TEST(Ellipsoid, ZeroCentreUsesTopEigenvector) {
  Matrix om = Matrix::Zero(3, 3);
  om.diagonal() << 1.0, 5.0, 2.0;
  const auto sol = solve_ellipsoid_max(Vector::Zero(3), Matrix::Identity(3, 3), om, 4.0);
  EXPECT_TRUE(sol.degenerate);
  EXPECT_NEAR(std::abs(sol.f_star[1]), 2.0, 1e-12);
  EXPECT_NEAR(sol.score, 20.0, 1e-10);
}

TEST(Ellipsoid, RejectsIndefiniteOmega) {
  Matrix om = Matrix::Identity(2, 2);
  om(1, 1) = -1.0;
  EXPECT_THROW(solve_ellipsoid_max(Vector::Ones(2), Matrix::Identity(2, 2), om, 1.0), NumericalError);
  om(1, 1) = -1e-14;
  EXPECT_NO_THROW(solve_ellipsoid_max(Vector::Ones(2), Matrix::Identity(2, 2), om, 1.0));
}

TEST(Ellipsoid, BoundaryFeasibilityAndBruteForce) {
  Rng rng(43);
  for (int trial = 0; trial < 60; ++trial) {
    const int q = 1 + trial % 3;
    const Vector f = test::random_vector(rng, q);
    const Matrix sf = test::random_spd(rng, q, 0.1);
    Matrix om = test::random_spd(rng, q, 0.0);
    if (trial % 5 == 0 && q > 1) {  // rank-deficient Omega
      Eigen::SelfAdjointEigenSolver<Matrix> es(om);
      Vector ev = es.eigenvalues();
      ev[0] = 0.0;
      om = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }
    const double r2 = confidence_radius2(0.1 + 0.2 * (trial % 4), q);
    const auto sol = solve_ellipsoid_max(f, sf, om, r2);
    const Vector d = sol.f_star - f;
    EXPECT_NEAR(d.dot(sf.llt().solve(d)), r2, 1e-6 * r2) << "trial " << trial;
    const double brute = boundary_brute_force(f, sf, om, r2, 100000, rng);
    EXPECT_LE(brute, sol.score * (1.0 + 1e-9)) << "trial " << trial;
    EXPECT_NEAR(sol.score, brute, 1e-3 * sol.score) << "trial " << trial;
  }
}

TEST(Scorer, FastRouteMatchesFullRoute) {
  Rng rng(47);
  for (int trial = 0; trial < 40; ++trial) {
    auto inst = random_instance(rng, 6, 2 + trial % 3, 0.1 + 0.02 * trial);
    inst.in.params = &inst.model;
    const UcrScorer scorer(inst.in);
    for (int k = 0; k < 5; ++k) {
      const ObservationMask mask = select_random(6, 1 + k % 3, rng);
      const Matrix om = omega(mask, inst.in.g_next, inst.in.p_pred, inst.model);
      const auto full = solve_ellipsoid_max(inst.in, om);
      Vector f_star;
      const double fast = scorer.score(mask, &f_star);
      EXPECT_NEAR(fast, full.score, 1e-8 * std::max(1.0, full.score));
      EXPECT_NEAR(f_star.dot(om * f_star), full.score, 1e-8 * std::max(1.0, full.score));
    }
  }
}

TEST(Exhaustive, FullMaskWhenMEqualsP) {
  Rng rng(3);
  auto inst = random_instance(rng, 4, 3);
  inst.in.params = &inst.model;
  EXPECT_EQ(select_exhaustive(inst.in, 4).mask, ObservationMask::full(4));
}

TEST(Exhaustive, HandcraftedScores) {
  const std::map<std::vector<int>, double> scores{{{0, 1}, 5.0}, {{0, 2}, 7.0}, {{1, 2}, 6.0}};
  const auto best = search_exhaustive(3, 2, [&](const ObservationMask& m) { return scores.at(m.indices()); });
  EXPECT_EQ(best, (std::vector<int>{0, 2}));
}

TEST(Exhaustive, TiesGoToTheLexicographicallySmallestSubset) {
  const auto best = search_exhaustive(4, 2, [](const ObservationMask& m) { return m.contains(3) ? 1.0 : 0.0; });
  EXPECT_EQ(best, (std::vector<int>{0, 3}));
}

TEST(Exhaustive, MatchesIndependentBruteForce) {
  Rng rng(53);
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = random_instance(rng, 6, 3, 0.2 + 0.02 * trial);
    inst.in.params = &inst.model;
    const auto decision = select_exhaustive(inst.in, 2);
    const double r2 = confidence_radius2(inst.in.alpha, 3);
    double best = -1.0;
    std::vector<int> best_mask;
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j) {
        const ObservationMask mask({i, j}, 6);
        const Matrix om = omega_dense(mask, inst.in.g_next, inst.in.p_pred, inst.model);
        const double s = solve_ellipsoid_max(inst.in.f_hat, inst.in.sigma_f, om, r2).score;
        if (s > best * (1.0 + 1e-12)) {
          best = s;
          best_mask = {i, j};
        }
      }
    EXPECT_EQ(decision.mask.indices(), best_mask) << "trial " << trial;
    EXPECT_NEAR(decision.score, best, 1e-8 * best);
  }
}

TEST(Greedy, EqualsExhaustiveForSingleRow) {
  Rng rng(59);
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = random_instance(rng, 7, 3);
    inst.in.params = &inst.model;
    EXPECT_EQ(select_greedy(inst.in, 1).mask, select_exhaustive(inst.in, 1).mask);
  }
}

TEST(Greedy, NeverBeatsExhaustive) {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng, 6, 3);
    inst.in.params = &inst.model;
    const auto g = select_greedy(inst.in, 3);
    const auto e = select_exhaustive(inst.in, 3);
    EXPECT_LE(g.score, e.score * (1.0 + 1e-12)) << "trial " << trial;
    const Vector d = g.f_star - inst.in.f_hat;
    const double r2 = confidence_radius2(inst.in.alpha, 3);
    EXPECT_NEAR(d.dot(inst.in.sigma_f.llt().solve(d)), r2, 1e-6 * r2);
  }
}

TEST(RandomSelection, FullSetWhenMEqualsP) {
  Rng rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(select_random(5, 5, rng), ObservationMask::full(5));
}

TEST(RandomSelection, IndexFrequencies) {
  Rng rng(67);
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const ObservationMask mask = select_random(10, 2, rng);
    for (int k : mask.indices()) ++counts[k];
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 0.2, 0.005);
}

TEST(RandomSelection, SubsetsAreEquiprobable) {
  Rng rng(71);
  std::map<std::vector<int>, int> counts;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) ++counts[select_random(3, 2, rng).indices()];
  ASSERT_EQ(counts.size(), 3u);
  double stat = 0.0;
  for (const auto& [k, c] : counts) stat += std::pow(c - draws / 3.0, 2) / (draws / 3.0);
  EXPECT_GT(1.0 - chi_squared_cdf(stat, 2), 0.01);
}

TEST(RandomSelection, DeterministicGivenRng) {
  Rng a(5);
  Rng b(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(select_random(10, 3, a), select_random(10, 3, b));
}

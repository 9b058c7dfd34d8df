#include <msslab/synthesis.hpp>

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace msslab {
namespace {

StateSpace Scalar(double a, double b = 1.0, double c = 1.0) {
  return StateSpace(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b),
                    Matrix::Constant(1, 1, c));
}

void ExpectSound(const SynthesisResult& r) {
  EXPECT_EQ(r.closed_loop_verdict, Verdict::kStable);
  EXPECT_LE(r.reconstruction_residual, 1e-8);
  EXPECT_LE(r.recomputed_gamma, r.gamma * (1 + 1e-3));
  EXPECT_GE(r.achieved_critical_variance, (1 - 1e-3) / r.gamma);
}

TEST(Synthesize, ScalarStablePlant) {
  const auto plant = Scalar(-1.0);
  const auto ch = ChannelSet::Uniform(1, 1, 1.0, 0.1);
  const auto r = Synthesize(plant, ch);
  ExpectSound(r);
  const auto loop = AssembleNominal(plant, r.controller, ch);
  const auto lmi = MsNormByLmi(loop.nominal(), Vector::Ones(2));
  EXPECT_NEAR(lmi.gamma, r.recomputed_gamma, 1e-3 * r.recomputed_gamma);
  EXPECT_LE(lmi.gamma, r.gamma * (1 + 1e-3));
}

TEST(Synthesize, ScalarUnstablePlant) {
  const auto plant = Scalar(1.0, 1.0, 1.0);
  const auto r = Synthesize(plant, ChannelSet::Uniform(1, 1, 1.0, 0.0));
  ExpectSound(r);
  EXPECT_GT(r.achieved_critical_variance, 0.0);
}

TEST(Synthesize, RejectsUnstabilizablePlant) {
  Matrix a(2, 2);
  a << 1, 0, 0, -1;
  Matrix b(2, 1);
  b << 0, 1;
  Matrix c(1, 2);
  c << 1, 1;
  EXPECT_THROW(Synthesize(StateSpace(a, b, c), ChannelSet::Uniform(1, 1, 1.0, 0.0)),
               std::invalid_argument);
}

TEST(Synthesize, RandomPlantsAreSound) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 6; ++trial) {
    const Eigen::Index n = 2 + trial % 2, d = 1 + trial % 2, q = 1 + (trial / 2) % 2;
    const Matrix a = testing::RandomWithAbscissa(rng, n, trial % 3 == 0 ? 0.3 : -0.2);
    const StateSpace plant(a, testing::RandomMatrix(rng, n, d), testing::RandomMatrix(rng, q, n));
    const auto r = Synthesize(plant, ChannelSet::Uniform(d, q, 1.0, 0.0));
    SCOPED_TRACE(trial);
    ExpectSound(r);
  }
}

TEST(DkIterate, ZeroRoundsMatchesSynthesize) {
  const auto plant = Scalar(1.0);
  const auto ch = ChannelSet::Uniform(1, 1, 1.0, 0.0);
  const auto a = Synthesize(plant, ch);
  const auto b = DkIterate(plant, ch, 0);
  EXPECT_EQ(b.gamma_history.size(), 1u);
  EXPECT_DOUBLE_EQ(a.gamma, b.best.gamma);
  EXPECT_TRUE(a.controller.A().isApprox(b.best.controller.A()));
}

TEST(DkIterate, GammaNonIncreasing) {
  std::mt19937_64 rng(7);
  const Matrix a = testing::RandomWithAbscissa(rng, 3, 0.2);
  const StateSpace plant(a, testing::RandomMatrix(rng, 3, 2), testing::RandomMatrix(rng, 2, 3));
  const auto r = DkIterate(plant, ChannelSet::Uniform(2, 2, 1.0, 0.0), 3);
  ASSERT_GE(r.gamma_history.size(), 2u);
  EXPECT_LE(r.best.gamma, r.gamma_history.front());
  for (size_t i = 1; i < r.gamma_history.size(); ++i) {
    EXPECT_LE(r.gamma_history[i], r.gamma_history[i - 1] * (1 + 1e-4)) << "round " << i;
  }
  ExpectSound(r.best);
}

TEST(FundamentalLimit, ScalarFormula) {
  const auto r = FundamentalLimit(Matrix::Constant(1, 1, 1.0), 1.0);
  EXPECT_NEAR(r.sigma_star * r.sigma_star, 0.5, 1e-14);
  EXPECT_TRUE(*FundamentalLimit(Matrix::Constant(1, 1, 1.0), 1.0, 0.7).stabilizable);
  EXPECT_FALSE(*FundamentalLimit(Matrix::Constant(1, 1, 1.0), 1.0, 0.71).stabilizable);
}

TEST(FundamentalLimit, HurwitzIsUnbounded) {
  const auto r = FundamentalLimit(-Matrix::Identity(3, 3), 2.0);
  EXPECT_TRUE(std::isinf(r.sigma_star));
  EXPECT_EQ(r.unstable_eig_sum, 0.0);
}

TEST(FundamentalLimit, ScalesWithMean) {
  Matrix a(2, 2);
  a << 0.5, 1, 0, -2;
  EXPECT_NEAR(FundamentalLimit(a, -3.0).sigma_star, 3.0 * FundamentalLimit(a, 1.0).sigma_star,
              1e-14);
  EXPECT_THROW(FundamentalLimit(a, 0.0), std::invalid_argument);
}

TEST(OptimalStateFeedback, ScalarRiccati) {
  const auto f = OptimalStateFeedback(Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0), 1.0);
  EXPECT_NEAR(f.p(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(f.k(0, 0), -2.0, 1e-12);
}

TEST(OptimalStateFeedback, MixedSpectrumPsdAndStabilising) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = testing::RandomMatrix(rng, 4, 4);
    const Matrix b = testing::RandomMatrix(rng, 4, 1);
    const double mu = 0.5 + trial * 0.2;
    const auto f = OptimalStateFeedback(a, b, mu);
    const Matrix res = a.transpose() * f.p + f.p * a - mu * mu * f.p * b * b.transpose() * f.p;
    EXPECT_LE(res.norm(), 1e-9 * std::max(1.0, f.p.norm()));
    EXPECT_GE(MinEigenvalueSym(f.p), -1e-9);
    EXPECT_EQ(Eigenvalues(a + mu * b * f.k).hurwitz(), Verdict::kStable);
  }
}

TEST(OptimalStateFeedback, RejectsImaginaryAxisModes) {
  Matrix a(2, 2);
  a << 0, 1, -1, 0;
  EXPECT_THROW(OptimalStateFeedback(a, Matrix::Ones(2, 1), 1.0), MarginalSpectrumError);
}

// For an all-unstable A_o the loop closed by the Riccati gain loses
// mean-square stability exactly at σ*.
TEST(OptimalStateFeedback, LimitAgreesWithLiftedBisection) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::Index n = 2 + trial % 3;
    Matrix a = testing::RandomMatrix(rng, n, n);
    Eigen::EigenSolver<Matrix> es(a);
    // Reflect stable modes: A ← V |Re Λ| V⁻¹ stays real for conjugate pairs.
    Eigen::MatrixXcd v = es.eigenvectors();
    Eigen::VectorXcd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < n; ++i) {
      lam(i) = Complex(std::abs(lam(i).real()) + 0.05, lam(i).imag());
    }
    a = (v * lam.asDiagonal() * v.inverse()).real();
    const Matrix b = testing::RandomMatrix(rng, n, 1);
    const double mu = 1.3;
    const auto lim = FundamentalLimit(a, mu);
    const auto f = OptimalStateFeedback(a, b, mu);
    EXPECT_NEAR((b.transpose() * f.p * b)(0, 0), 2.0 * lim.unstable_eig_sum / (mu * mu),
                1e-6 * lim.unstable_eig_sum);
    auto stable = [&](double s) {
      return IsMeanSquareStable(StateFeedbackLoop(a, b, mu, f.k, s)).verdict == Verdict::kStable;
    };
    double lo = 0.0, hi = 10.0 * lim.sigma_star;
    ASSERT_TRUE(stable(lo));
    ASSERT_FALSE(stable(hi));
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      (stable(mid) ? lo : hi) = mid;
    }
    EXPECT_NEAR(lo, lim.sigma_star, 1e-2 * lim.sigma_star) << "trial " << trial;
  }
}

TEST(OptimalStateFeedback, Wscc9GeneratorThree) {
  const auto f = OptimalStateFeedback(wscc9::StateMatrix(), wscc9::Generator3Input(), 1.0);
  EXPECT_EQ(Eigenvalues(wscc9::StateMatrix() + wscc9::Generator3Input() * f.k).hurwitz(),
            Verdict::kStable);
}

}  // namespace
}  // namespace msslab

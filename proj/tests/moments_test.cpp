#include <msslab/moments.hpp>

#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <random>

#include "test_util.hpp"

using namespace msslab;
using msslab::testing::RandomMatrix;
using msslab::testing::RandomWithAbscissa;
using msslab::testing::ScalarLoop;

namespace {

// Random loop with n states and m channels.
Interconnection RandomLoop(std::mt19937_64& rng, int n, int m, double abscissa,
                           double sigma_scale) {
  const Matrix a = RandomWithAbscissa(rng, n, abscissa);
  const Matrix b = RandomMatrix(rng, n, m), c = RandomMatrix(rng, m, n);
  std::uniform_real_distribution<double> ud(0.2, 1.0);
  std::vector<double> sig(m);
  for (auto& s : sig) s = sigma_scale * ud(rng);
  return DirectLoop(StateSpace(a, b, c), sig);
}

}  // namespace

TEST(Lifted, ScalarAndNoiseFree) {
  const auto op = BuildLifted(ScalarLoop(-1.3, 0.7));
  EXPECT_NEAR(op.script_a(0, 0), 2 * -1.3 + 0.49, 1e-15);
  std::mt19937_64 rng(8);
  const auto ic = RandomLoop(rng, 3, 2, -0.5, 0.0);
  EXPECT_EQ(BuildLifted(ic).script_a, KronSum(ic.nominal().A(), ic.nominal().A()));
  EXPECT_THROW(BuildLifted(ic, Matrix::Identity(2, 2)), std::invalid_argument);
}

TEST(Lifted, MatchesCovarianceRate) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ic = RandomLoop(rng, 3, 2, -0.3, 1.0);
    const Matrix q = msslab::testing::RandomSymmetric(rng, 3);
    // Direct evaluation of AQ + QAᵀ + Σ σ² BℓCℓ Q CℓᵀBℓᵀ.
    const Matrix& a = ic.nominal().A();
    Matrix rate = a * q + q * a.transpose();
    for (int l = 0; l < 2; ++l) {
      const Matrix g = ic.nominal().B().col(l) * ic.nominal().C().row(l);
      rate += ic.sigmas()[l] * ic.sigmas()[l] * g * q * g.transpose();
    }
    EXPECT_LT((BuildLifted(ic).script_a * Vec(q) - Vec(rate)).norm(), 1e-12 * rate.norm());
  }
}

TEST(MeanSquareStable, ScalarThreshold) {
  EXPECT_EQ(IsMeanSquareStable(ScalarLoop(-1, std::sqrt(1.9))).verdict, Verdict::kStable);
  EXPECT_EQ(IsMeanSquareStable(ScalarLoop(-1, std::sqrt(2.1))).verdict, Verdict::kUnstable);
  EXPECT_EQ(IsMeanSquareStable(ScalarLoop(-1, std::sqrt(2.0))).verdict, Verdict::kMarginal);
  EXPECT_EQ(IsMeanSquareStable(ScalarLoop(-0.5, 0.0)).verdict, Verdict::kStable);
}

TEST(Propagate, ScalarClosedForm) {
  const double a = -0.7, s2 = 0.9;
  const auto traj = PropagateCovariance(ScalarLoop(a, std::sqrt(s2)), Matrix::Constant(1, 1, 2.0),
                                        1.0, 1e-4);
  EXPECT_NEAR(traj.times.back(), 1.0, 1e-12);
  const double expected = 2.0 * std::exp(2 * a + s2);
  EXPECT_NEAR(traj.traces.back() / expected, 1.0, 1e-6);
}

TEST(Propagate, ZeroInitialStaysZero) {
  std::mt19937_64 rng(10);
  const auto ic = RandomLoop(rng, 3, 2, -0.3, 0.5);
  const auto traj = PropagateCovariance(ic, Matrix::Zero(3, 3), 2.0);
  for (const auto& q : traj.covariances) EXPECT_TRUE(q.isZero(0.0));
}

TEST(Propagate, AdditiveSteadyStateIsGramian) {
  std::mt19937_64 rng(11);
  const auto ic = RandomLoop(rng, 3, 1, -0.5, 0.0);
  const Matrix h = RandomMatrix(rng, 3, 2);
  const auto traj = PropagateCovariance(ic, Matrix::Zero(3, 3), 60.0, 1e-2, h, 100);
  const Matrix w = SolveLyapunov(ic.nominal().A(), h * h.transpose());
  EXPECT_LT((traj.covariances.back() - w).norm(), 1e-6 * w.norm());
  EXPECT_LT((SteadyStateCovariance(ic, h) - w).norm(), 1e-9 * w.norm());
}

TEST(Propagate, MatchesLiftedExponential) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ic = RandomLoop(rng, 3, 2, -0.2, 0.8);
    const Matrix h = RandomMatrix(rng, 3, 3);
    const Matrix q0 = h * h.transpose();
    const auto traj = PropagateCovariance(ic, q0, 1.5);
    const Matrix expo = (BuildLifted(ic).script_a * 1.5).exp();
    const Vector expected = expo * Vec(q0);
    EXPECT_LT((Vec(traj.covariances.back()) - expected).norm(), 1e-6 * expected.norm());
  }
}

TEST(Propagate, SymmetricPsdAndDecaying) {
  std::mt19937_64 rng(13);
  const auto ic = RandomLoop(rng, 4, 2, -0.6, 0.3);
  ASSERT_EQ(IsMeanSquareStable(ic).verdict, Verdict::kStable);
  const auto traj = PropagateCovariance(ic, Matrix::Identity(4, 4), 30.0, 0.0, std::nullopt, 50);
  for (const auto& q : traj.covariances) {
    EXPECT_EQ(q, Matrix(q.transpose()));
    EXPECT_GE(MinEigenvalueSym(q), -1e-8 * std::max(1.0, q.norm()));
  }
  // Fit log trace ≈ log β₁ − β₂ t by least squares over the tail.
  const size_t k0 = traj.times.size() / 2;
  double st = 0, sl = 0, stt = 0, stl = 0;
  const double cnt = static_cast<double>(traj.times.size() - k0);
  for (size_t k = k0; k < traj.times.size(); ++k) {
    const double t = traj.times[k], l = std::log(traj.traces[k]);
    st += t, sl += l, stt += t * t, stl += t * l;
  }
  const double slope = (cnt * stl - st * sl) / (cnt * stt - st * st);
  EXPECT_LT(slope, 0.0);
  const double beta2 = -slope;
  double beta1 = 0;
  for (size_t k = 0; k < traj.times.size(); ++k) {
    beta1 = std::max(beta1, traj.traces[k] * std::exp(beta2 * traj.times[k]) / traj.traces[0]);
  }
  for (size_t k = 0; k < traj.times.size(); ++k) {
    EXPECT_LE(traj.traces[k], beta1 * std::exp(-beta2 * traj.times[k]) * traj.traces[0] * 1.01);
  }
}

TEST(Propagate, DivergenceReported) {
  const auto traj = PropagateCovariance(ScalarLoop(50.0, 1.0), Matrix::Identity(1, 1), 10.0, 1e-3);
  EXPECT_TRUE(traj.diverged);
  EXPECT_GT(traj.divergence_time, 5.0);
  EXPECT_LT(traj.divergence_time, 8.0);
}

TEST(SteadyState, ScalarCases) {
  EXPECT_NEAR(SteadyStateCovariance(ScalarLoop(-1, 0.0), Matrix::Identity(1, 1))(0, 0), 0.5,
              1e-14);
  EXPECT_NEAR(SteadyStateCovariance(ScalarLoop(-1, 1.0), Matrix::Identity(1, 1))(0, 0), 1.0,
              1e-14);
  EXPECT_THROW(SteadyStateCovariance(ScalarLoop(-1, 1.5), Matrix::Identity(1, 1)),
               UnboundedMomentError);
}

TEST(SteadyState, MatchesLongHorizon) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 3; ++trial) {
    const auto ic = RandomLoop(rng, 4, 2, -0.5, 0.3);
    ASSERT_EQ(IsMeanSquareStable(ic).verdict, Verdict::kStable);
    const Matrix h = RandomMatrix(rng, 4, 2);
    const Matrix ss = SteadyStateCovariance(ic, h);
    EXPECT_GE(MinEigenvalueSym(ss), -1e-8 * ss.norm());
    const auto traj = PropagateCovariance(ic, Matrix::Zero(4, 4), 200.0, 2e-3, h, 1000);
    EXPECT_LT((traj.covariances.back() - ss).norm(), 1e-6 * ss.norm());
  }
}

TEST(Certificate, ScalarCases) {
  const auto ok = FindLyapunovCertificate(ScalarLoop(-1, 1.0));
  ASSERT_TRUE(ok.feasible()) << ok.diagnostic;
  EXPECT_GT(ok.certificate->p(0, 0), 0.0);
  EXPECT_GT(ok.certificate->slack, 0.0);
  // P = 1 satisfies −2 + 1 = −1 < 0 by hand.
  EXPECT_NEAR(LyapunovResidual(ScalarLoop(-1, 1.0), Matrix::Identity(1, 1))(0, 0), -1.0, 1e-15);
  const auto bad = FindLyapunovCertificate(ScalarLoop(-1, std::sqrt(2.5)));
  EXPECT_FALSE(bad.feasible());
  EXPECT_EQ(bad.status, sdp::Status::kInfeasible);
  EXPECT_LT(bad.margin_bound, 0.0);
  EXPECT_NE(bad.diagnostic.find("not mean-square stable"), std::string::npos);
}

TEST(Certificate, ReevaluatesOnRandomStableLoops) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ic = RandomLoop(rng, 4, 2, -0.5, 0.3);
    if (IsMeanSquareStable(ic).verdict != Verdict::kStable) continue;
    const auto cert = FindLyapunovCertificate(ic);
    ASSERT_TRUE(cert.feasible()) << cert.diagnostic;
    EXPECT_GT(MinEigenvalueSym(cert.certificate->p), 0.0);
    EXPECT_LT(MaxEigenvalueSym(LyapunovResidual(ic, cert.certificate->p)), 0.0);
  }
}

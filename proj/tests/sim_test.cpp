#include <msslab/sim.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "test_util.hpp"

namespace msslab {
namespace {

TEST(Philox, KnownAnswer) {
  const auto zero = Philox4x32::Generate({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(zero, (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  const auto ones = Philox4x32::Generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                         {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(ones, (Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  const auto pi = Philox4x32::Generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                       {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(pi, (Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, NormalsHaveUnitMoments) {
  double s1 = 0, s2 = 0;
  const int blocks = 50000;
  for (int k = 0; k < blocks; ++k) {
    for (double z : NormalBlock(9, 3, static_cast<std::uint32_t>(k), 0)) {
      s1 += z;
      s2 += z * z;
    }
  }
  const double n = 4.0 * blocks;
  EXPECT_NEAR(s1 / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

SimConfig ScalarConfig(long paths, double step, std::uint64_t seed) {
  SimConfig cfg;
  cfg.paths = paths;
  cfg.step = step;
  cfg.horizon = 1.0;
  cfg.seed = seed;
  cfg.initial = Vector(Vector::Ones(1));
  return cfg;
}

TEST(Simulate, ScalarSecondMomentMatchesClosedForm) {
  const auto ic = testing::ScalarLoop(-1.0, 1.0);
  const auto e = Simulate(ic, ScalarConfig(20000, 1e-3, 5));
  EXPECT_EQ(e.diverged_paths, 0);
  for (size_t k = 0; k < e.times.size(); ++k) {
    const double exact = std::exp(-1.0 * e.times[k]);
    EXPECT_NEAR(e.mean_traces[k], exact, 3.0 * e.standard_errors[k] + 1e-12) << e.times[k];
  }
}

TEST(Simulate, NoiseFreePathsFollowTheEulerFlow) {
  std::mt19937_64 rng(2);
  const Matrix a = testing::RandomWithAbscissa(rng, 3, -0.5);
  const auto ic = DirectLoop(StateSpace(a, testing::RandomMatrix(rng, 3, 2),
                                        testing::RandomMatrix(rng, 2, 3)),
                             {0.0, 0.0});
  SimConfig cfg;
  cfg.paths = 3;
  cfg.step = 0.01;
  cfg.horizon = 2.0;
  cfg.samples = 4;
  Vector x0(3);
  x0 << 1, -2, 0.5;
  cfg.initial = x0;
  const auto e = Simulate(ic, cfg);
  const Matrix stepper = Matrix::Identity(3, 3) + 0.01 * a;
  Vector x = x0;
  for (size_t k = 1; k < e.times.size(); ++k) {
    for (int i = 0; i < 50; ++i) x = stepper * x;
    EXPECT_TRUE(e.covariances[k].isApprox(x * x.transpose(), 1e-12));
    EXPECT_LE(e.standard_errors[k], 1e-6 * e.mean_traces[k]);
  }
}

TEST(Simulate, PathwiseUnstableScalarGrows) {
  const auto ic = testing::ScalarLoop(1.0, 1.0);
  SimConfig cfg = ScalarConfig(2000, 1e-2, 3);
  cfg.horizon = 5.0;
  const auto e = Simulate(ic, cfg);
  for (size_t k = 1; k < e.mean_traces.size(); ++k) {
    EXPECT_GT(e.mean_traces[k], e.mean_traces[k - 1]);
  }
}

// With 2a + σ² = 0.1 > 0 but a − σ²/2 < 0 almost every path decays and the
// growing second moment lives in the tail, out of reach of a few thousand
// samples. The moment equation still sees it.
TEST(Simulate, SupercriticalMomentLivesInTheTail) {
  const auto ic = testing::ScalarLoop(-1.0, std::sqrt(2.1));
  SimConfig cfg = ScalarConfig(2000, 1e-2, 3);
  cfg.horizon = 50.0;
  const auto e = Simulate(ic, cfg);
  const auto q = PropagateCovariance(ic, Matrix::Ones(1, 1), 50.0);
  EXPECT_NEAR(q.traces.back(), std::exp(5.0), 1e-6 * std::exp(5.0));
  EXPECT_EQ(IsMeanSquareStable(ic).verdict, Verdict::kUnstable);
  EXPECT_LT(e.mean_traces.back(), q.traces.back());
}

TEST(Simulate, DeterministicAcrossThreadCounts) {
  std::mt19937_64 rng(4);
  const Matrix a = testing::RandomWithAbscissa(rng, 2, -1.0);
  const auto ic = DirectLoop(StateSpace(a, testing::RandomMatrix(rng, 2, 1),
                                        testing::RandomMatrix(rng, 1, 2)),
                             {0.5});
  SimConfig cfg;
  cfg.paths = 1500;
  cfg.horizon = 1.0;
  cfg.initial = Vector(Vector::Ones(2));
  cfg.additive = Matrix::Identity(2, 2) * 0.1;
  setenv("MSSLAB_THREADS", "1", 1);
  const auto one = Simulate(ic, cfg);
  setenv("MSSLAB_THREADS", "4", 1);
  const auto four = Simulate(ic, cfg);
  unsetenv("MSSLAB_THREADS");
  const auto again = Simulate(ic, cfg);
  ASSERT_EQ(one.mean_traces.size(), four.mean_traces.size());
  for (size_t k = 0; k < one.mean_traces.size(); ++k) {
    EXPECT_EQ(one.mean_traces[k], four.mean_traces[k]);
    EXPECT_EQ(one.mean_traces[k], again.mean_traces[k]);
    EXPECT_EQ(one.covariances[k], four.covariances[k]);
  }
  cfg.seed = 2;
  EXPECT_NE(Simulate(ic, cfg).mean_traces.back(), one.mean_traces.back());
}

TEST(Simulate, StandardizedDeviationsAcrossSeeds) {
  const auto ic = testing::ScalarLoop(-1.0, 1.0);
  int total = 0, outliers = 0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto e = Simulate(ic, ScalarConfig(2000, 1e-2, seed));
    for (size_t k = 1; k < e.times.size(); ++k) {
      const double z = (e.mean_traces[k] - std::exp(-e.times[k])) / e.standard_errors[k];
      ++total;
      if (std::abs(z) > 4.0) ++outliers;
    }
  }
  EXPECT_LE(outliers, total / 100);
}

// The exact second moment of the Euler scheme for dx = ax dt + σx dΔ is
// (1 + 2ah + (a² + σ²)h²/h ... ) per step; halving h moves it by far less
// than one standard error of a 10⁴-path estimate.
TEST(Simulate, StepHalvingStaysWithinOneStandardError) {
  const double a = -1.0, s2 = 1.0;
  auto discrete = [&](double h) {
    return std::pow(1.0 + 2.0 * a * h + a * a * h * h + s2 * h, 1.0 / h);
  };
  const auto ic = testing::ScalarLoop(a, std::sqrt(s2));
  const auto coarse = Simulate(ic, ScalarConfig(10000, 2e-3, 8));
  const auto fine = Simulate(ic, ScalarConfig(10000, 1e-3, 8));
  EXPECT_LT(std::abs(discrete(2e-3) - discrete(1e-3)), coarse.standard_errors.back());
  EXPECT_NEAR(coarse.mean_traces.back(), discrete(2e-3), 3.0 * coarse.standard_errors.back());
  EXPECT_NEAR(fine.mean_traces.back(), discrete(1e-3), 3.0 * fine.standard_errors.back());
}

TEST(Simulate, RejectsBadConfig) {
  const auto ic = testing::ScalarLoop(-1.0, 1.0);
  SimConfig cfg = ScalarConfig(0, 1e-2, 1);
  EXPECT_THROW(Simulate(ic, cfg), std::invalid_argument);
  cfg = ScalarConfig(10, 2.0, 1);
  EXPECT_THROW(Simulate(ic, cfg), std::invalid_argument);
  cfg = ScalarConfig(10, 1e-2, 1);
  cfg.initial = Vector(Vector::Ones(2));
  EXPECT_THROW(Simulate(ic, cfg), std::invalid_argument);
}

TEST(Simulate, InitialCovarianceIsSampled) {
  const auto ic = testing::ScalarLoop(-1.0, 0.0);
  SimConfig cfg = ScalarConfig(20000, 1e-2, 6);
  cfg.initial = Matrix(Matrix::Constant(1, 1, 4.0));
  const auto e = Simulate(ic, cfg);
  EXPECT_NEAR(e.mean_traces.front(), 4.0, 3.0 * e.standard_errors.front());
}

TEST(CompareWithMoments, RandomStableLoop) {
  std::mt19937_64 rng(21);
  const Matrix a = testing::RandomWithAbscissa(rng, 3, -0.6);
  const auto nominal =
      StateSpace(a, testing::RandomMatrix(rng, 3, 2, 0.5), testing::RandomMatrix(rng, 2, 3, 0.5));
  const auto ic = DirectLoop(nominal, {0.4, 0.3});
  ASSERT_EQ(IsMeanSquareStable(ic).verdict, Verdict::kStable);
  SimConfig cfg;
  cfg.paths = 10000;
  cfg.horizon = 3.0;
  cfg.initial = Vector(Vector::Ones(3));
  const auto c = CompareWithMoments(ic, cfg);
  EXPECT_LT(c.max_relative_deviation, 0.05);
  EXPECT_LT(c.max_abs_z, 4.0);
  EXPECT_NE(c.ToCsv().find("analytic_trace"), std::string::npos);
}

TEST(CompareWithMoments, NoiseFreeLoopIsIntegratorErrorOnly) {
  const auto ic = testing::ScalarLoop(-1.0, 0.0);
  const auto c = CompareWithMoments(ic, ScalarConfig(4, 1e-4, 1));
  EXPECT_LT(c.max_relative_deviation, 1e-3);
}

TEST(SweepVariance, ScalarClosedForm) {
  const auto ic = testing::ScalarLoop(-1.0, 0.0);
  const double h = 0.3;
  const std::vector<double> vars{0.0, 0.5, 1.0, 1.5, 1.9, 2.0, 2.5};
  const auto s = SweepVariance(ic, vars, Matrix::Constant(1, 1, h));
  EXPECT_NEAR(s.critical_variance, 2.0, 1e-12);
  for (size_t i = 0; i < vars.size(); ++i) {
    if (vars[i] < 2.0) {
      ASSERT_TRUE(s.rows[i].bounded);
      EXPECT_NEAR(s.rows[i].steady_trace, h * h / (2.0 - vars[i]), 1e-12);
      if (i > 0) EXPECT_GT(s.rows[i].steady_trace, s.rows[i - 1].steady_trace);
    } else {
      EXPECT_FALSE(s.rows[i].bounded);
    }
  }
  EXPECT_NE(s.ToCsv().find("unbounded"), std::string::npos);
}

TEST(SweepVariance, EmpiricalConfirmation) {
  const auto ic = testing::ScalarLoop(-1.0, 0.0);
  SimConfig cfg = ScalarConfig(20000, 1e-2, 12);
  cfg.horizon = 6.0;
  cfg.initial = Vector(Vector::Zero(1));
  const auto s = SweepVariance(ic, {0.5}, Matrix::Constant(1, 1, 1.0), cfg);
  ASSERT_TRUE(s.rows[0].empirical_trace);
  EXPECT_NEAR(*s.rows[0].empirical_trace, s.rows[0].steady_trace,
              0.05 * s.rows[0].steady_trace);
}

}  // namespace
}  // namespace msslab

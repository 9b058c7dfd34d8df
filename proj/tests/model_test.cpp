#include <msslab/model.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace msslab;

namespace {

StateSpace Scalar(double a, double b, double c) {
  return StateSpace(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b),
                    Matrix::Constant(1, 1, c));
}

}  // namespace

TEST(StateSpace, RejectsBadShapes) {
  EXPECT_THROW(StateSpace(Matrix::Zero(2, 3), Matrix::Zero(2, 1), Matrix::Zero(1, 2)),
               std::invalid_argument);
  EXPECT_THROW(StateSpace(Matrix::Zero(2, 2), Matrix::Zero(3, 1), Matrix::Zero(1, 2)),
               std::invalid_argument);
  EXPECT_THROW(StateSpace(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(1, 3)),
               std::invalid_argument);
  Matrix bad = Matrix::Zero(1, 1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(StateSpace(bad, Matrix::Zero(1, 1), Matrix::Zero(1, 1)), std::invalid_argument);
}

TEST(AssembleNominal, ScalarBlockSubstitution) {
  const auto ic = AssembleNominal(Scalar(-1, 1, 1), Scalar(-1, 0, 0),
                                  ChannelSet::Uniform(1, 1, 1.0, 0.3));
  Matrix a(2, 2), b(2, 2);
  a << -1, 0, 0, -1;
  b << 0, 1, 0, 0;
  EXPECT_EQ(ic.nominal().A(), a);
  EXPECT_EQ(ic.nominal().B(), b);
  // C = diag(c_p, c_k) with c_k = 0.
  Matrix c(2, 2);
  c << 1, 0, 0, 0;
  EXPECT_EQ(ic.nominal().C(), c);
  EXPECT_EQ(ic.channels(), 2);
}

TEST(AssembleNominal, BlockLayoutWithMeans) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  auto rnd = [&](int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
  };
  const StateSpace plant(rnd(3, 3), rnd(3, 2), rnd(1, 3));
  const StateSpace ctrl(rnd(3, 3), rnd(3, 1), rnd(2, 3));
  ChannelSet ch{Vector::Constant(2, 0.9), Vector::Constant(2, 0.1), Vector::Constant(1, 0.8),
                Vector::Constant(1, 0.2)};
  ch.input_stds(1) = 0.4;
  const auto ic = AssembleNominal(plant, ctrl, ch);
  const Matrix& a = ic.nominal().A();
  EXPECT_EQ(a.rows(), 6);
  EXPECT_TRUE(a.topLeftCorner(3, 3).isApprox(plant.A()));
  EXPECT_TRUE(a.topRightCorner(3, 3).isApprox(0.9 * plant.B() * ctrl.C()));
  EXPECT_TRUE(a.bottomLeftCorner(3, 3).isApprox(0.8 * ctrl.B() * plant.C()));
  EXPECT_TRUE(a.bottomRightCorner(3, 3).isApprox(ctrl.A()));
  // Output channel first, then the two input channels.
  ASSERT_EQ(ic.sigmas().size(), 3u);
  EXPECT_DOUBLE_EQ(ic.sigmas()[0], 0.2);
  EXPECT_DOUBLE_EQ(ic.sigmas()[1], 0.1);
  EXPECT_DOUBLE_EQ(ic.sigmas()[2], 0.4);
  EXPECT_TRUE(ic.column(0).tail(3).isApprox(ctrl.B()));
  EXPECT_TRUE(ic.column(2).head(3).isApprox(plant.B().col(1)));
  EXPECT_TRUE(ic.row(1).tail(3).isApprox(ctrl.C().row(0)));
}

TEST(AssembleNominal, RejectsFeedthroughAndShapeMismatch) {
  const StateSpace proper(Matrix::Constant(1, 1, -1), Matrix::Constant(1, 1, 0),
                          Matrix::Constant(1, 1, 0), Matrix::Constant(1, 1, 0.5));
  const auto ch = ChannelSet::Uniform(1, 1, 1.0, 0.1);
  EXPECT_THROW(AssembleNominal(Scalar(-1, 1, 1), proper, ch), std::invalid_argument);
  const StateSpace wide(Matrix::Identity(1, 1), Matrix::Zero(1, 2), Matrix::Zero(1, 1));
  EXPECT_THROW(AssembleNominal(Scalar(-1, 1, 1), wide, ch), std::invalid_argument);
  EXPECT_THROW(AssembleNominal(Scalar(-1, 1, 1), Scalar(-1, 0, 0),
                               ChannelSet::Uniform(2, 1, 1.0, 0.1)),
               std::invalid_argument);
}

TEST(DirectLoop, Shapes) {
  const auto ic = DirectLoop(Scalar(-2, 1, 1), {0.5});
  EXPECT_EQ(ic.channels(), 1);
  EXPECT_EQ(ic.noise_gain(0)(0, 0), 1.0);
  const auto det = DirectLoop(StateSpace(-Matrix::Identity(2, 2), Matrix::Zero(2, 0),
                                         Matrix::Zero(0, 2)),
                              {});
  EXPECT_EQ(det.channels(), 0);
  EXPECT_THROW(DirectLoop(Scalar(-2, 1, 1), {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(DirectLoop(Scalar(-2, 1, 1), {-0.5}), std::invalid_argument);
}

TEST(TransmissionZeros, FirstOrderLagHasNone) {
  EXPECT_TRUE(TransmissionZeros(Scalar(-1, 1, 1)).empty());
}

TEST(TransmissionZeros, ParallelLags) {
  // 1/(s+1) + 1/(s+2) = (2s+3)/((s+1)(s+2)).
  Matrix a(2, 2), b(2, 1), c(1, 2);
  a << -1, 0, 0, -2;
  b << 1, 1;
  c << 1, 1;
  const auto z = TransmissionZeros(StateSpace(a, b, c));
  ASSERT_EQ(z.size(), 1u);
  EXPECT_NEAR(z[0].real(), -1.5, 1e-10);
  EXPECT_NEAR(z[0].imag(), 0.0, 1e-10);
  EXPECT_THROW(TransmissionZeros(StateSpace(a, Matrix::Identity(2, 2), c)),
               std::invalid_argument);
}

TEST(Wscc9, StructureAndDeterminism) {
  const StateSpace a = BuildWscc9(), b = BuildWscc9();
  EXPECT_EQ(a.A(), b.A());
  EXPECT_EQ(a.A().rows(), 6);
  EXPECT_EQ(Matrix(a.A().topRightCorner(3, 3)), Matrix(Matrix::Identity(3, 3)));
  EXPECT_TRUE(a.A().topLeftCorner(3, 3).isZero(0.0));
  EXPECT_DOUBLE_EQ(a.A()(3, 3), -10.0 / 22.64);
  EXPECT_DOUBLE_EQ(a.B()(3, 0), 0.0062);
  const StateSpace mimo = wscc9::MimoPlant();
  EXPECT_EQ(mimo.inputs(), 3);
  EXPECT_EQ(mimo.outputs(), 3);
}

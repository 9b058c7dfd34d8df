#pragma once

// Plants, controllers and uncertain channels, plus the assembly of the
// nominal loop that the multiplicative noise closes around.

#include <msslab/linalg.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msslab {

/// Continuous-time LTI system (A, B, C, D). D exists only so that
/// validation can reject feedthrough; it is never propagated.
class StateSpace {
 public:
  StateSpace() = default;
  StateSpace(Matrix a, Matrix b, Matrix c, std::optional<Matrix> d = std::nullopt)
      : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)), d_(std::move(d)) {
    Validate();
  }

  const Matrix& A() const { return a_; }
  const Matrix& B() const { return b_; }
  const Matrix& C() const { return c_; }
  const std::optional<Matrix>& D() const { return d_; }

  Eigen::Index states() const { return a_.rows(); }
  Eigen::Index inputs() const { return b_.cols(); }
  Eigen::Index outputs() const { return c_.rows(); }

  bool strictly_proper() const { return !d_ || d_->isZero(0.0); }

 private:
  void Validate() const {
    if (a_.rows() != a_.cols()) {
      throw std::invalid_argument("StateSpace: A must be square");
    }
    if (b_.rows() != a_.rows()) {
      throw std::invalid_argument("StateSpace: B must have as many rows as A");
    }
    if (c_.cols() != a_.rows()) {
      throw std::invalid_argument("StateSpace: C must have as many columns as A");
    }
    if (d_ && (d_->rows() != c_.rows() || d_->cols() != b_.cols())) {
      throw std::invalid_argument("StateSpace: D must be outputs x inputs");
    }
    if (!a_.allFinite() || !b_.allFinite() || !c_.allFinite() || (d_ && !d_->allFinite())) {
      throw std::invalid_argument("StateSpace: non-finite entry");
    }
  }

  Matrix a_, b_, c_;
  std::optional<Matrix> d_;
};

/// Per-channel mean gain and noise standard deviation. Input channels sit
/// between controller and plant, output channels between plant and
/// controller.
struct ChannelSet {
  Vector input_means;
  Vector input_stds;
  Vector output_means;
  Vector output_stds;

  static ChannelSet Uniform(Eigen::Index inputs, Eigen::Index outputs, double mean,
                            double stddev) {
    return {Vector::Constant(inputs, mean), Vector::Constant(inputs, stddev),
            Vector::Constant(outputs, mean), Vector::Constant(outputs, stddev)};
  }

  void Validate(Eigen::Index inputs, Eigen::Index outputs) const {
    if (input_means.size() != inputs || input_stds.size() != inputs) {
      throw std::invalid_argument("ChannelSet: input channel count must equal plant inputs (" +
                                  std::to_string(inputs) + ")");
    }
    if (output_means.size() != outputs || output_stds.size() != outputs) {
      throw std::invalid_argument(
          "ChannelSet: output channel count must equal plant outputs (" +
          std::to_string(outputs) + ")");
    }
    if ((input_stds.array() < 0).any() || (output_stds.array() < 0).any()) {
      throw std::invalid_argument("ChannelSet: standard deviations must be nonnegative");
    }
    if (!input_means.allFinite() || !output_means.allFinite() || !input_stds.allFinite() ||
        !output_stds.allFinite()) {
      throw std::invalid_argument("ChannelSet: non-finite entry");
    }
  }
};

/// Nominal loop G with m noise channels fed back as w = diag(σ dΔ/dt) z.
/// Channel ℓ enters through column ℓ of B and is read from row ℓ of C.
class Interconnection {
 public:
  Interconnection(StateSpace nominal, std::vector<double> sigmas)
      : nominal_(std::move(nominal)), sigmas_(std::move(sigmas)) {
    if (!nominal_.strictly_proper()) {
      throw std::invalid_argument(
          "Interconnection: nominal loop must be strictly proper (D = 0); feedthrough "
          "would multiply white noise processes around the loop");
    }
    const auto m = static_cast<Eigen::Index>(sigmas_.size());
    if (nominal_.inputs() != m || nominal_.outputs() != m) {
      throw std::invalid_argument("Interconnection: need " + std::to_string(m) +
                                  " inputs and outputs, got " +
                                  std::to_string(nominal_.inputs()) + " and " +
                                  std::to_string(nominal_.outputs()));
    }
    for (double s : sigmas_) {
      if (!(s >= 0.0) || !std::isfinite(s)) {
        throw std::invalid_argument("Interconnection: sigmas must be finite and >= 0");
      }
    }
  }

  const StateSpace& nominal() const { return nominal_; }
  const std::vector<double>& sigmas() const { return sigmas_; }
  Eigen::Index channels() const { return static_cast<Eigen::Index>(sigmas_.size()); }
  Eigen::Index states() const { return nominal_.states(); }

  Vector column(Eigen::Index l) const { return nominal_.B().col(l); }
  Eigen::RowVectorXd row(Eigen::Index l) const { return nominal_.C().row(l); }

  /// Rank-one noise gain Bℓ Cℓ of channel ℓ.
  Matrix noise_gain(Eigen::Index l) const { return column(l) * row(l); }

  Interconnection WithSigmas(std::vector<double> sigmas) const {
    return Interconnection(nominal_, std::move(sigmas));
  }

  Interconnection WithEqualVariance(double variance) const {
    return WithSigmas(std::vector<double>(sigmas_.size(), std::sqrt(variance)));
  }

 private:
  StateSpace nominal_;
  std::vector<double> sigmas_;
};

/// Closes plant and controller through the channel means. Channels are
/// enumerated outputs first, then inputs, matching C = diag(C_p, C_k).
inline Interconnection AssembleNominal(const StateSpace& plant, const StateSpace& controller,
                                       const ChannelSet& channels) {
  if (!plant.strictly_proper() || !controller.strictly_proper()) {
    throw std::invalid_argument(
        "AssembleNominal: plant and controller must be strictly proper; a feedthrough "
        "term multiplies the input and output white noise processes");
  }
  const Eigen::Index n = plant.states(), nk = controller.states();
  const Eigen::Index d = plant.inputs(), q = plant.outputs();
  if (controller.inputs() != q || controller.outputs() != d) {
    throw std::invalid_argument("AssembleNominal: controller must map " + std::to_string(q) +
                                " measurements to " + std::to_string(d) + " inputs");
  }
  channels.Validate(d, q);
  const Matrix lambda_i = channels.input_means.asDiagonal();
  const Matrix lambda_o = channels.output_means.asDiagonal();

  Matrix a(n + nk, n + nk);
  a << plant.A(), plant.B() * lambda_i * controller.C(),
      controller.B() * lambda_o * plant.C(), controller.A();
  Matrix b = Matrix::Zero(n + nk, q + d);
  b.bottomLeftCorner(nk, q) = controller.B();
  b.topRightCorner(n, d) = plant.B();
  const Matrix c = BlockDiag(plant.C(), controller.C());

  std::vector<double> sigmas;
  sigmas.reserve(q + d);
  for (Eigen::Index i = 0; i < q; ++i) sigmas.push_back(channels.output_stds(i));
  for (Eigen::Index i = 0; i < d; ++i) sigmas.push_back(channels.input_stds(i));
  return Interconnection(StateSpace(a, b, c), std::move(sigmas));
}

/// Wraps an already assembled nominal loop.
inline Interconnection DirectLoop(const StateSpace& sys, std::vector<double> sigmas) {
  return Interconnection(sys, std::move(sigmas));
}

/// Finite transmission zeros of a SISO system from the Rosenbrock pencil
/// ([[A, B], [C, 0]], diag(I, 0)).
inline std::vector<Complex> TransmissionZeros(const StateSpace& sys) {
  if (sys.inputs() != 1 || sys.outputs() != 1) {
    throw std::invalid_argument("TransmissionZeros: system must be SISO");
  }
  if (!sys.strictly_proper()) {
    throw std::invalid_argument("TransmissionZeros: D must be zero");
  }
  const Eigen::Index n = sys.states();
  Matrix pencil = Matrix::Zero(n + 1, n + 1);
  pencil.topLeftCorner(n, n) = sys.A();
  pencil.topRightCorner(n, 1) = sys.B();
  pencil.bottomLeftCorner(1, n) = sys.C();
  Matrix e = Matrix::Zero(n + 1, n + 1);
  e.topLeftCorner(n, n).setIdentity();
  return FiniteGeneralizedEigenvalues(pencil, e);
}

/// Linearised swing dynamics of the three-generator WSCC 9-bus system
/// after Kron reduction of the load buses. State is (δ₁..δ₃, ω₁..ω₃).
namespace wscc9 {

inline Vector Inertia() { return (Vector(3) << 22.64, 6.47, 5.047).finished(); }

inline Vector Damping() { return (Vector(3) << 10.0, 10.0, 10.0).finished(); }

inline Matrix KronReducedLaplacian() {
  return (Matrix(3, 3) << -4.5375, 2.4111, 2.4006,  //
          2.4111, -4.8367, 2.9096,                  //
          2.4006, 2.9096, -4.6931)
      .finished();
}

/// [[0, I], [-M⁻¹L̂, -M⁻¹D]].
inline Matrix StateMatrix() {
  const Matrix m_inv = Inertia().cwiseInverse().asDiagonal();
  Matrix a = Matrix::Zero(6, 6);
  a.topRightCorner(3, 3).setIdentity();
  a.bottomLeftCorner(3, 3) = -m_inv * KronReducedLaplacian();
  a.bottomRightCorner(3, 3) = -m_inv * Matrix(Damping().asDiagonal());
  return a;
}

/// Single actuator on ω₁ used for the pole/zero study.
inline Matrix Table1Input() {
  Matrix b = Matrix::Zero(6, 1);
  b(3, 0) = 0.0062;
  return b;
}

/// Single actuator at generator 3 used for the fundamental-limit study.
inline Matrix Generator3Input() {
  Matrix b = Matrix::Zero(6, 1);
  b(4, 0) = 0.0802;
  return b;
}

/// Output row Σ wᵢ ωᵢ.
inline Matrix FrequencyOutput(double w1, double w2, double w3) {
  Matrix c = Matrix::Zero(1, 6);
  c(0, 3) = w1;
  c(0, 4) = w2;
  c(0, 5) = w3;
  return c;
}

/// Mechanical torque into every generator (B = [0; M⁻¹]) with all three
/// frequencies measured (C = [0, I]).
inline StateSpace MimoPlant() {
  Matrix b = Matrix::Zero(6, 3);
  b.bottomRows(3) = Inertia().cwiseInverse().asDiagonal();
  Matrix c = Matrix::Zero(3, 6);
  c.rightCols(3).setIdentity();
  return StateSpace(StateMatrix(), b, c);
}

}  // namespace wscc9

/// The WSCC swing model with the single ω₁ actuator and ω₁ measurement.
inline StateSpace BuildWscc9() {
  return StateSpace(wscc9::StateMatrix(), wscc9::Table1Input(),
                    wscc9::FrequencyOutput(1.0, 0.0, 0.0));
}

}  // namespace msslab

#pragma once

// Second-moment dynamics of dx = A x dt + Σ σℓ Bℓ Cℓ x dΔℓ (+ H dW).

#include <msslab/linalg.hpp>
#include <msslab/model.hpp>
#include <msslab/sdp.hpp>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace msslab {

struct LiftedOperator {
  Matrix script_a;
  std::optional<Vector> script_b;
  Eigen::Index source_dim = 0;
};

inline void RequireAdditive(const Interconnection& ic, const Matrix& h, const char* what) {
  if (h.rows() != ic.states()) {
    throw std::invalid_argument(std::string(what) + ": H must have " +
                                std::to_string(ic.states()) + " rows");
  }
}

/// 𝒜 = A ⊕ A + Σ σℓ² (BℓCℓ ⊗ BℓCℓ), ℬ = (H ⊗ H) vec(I).
inline LiftedOperator BuildLifted(const Interconnection& ic,
                                  const std::optional<Matrix>& additive = std::nullopt) {
  const Matrix& a = ic.nominal().A();
  LiftedOperator op;
  op.source_dim = a.rows();
  op.script_a = KronSum(a, a);
  for (Eigen::Index l = 0; l < ic.channels(); ++l) {
    const double s2 = ic.sigmas()[l] * ic.sigmas()[l];
    if (s2 == 0.0) continue;
    const Matrix g = ic.noise_gain(l);
    op.script_a += s2 * Kron(g, g);
  }
  if (additive) {
    RequireAdditive(ic, *additive, "BuildLifted");
    op.script_b = Vec(*additive * additive->transpose());
  }
  return op;
}

struct LiftedVerdict {
  Verdict verdict = Verdict::kMarginal;
  Spectrum spectrum;
};

/// Exact test: mean-square stable iff 𝒜 is Hurwitz.
inline LiftedVerdict IsMeanSquareStable(const Interconnection& ic) {
  LiftedVerdict v;
  if (ic.states() == 0) {
    v.verdict = Verdict::kStable;
    return v;
  }
  v.spectrum = Eigenvalues(BuildLifted(ic).script_a);
  v.verdict = v.spectrum.hurwitz();
  return v;
}

/// Right-hand side of the covariance equation
/// Q̇ = AQ + QAᵀ + Σ σℓ² BℓCℓ Q CℓᵀBℓᵀ + HHᵀ.
inline Matrix CovarianceRate(const Interconnection& ic, const Matrix& q,
                             const Matrix* forcing = nullptr) {
  const Matrix& a = ic.nominal().A();
  Matrix dq = a * q + q * a.transpose();
  for (Eigen::Index l = 0; l < ic.channels(); ++l) {
    const double s2 = ic.sigmas()[l] * ic.sigmas()[l];
    if (s2 == 0.0) continue;
    const Vector b = ic.column(l);
    const double cqc = ic.row(l) * q * ic.row(l).transpose();
    dq.noalias() += (s2 * cqc) * b * b.transpose();
  }
  if (forcing) dq += *forcing;
  return dq;
}

struct CovarianceTrajectory {
  std::vector<double> times;
  std::vector<Matrix> covariances;
  std::vector<double> traces;
  bool diverged = false;
  double divergence_time = 0.0;

  std::string ToCsv() const {
    std::ostringstream os;
    os.precision(17);
    const Eigen::Index n = covariances.empty() ? 0 : covariances.front().rows();
    os << "time,trace";
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) os << ",q" << i << '_' << j;
    os << '\n';
    for (size_t k = 0; k < times.size(); ++k) {
      os << times[k] << ',' << traces[k];
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) os << ',' << covariances[k](i, j);
      os << '\n';
    }
    return os.str();
  }
};

inline double DefaultMomentStep(const Interconnection& ic) {
  const double na = ic.states() ? OperatorNorm(ic.nominal().A()) : 0.0;
  return na > 0 ? 1e-3 / na : 1e-3;
}

/// Classical RK4 on the covariance equation, symmetrised every step.
/// `step` ≤ 0 selects 1e-3/‖A‖. Every `record_stride`-th step is stored,
/// plus the final time.
inline CovarianceTrajectory PropagateCovariance(const Interconnection& ic, const Matrix& q0,
                                                double horizon, double step = 0.0,
                                                const std::optional<Matrix>& additive =
                                                    std::nullopt,
                                                int record_stride = 1) {
  const Eigen::Index n = ic.states();
  if (q0.rows() != n || q0.cols() != n) {
    throw std::invalid_argument("PropagateCovariance: Q0 must be " + std::to_string(n) + "x" +
                                std::to_string(n));
  }
  if (!(horizon >= 0)) throw std::invalid_argument("PropagateCovariance: horizon < 0");
  if (step <= 0) step = DefaultMomentStep(ic);
  if (record_stride < 1) record_stride = 1;
  std::optional<Matrix> forcing;
  if (additive) {
    RequireAdditive(ic, *additive, "PropagateCovariance");
    forcing = *additive * additive->transpose();
  }
  const Matrix* f = forcing ? &*forcing : nullptr;

  const auto steps = static_cast<long>(std::ceil(horizon / step - 1e-9));
  const double h = steps > 0 ? horizon / static_cast<double>(steps) : 0.0;

  CovarianceTrajectory traj;
  Matrix q = Symmetrize(q0);
  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.covariances.push_back(q);
    traj.traces.push_back(q.trace());
  };
  record(0.0);
  for (long k = 0; k < steps; ++k) {
    const Matrix k1 = CovarianceRate(ic, q, f);
    const Matrix k2 = CovarianceRate(ic, q + 0.5 * h * k1, f);
    const Matrix k3 = CovarianceRate(ic, q + 0.5 * h * k2, f);
    const Matrix k4 = CovarianceRate(ic, q + h * k3, f);
    q = Symmetrize(q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    const double t = static_cast<double>(k + 1) * h;
    if (!q.allFinite() || q.cwiseAbs().maxCoeff() > 1e300) {
      traj.diverged = true;
      traj.divergence_time = t;
      return traj;
    }
    if ((k + 1) % record_stride == 0 || k + 1 == steps) record(t);
  }
  return traj;
}

class UnboundedMomentError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// lim Q(t) = unvec(−𝒜⁻¹ℬ) for a mean-square stable loop with forcing H.
inline Matrix SteadyStateCovariance(const Interconnection& ic, const Matrix& additive) {
  RequireAdditive(ic, additive, "SteadyStateCovariance");
  const auto verdict = IsMeanSquareStable(ic);
  if (verdict.verdict != Verdict::kStable) {
    throw UnboundedMomentError(
        std::string("SteadyStateCovariance: lifted operator is ") + to_string(verdict.verdict) +
        "; the second moment is unbounded");
  }
  const LiftedOperator op = BuildLifted(ic, additive);
  const Vector sol = op.script_a.partialPivLu().solve(-*op.script_b);
  return Symmetrize(Unvec(sol, ic.states(), ic.states()));
}

/// AᵀP + PA + Σ σℓ² CℓᵀBℓᵀ P BℓCℓ.
inline Matrix LyapunovResidual(const Interconnection& ic, const Matrix& p) {
  const Matrix& a = ic.nominal().A();
  Matrix r = a.transpose() * p + p * a;
  for (Eigen::Index l = 0; l < ic.channels(); ++l) {
    const double s2 = ic.sigmas()[l] * ic.sigmas()[l];
    const Matrix g = ic.noise_gain(l);
    r += s2 * g.transpose() * p * g;
  }
  return r;
}

struct LyapunovCertificate {
  Matrix p;
  /// −λmax of the residual; positive for a valid certificate.
  double slack = 0.0;
};

struct CertificateResult {
  std::optional<LyapunovCertificate> certificate;
  sdp::Status status = sdp::Status::kMaxIterations;
  /// Upper bound on the achievable normalised margin; negative values prove
  /// that no certificate exists.
  double margin_bound = 0.0;
  std::string diagnostic;

  bool feasible() const { return certificate.has_value(); }
};

/// Searches P ≻ 0 with AᵀP + PA + Σ σℓ² CℓᵀBℓᵀPBℓCℓ ≺ 0. The constraints are
/// homogeneous in P, so they are posed as P ⪰ I and residual ⪯ −I.
inline CertificateResult FindLyapunovCertificate(const Interconnection& ic,
                                                 const sdp::Options& opt = {}) {
  const Eigen::Index n = ic.states();
  CertificateResult out;
  if (n == 0) {
    out.certificate = LyapunovCertificate{Matrix(0, 0), std::numeric_limits<double>::infinity()};
    out.status = sdp::Status::kFeasible;
    return out;
  }
  const Matrix& a = ic.nominal().A();
  const Matrix eye = Matrix::Identity(n, n);
  sdp::Problem prob;
  auto P = prob.Symmetric("P", n);
  const sdp::Expr pe = prob(P);
  sdp::Expr lyap = Matrix(a.transpose()) * pe + pe * a;
  for (Eigen::Index l = 0; l < ic.channels(); ++l) {
    const double s2 = ic.sigmas()[l] * ic.sigmas()[l];
    if (s2 == 0.0) continue;
    const Matrix g = ic.noise_gain(l);
    lyap += Matrix(s2 * g.transpose()) * pe * g;
  }
  prob.AddLmi("P >= I", pe - eye, sdp::Sense::kPositiveDefinite, false);
  prob.AddLmi("residual <= -I", lyap + eye, sdp::Sense::kNegativeDefinite, false);
  const auto sol = prob.SolveFeasibility(opt);
  out.status = sol.status;
  out.margin_bound = sol.margin_upper_bound;
  if (sol.status == sdp::Status::kFeasible) {
    Matrix p = prob.Value(P, sol);
    // Phase one drifts towards the ball; shrink back until a unit margin binds.
    const double room = std::min(MinEigenvalueSym(p), -MaxEigenvalueSym(LyapunovResidual(ic, p)));
    if (room > 1.0) p /= room;
    const double slack = -MaxEigenvalueSym(LyapunovResidual(ic, p));
    if (MinEigenvalueSym(p) > 0 && slack > 0) {
      out.certificate = LyapunovCertificate{p, slack};
      return out;
    }
    out.diagnostic = "solver point failed independent re-evaluation";
    return out;
  }
  std::ostringstream os;
  os << "not mean-square stable: no P satisfies the Lyapunov inequality (solver status "
     << sdp::to_string(sol.status) << ", best normalised margin bound " << sol.margin_upper_bound
     << ")";
  out.diagnostic = os.str();
  return out;
}

}  // namespace msslab

#pragma once

// Mean-square norm of the nominal loop: squared H2 norms between noise
// channels, the spectral-radius test and the LMI characterisation.

#include <msslab/linalg.hpp>
#include <msslab/model.hpp>
#include <msslab/sdp.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace msslab {

/// The nominal loop is not internally stable, so no finite norm exists.
class UnstableNominalError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline void RequireHurwitz(const Matrix& a, const char* what) {
  if (a.rows() == 0) return;
  const Spectrum s = Eigenvalues(a);
  if (s.hurwitz() != Verdict::kStable) {
    throw UnstableNominalError(std::string(what) +
                               ": nominal loop is not internally stable (max Re λ = " +
                               std::to_string(s.max_real_part) + "); H2 norms are infinite");
  }
}

/// Relative disagreement tolerated between the two gramian routes.
inline constexpr double kGramianAgreement = 1e-6;

inline void CheckGramianAgreement(double obs, double ctrl, const char* what) {
  const double scale = std::max({std::abs(obs), std::abs(ctrl), 1e-300});
  if (std::abs(obs - ctrl) > kGramianAgreement * scale) {
    throw NumericalError(std::string(what) + ": gramian routes disagree (" +
                         std::to_string(obs) + " vs " + std::to_string(ctrl) + ")");
  }
}

/// ‖C(sI − A)⁻¹B‖₂² for a SISO triple, from both gramians.
inline double H2NormSquared(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (b.cols() != 1 || c.rows() != 1) {
    throw std::invalid_argument("H2NormSquared: expects a SISO triple");
  }
  RequireHurwitz(a, "H2NormSquared");
  const Matrix p = SolveLyapunov(a.transpose(), c.transpose() * c);
  const Matrix w = SolveLyapunov(a, b * b.transpose());
  const double obs = (b.transpose() * p * b)(0, 0);
  const double ctrl = (c * w * c.transpose())(0, 0);
  CheckGramianAgreement(obs, ctrl, "H2NormSquared");
  return obs;
}

inline double H2NormSquared(const StateSpace& sys) {
  if (!sys.strictly_proper()) throw std::invalid_argument("H2NormSquared: D must be zero");
  return H2NormSquared(sys.A(), sys.B(), sys.C());
}

/// G̃ᵢⱼ = ‖Cᵢ(sI − A)⁻¹Bⱼ‖₂². A ⊕ A is factored once for all columns.
inline Matrix BuildGTilde(const StateSpace& nominal) {
  const Eigen::Index m = nominal.inputs();
  if (nominal.outputs() != m) throw std::invalid_argument("BuildGTilde: need square loop");
  const Matrix& a = nominal.A();
  RequireHurwitz(a, "BuildGTilde (internal stability is required)");
  const Eigen::Index n = a.rows();
  Matrix g = Matrix::Zero(m, m);
  if (n == 0 || m == 0) return g;
  const auto ctrl_lu = KronSum(a, a).partialPivLu();
  const auto obs_lu = KronSum(a.transpose(), a.transpose()).partialPivLu();
  const Matrix& b = nominal.B();
  const Matrix& c = nominal.C();
  for (Eigen::Index j = 0; j < m; ++j) {
    const Matrix w = Symmetrize(Unvec(ctrl_lu.solve(-Vec(b.col(j) * b.col(j).transpose())), n, n));
    for (Eigen::Index i = 0; i < m; ++i) g(i, j) = c.row(i) * w * c.row(i).transpose();
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const Matrix p = Symmetrize(Unvec(obs_lu.solve(-Vec(c.row(i).transpose() * c.row(i))), n, n));
    for (Eigen::Index j = 0; j < m; ++j) {
      const double obs = b.col(j).dot(p * b.col(j));
      const double scale = std::max({std::abs(obs), std::abs(g(i, j)), g.cwiseAbs().maxCoeff()});
      if (std::abs(obs - g(i, j)) > kGramianAgreement * std::max(scale, 1e-300)) {
        throw NumericalError("BuildGTilde: gramian routes disagree at (" + std::to_string(i) +
                             "," + std::to_string(j) + ")");
      }
    }
  }
  // Round-off can leave tiny negatives where the transfer is structurally 0.
  return g.cwiseMax(0.0);
}

inline Matrix BuildGTilde(const Interconnection& ic) { return BuildGTilde(ic.nominal()); }

/// Max row sum of θ⁻² G̃ θ², i.e. the squared MS norm of θ⁻¹𝔾θ.
inline double ScaledMsNorm(const Matrix& g_tilde, const Vector& theta) {
  if (g_tilde.rows() == 0) return 0.0;
  const Vector t2 = theta.cwiseAbs2();
  return ((g_tilde * t2).array() / t2.array()).maxCoeff();
}

struct MsReport {
  Matrix g_tilde;
  Vector sigma_sq;
  double spectral_radius = 0.0;
  double critical_variance = std::numeric_limits<double>::infinity();
  Verdict verdict = Verdict::kStable;
  bool irreducible = true;
  std::optional<Vector> theta;
};

/// Stable iff ρ(G̃Σ̃) < 1.
inline MsReport StabilityBySpectralRadius(const Interconnection& ic) {
  MsReport r;
  r.g_tilde = BuildGTilde(ic);
  const Eigen::Index m = ic.channels();
  r.sigma_sq = Vector(m);
  for (Eigen::Index l = 0; l < m; ++l) r.sigma_sq(l) = ic.sigmas()[l] * ic.sigmas()[l];
  r.spectral_radius = SpectralRadiusNonneg(r.g_tilde * r.sigma_sq.asDiagonal()).radius;
  r.verdict = ClassifyMaxRealPart(r.spectral_radius - 1.0);
  const PerronResult perron = SpectralRadiusNonneg(r.g_tilde);
  r.critical_variance = perron.radius > 0 ? 1.0 / perron.radius
                                          : std::numeric_limits<double>::infinity();
  r.irreducible = perron.irreducible;
  if (perron.vector && (perron.vector->array() > 0).all()) {
    r.theta = perron.vector->cwiseSqrt();
  }
  return r;
}

struct NormLmiSolution {
  Matrix p;
  Matrix s;
  double gamma = 0.0;
  Vector theta;
  sdp::Status status = sdp::Status::kMaxIterations;
  std::vector<sdp::ConstraintMargin> margins;
};

/// inf γ over (𝒫, 𝒮) with
///   [[Aᵀ𝒫 + 𝒫A, 𝒫Bθ], [θBᵀ𝒫, −I]] ≺ 0,  [[θ𝒮θ, C], [Cᵀ, 𝒫]] ≻ 0,  𝒮ℓℓ < γ.
inline NormLmiSolution MsNormByLmi(const StateSpace& nominal, const Vector& theta,
                                   const sdp::Options& opt = {}) {
  const Eigen::Index n = nominal.states(), m = nominal.inputs();
  if (nominal.outputs() != m) throw std::invalid_argument("MsNormByLmi: need square loop");
  if (theta.size() != m || (theta.array() <= 0).any()) {
    throw std::invalid_argument("MsNormByLmi: theta must hold " + std::to_string(m) +
                                " positive entries");
  }
  RequireHurwitz(nominal.A(), "MsNormByLmi");
  const Matrix& a = nominal.A();
  const Matrix th = theta.asDiagonal();
  const Matrix bth = nominal.B() * th;

  sdp::Problem prob;
  auto P = prob.Symmetric("P", n);
  auto S = prob.Symmetric("S", m);
  auto g = prob.Scalar("gamma");
  const sdp::Expr pe = prob(P);
  const sdp::Expr pb = pe * bth;
  prob.AddLmi("dissipation",
              sdp::Expr::Blocks({{Matrix(a.transpose()) * pe + pe * a, pb},
                                 {pb.transpose(), sdp::Expr(Matrix(-Matrix::Identity(m, m)))}}),
              sdp::Sense::kNegativeDefinite);
  const sdp::Expr ce(nominal.C());
  prob.AddLmi("output", sdp::Expr::Blocks({{th * prob(S) * th, ce}, {ce.transpose(), pe}}),
              sdp::Sense::kPositiveDefinite);
  for (Eigen::Index l = 0; l < m; ++l) {
    prob.AddLmi("S" + std::to_string(l) + " < gamma", prob(g) - prob(S).entry(l, l),
                sdp::Sense::kPositiveDefinite);
  }
  prob.Minimize(prob(g));
  const auto sol = prob.SolveMinimize(opt);
  if (sol.status == sdp::Status::kInfeasible) {
    throw NumericalError("MsNormByLmi: LMI infeasible for a Hurwitz loop (internal inconsistency)");
  }
  NormLmiSolution out;
  out.status = sol.status;
  out.p = prob.Value(P, sol);
  out.s = prob.Value(S, sol);
  out.gamma = sol.objective;
  out.theta = theta;
  out.margins = prob.Check(sol.x);
  return out;
}

struct ScalingResult {
  /// Perron scaling; absent when G̃ is reducible and the infimum is not
  /// attained.
  std::optional<Vector> theta;
  double gamma_star = 0.0;
  bool attained = true;
};

/// inf over positive diagonal θ of ‖θ⁻¹𝔾θ‖²_MS, which equals ρ(G̃).
inline ScalingResult InfimizeScaling(const StateSpace& nominal) {
  const Matrix g = BuildGTilde(nominal);
  ScalingResult r;
  if (g.rows() == 0) {
    r.theta = Vector(0);
    return r;
  }
  const PerronResult perron = SpectralRadiusNonneg(g);
  r.gamma_star = perron.radius;
  if (perron.vector && (perron.vector->array() > 0).all()) {
    Vector t = perron.vector->cwiseSqrt();
    r.theta = t / t.maxCoeff();
  } else {
    r.attained = false;
  }
  return r;
}

struct DualResult {
  bool feasible = false;
  Matrix q;
  Vector alpha;
  sdp::Status status = sdp::Status::kMaxIterations;
  double margin_bound = 0.0;
};

/// Dual certificate: 𝒬 ≻ 0, αℓ > σℓ² Cℓ𝒬Cℓᵀ, A𝒬 + 𝒬Aᵀ + Σ Bℓ αℓ Bℓᵀ ≺ 0.
/// Posed with unit margins, which is equivalent by homogeneity.
inline DualResult DualFeasibility(const Interconnection& ic, const sdp::Options& opt = {}) {
  const Eigen::Index n = ic.states(), m = ic.channels();
  DualResult out;
  if (n == 0) {
    out.feasible = true;
    out.status = sdp::Status::kFeasible;
    return out;
  }
  const Matrix& a = ic.nominal().A();
  const Matrix eye = Matrix::Identity(n, n);
  sdp::Problem prob;
  auto Q = prob.Symmetric("Q", n);
  const sdp::Expr qe = prob(Q);
  sdp::Expr flow = a * qe + qe * Matrix(a.transpose()) + eye;
  std::optional<sdp::Var> alpha;
  if (m > 0) {
    alpha = prob.Diagonal("alpha", m);
    flow += ic.nominal().B() * prob(*alpha) * Matrix(ic.nominal().B().transpose());
  }
  prob.AddLmi("Q >= I", qe - eye, sdp::Sense::kPositiveDefinite, false);
  for (Eigen::Index l = 0; l < m; ++l) {
    const double s2 = ic.sigmas()[l] * ic.sigmas()[l];
    const Matrix cl = ic.row(l);
    prob.AddLmi("alpha" + std::to_string(l),
                prob(*alpha).entry(l, l) - s2 * (cl * qe * Matrix(cl.transpose())) -
                    Matrix::Ones(1, 1),
                sdp::Sense::kPositiveDefinite, false);
  }
  prob.AddLmi("flow <= -I", flow, sdp::Sense::kNegativeDefinite, false);
  const auto sol = prob.SolveFeasibility(opt);
  out.status = sol.status;
  out.margin_bound = sol.margin_upper_bound;
  out.q = prob.Value(Q, sol);
  out.alpha = alpha ? Vector(prob.Value(*alpha, sol).diagonal()) : Vector(0);
  out.feasible = sol.status == sdp::Status::kFeasible;
  return out;
}

}  // namespace msslab

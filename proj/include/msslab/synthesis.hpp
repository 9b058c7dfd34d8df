#pragma once

// Output-feedback synthesis against multiplicative channel noise, the D-K
// alternation over channel scalings, and the single-input limit on the
// tolerable input-channel noise.

#include <msslab/linalg.hpp>
#include <msslab/model.hpp>
#include <msslab/moments.hpp>
#include <msslab/msnorm.hpp>
#include <msslab/sdp.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace msslab {

class SynthesisInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PBH test on the modes with Re λ ≥ −1e-9: rank [λI − A, B] = n.
inline bool IsStabilizable(const Matrix& a, const Matrix& b) {
  const Eigen::Index n = a.rows();
  if (n == 0) return true;
  const double scale = std::max(1.0, std::max(a.norm(), b.norm()));
  for (const Complex& l : Eigenvalues(a).eigenvalues) {
    if (l.real() < -kMarginalBand) continue;
    Eigen::MatrixXcd pbh(n, n + b.cols());
    pbh.leftCols(n) = l * Eigen::MatrixXcd::Identity(n, n) - a.cast<Complex>();
    pbh.rightCols(b.cols()) = b.cast<Complex>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pbh);
    if (svd.singularValues()(n - 1) <= 1e-10 * scale) return false;
  }
  return true;
}

inline bool IsDetectable(const Matrix& a, const Matrix& c) {
  return IsStabilizable(a.transpose(), c.transpose());
}

struct SynthesisOptions {
  sdp::Options sdp;
};

struct SynthesisResult {
  // LMI variables.
  Matrix x, y, s, a_hat, b_hat, c_hat;
  double gamma = 0.0;
  Vector theta;
  // Reconstruction.
  StateSpace controller;
  Matrix m, n;
  bool n_perturbed = false;
  double reconstruction_residual = 0.0;
  double cond_m = 0.0, cond_n = 0.0;
  // Validation on the reassembled loop.
  Verdict closed_loop_verdict = Verdict::kUnstable;
  double recomputed_gamma = 0.0;
  double achieved_critical_variance = 0.0;
  Matrix g_tilde;
  sdp::Status status = sdp::Status::kMaxIterations;
  int newton_steps = 0;
};

namespace detail {

struct PlantData {
  Eigen::Index n, d, q, m;
  Matrix ap, bp, cp, li, lo;
};

inline PlantData Prepare(const StateSpace& plant, const ChannelSet& channels) {
  if (!plant.strictly_proper()) {
    throw std::invalid_argument(
        "synthesis: plant must be strictly proper; feedthrough multiplies the input and output "
        "white noise processes");
  }
  channels.Validate(plant.inputs(), plant.outputs());
  PlantData p{plant.states(), plant.inputs(), plant.outputs(), plant.inputs() + plant.outputs(),
              plant.A(), plant.B(), plant.C(), channels.input_means.asDiagonal(),
              channels.output_means.asDiagonal()};
  if (!IsStabilizable(p.ap, p.bp * p.li)) {
    throw std::invalid_argument("synthesis: (A_p, B_p Λ_I) is not stabilizable");
  }
  if (!IsDetectable(p.ap, p.lo * p.cp)) {
    throw std::invalid_argument("synthesis: (A_p, Λ_O C_p) is not detectable");
  }
  return p;
}

// Selectors splitting channel space (outputs first, then inputs).
inline Matrix OutputRows(const PlantData& p) {
  Matrix e = Matrix::Zero(p.q, p.m);
  e.leftCols(p.q).setIdentity();
  return e;
}
inline Matrix InputRows(const PlantData& p) {
  Matrix e = Matrix::Zero(p.d, p.m);
  e.rightCols(p.d).setIdentity();
  return e;
}

}  // namespace detail

/// Minimises γ over (X, Y, S, Â, B̂, Ĉ) at fixed θ and rebuilds the
/// controller from the optimiser.
inline SynthesisResult Synthesize(const StateSpace& plant, const ChannelSet& channels,
                                  const Vector& theta, const SynthesisOptions& opt = {}) {
  const detail::PlantData p = detail::Prepare(plant, channels);
  if (theta.size() != p.m || (theta.array() <= 0).any()) {
    throw std::invalid_argument("Synthesize: theta must hold " + std::to_string(p.m) +
                                " positive entries");
  }
  const Matrix th = theta.asDiagonal();
  const Matrix eo = detail::OutputRows(p) * th;  // q×m
  const Matrix ei = detail::InputRows(p) * th;   // d×m
  const Matrix fo = detail::OutputRows(p).transpose();
  const Matrix fi = detail::InputRows(p).transpose();
  const Eigen::Index n = p.n, m = p.m;
  const Matrix eye = Matrix::Identity(n, n);

  sdp::Problem prob;
  auto X = prob.Symmetric("X", n);
  auto Y = prob.Symmetric("Y", n);
  auto S = prob.Symmetric("S", m);
  auto Ah = prob.Full("Ahat", n, n);
  auto Bh = prob.Full("Bhat", n, p.q);
  auto Ch = prob.Full("Chat", p.d, n);
  auto g = prob.Scalar("gamma");
  const sdp::Expr xe = prob(X), ye = prob(Y), ahe = prob(Ah), bhe = prob(Bh), che = prob(Ch);

  const sdp::Expr l1 = sdp::Sym(p.ap * xe + Matrix(p.bp * p.li) * che);
  const sdp::Expr l2 = sdp::Sym(ye * p.ap + bhe * Matrix(p.lo * p.cp));
  const sdp::Expr off = ahe.transpose() + p.ap;
  const sdp::Expr top = sdp::Expr(Matrix(p.bp * ei));
  const sdp::Expr mid = bhe * eo + ye * Matrix(p.bp * ei);
  prob.AddLmi("dissipation",
              sdp::Expr::Blocks({{l1, off, top},
                                 {off.transpose(), l2, mid},
                                 {top.transpose(), mid.transpose(),
                                  sdp::Expr(Matrix(-Matrix::Identity(m, m)))}}),
              sdp::Sense::kNegativeDefinite);
  const sdp::Expr r1 = Matrix(fo * p.cp) * xe + fi * che;
  const sdp::Expr r2(Matrix(fo * p.cp));
  prob.AddLmi("output",
              sdp::Expr::Blocks({{th * prob(S) * th, r1, r2},
                                 {r1.transpose(), xe, sdp::Expr(eye)},
                                 {r2.transpose(), sdp::Expr(eye), ye}}),
              sdp::Sense::kPositiveDefinite);
  for (Eigen::Index l = 0; l < m; ++l) {
    prob.AddLmi("S" + std::to_string(l) + " < gamma", prob(g) - prob(S).entry(l, l),
                sdp::Sense::kPositiveDefinite);
  }
  prob.Minimize(prob(g));
  // An iterate pinned at the ball edge means the optimum lies further out.
  sdp::Options so = opt.sdp;
  sdp::Solution sol = prob.SolveMinimize(so);
  while (sol.status == sdp::Status::kUnbounded && so.ball_radius < 1e10) {
    so.ball_radius *= 100.0;
    sol = prob.SolveMinimize(so);
  }
  if (sol.status == sdp::Status::kInfeasible) {
    throw SynthesisInfeasible(
        "Synthesize: no internally stabilizing strictly proper controller found at this theta "
        "(phase-one margin bound " + std::to_string(sol.margin_upper_bound) + ")");
  }
  // Still kUnbounded: the infimum is approached only as the variables grow;
  // the iterate is strictly feasible and goes through the same checks.
  if (!(sol.status == sdp::Status::kOptimal || sol.status == sdp::Status::kMaxIterations ||
        sol.status == sdp::Status::kUnbounded)) {
    throw NumericalError(std::string("Synthesize: solver returned ") + sdp::to_string(sol.status));
  }

  SynthesisResult r;
  r.status = sol.status;
  r.newton_steps = sol.newton_steps;
  r.theta = theta;
  r.x = prob.Value(X, sol);
  r.y = prob.Value(Y, sol);
  r.s = prob.Value(S, sol);
  r.a_hat = prob.Value(Ah, sol);
  r.b_hat = prob.Value(Bh, sol);
  r.c_hat = prob.Value(Ch, sol);
  r.gamma = sol.objective;

  // N Nᵀ = Y − X⁻¹, N Mᵀ = I − Y X.
  Matrix gap = Symmetrize(r.y - r.x.inverse());
  const double lmin = MinEigenvalueSym(gap);
  if (lmin <= 1e-8) {
    if (lmin <= -1e-8) {
      throw NumericalError("Synthesize: Y - X^-1 is indefinite (min eigenvalue " +
                           std::to_string(lmin) + ")");
    }
    gap.diagonal().array() += 1e-8 + std::max(0.0, -lmin);
    r.n_perturbed = true;
  }
  const auto nfac = CholeskyPsd(gap);
  if (!nfac) throw NumericalError("Synthesize: Y - X^-1 is singular after perturbation");
  r.n = *nfac;
  const Matrix target = eye - r.y * r.x;
  const auto n_lu = r.n.partialPivLu();
  const Matrix mt = n_lu.solve(target);
  r.m = mt.transpose();
  r.reconstruction_residual =
      (r.n * mt - target).norm() / std::max(target.norm(), std::numeric_limits<double>::min());
  r.cond_m = ConditionNumber(r.m);
  r.cond_n = ConditionNumber(r.n);

  // Right division by Mᵀ: Z M⁻ᵀ = (M⁻¹ Zᵀ)ᵀ.
  const auto m_lu = r.m.partialPivLu();
  auto right_div = [&](const Matrix& z) -> Matrix {
    return m_lu.solve(z.transpose()).transpose();
  };
  const Matrix ck = right_div(r.c_hat);
  const Matrix bk = n_lu.solve(r.b_hat);
  const Matrix inner = r.a_hat - r.y * p.ap * r.x - r.b_hat * p.lo * p.cp * r.x -
                       r.y * p.bp * p.li * r.c_hat;
  const Matrix ak = n_lu.solve(right_div(inner));
  r.controller = StateSpace(ak, bk, ck);

  const Interconnection loop = AssembleNominal(plant, r.controller, channels);
  r.closed_loop_verdict = Eigenvalues(loop.nominal().A()).hurwitz();
  if (r.closed_loop_verdict == Verdict::kStable) {
    r.g_tilde = BuildGTilde(loop);
    r.recomputed_gamma = ScaledMsNorm(r.g_tilde, theta);
    const double rho = SpectralRadiusNonneg(r.g_tilde).radius;
    r.achieved_critical_variance = rho > 0 ? 1.0 / rho : std::numeric_limits<double>::infinity();
  } else {
    r.recomputed_gamma = std::numeric_limits<double>::infinity();
    r.achieved_critical_variance = 0.0;
  }
  return r;
}

inline SynthesisResult Synthesize(const StateSpace& plant, const ChannelSet& channels,
                                  const SynthesisOptions& opt = {}) {
  return Synthesize(plant, channels, Vector::Ones(plant.inputs() + plant.outputs()), opt);
}

struct DkResult {
  SynthesisResult best;
  std::vector<double> gamma_history;
  std::vector<Vector> theta_history;
  std::optional<std::string> warning;
};

/// D-step at a fixed K-step optimiser: minimises max_ℓ Vℓℓ/Φℓ over Φ = θ²
/// subject to L + MΦMᵀ ⪯ δI, where V = R Z⁻¹ Rᵀ is the Schur complement of
/// the output block. Returns the new θ or nullopt when infeasible.
inline std::optional<Vector> DStep(const StateSpace& plant, const ChannelSet& channels,
                                   const SynthesisResult& k, const SynthesisOptions& opt = {},
                                   double* gamma_out = nullptr) {
  const detail::PlantData p = detail::Prepare(plant, channels);
  const Eigen::Index n = p.n, m = p.m;
  const Matrix eye = Matrix::Identity(n, n);
  const Matrix l1 = Symmetrize(2.0 * (p.ap * k.x + p.bp * p.li * k.c_hat));
  const Matrix l2 = Symmetrize(2.0 * (k.y * p.ap + k.b_hat * p.lo * p.cp));
  Matrix lmat(2 * n, 2 * n);
  lmat << l1, k.a_hat.transpose() + p.ap, k.a_hat + p.ap.transpose(), l2;
  Matrix mmat = Matrix::Zero(2 * n, m);
  mmat.block(0, p.q, n, p.d) = p.bp;
  mmat.block(n, 0, n, p.q) = k.b_hat;
  mmat.block(n, p.q, n, p.d) = k.y * p.bp;
  Matrix rmat = Matrix::Zero(m, 2 * n);
  rmat.block(0, 0, p.q, n) = p.cp * k.x;
  rmat.block(0, n, p.q, n) = p.cp;
  rmat.block(p.q, 0, p.d, n) = k.c_hat;
  Matrix zmat(2 * n, 2 * n);
  zmat << k.x, eye, eye, k.y;
  const Matrix v = rmat * zmat.ldlt().solve(rmat.transpose());

  sdp::Problem prob;
  auto Phi = prob.Diagonal("Phi", m);
  auto g = prob.Scalar("gamma");
  // The K-step optimiser sits on the boundary of this constraint, so it is
  // relaxed by δ; the following K-step re-certifies the new θ.
  const double delta = 1e-6 * std::max(1.0, lmat.norm());
  prob.AddLmi("dissipation",
              sdp::Expr(Matrix(lmat - delta * Matrix::Identity(2 * n, 2 * n))) +
                  mmat * prob(Phi) * Matrix(mmat.transpose()),
              sdp::Sense::kNegativeDefinite, false);
  for (Eigen::Index l = 0; l < m; ++l) {
    const double root = std::sqrt(std::max(0.0, v(l, l)));
    const sdp::Expr cell = sdp::Expr::Blocks(
        {{prob(g), sdp::Expr(Matrix::Constant(1, 1, root))},
         {sdp::Expr(Matrix::Constant(1, 1, root)), prob(Phi).entry(l, l)}});
    prob.AddLmi("ratio" + std::to_string(l), cell, sdp::Sense::kPositiveDefinite);
  }
  prob.SetInitial(Phi, Matrix(k.theta.cwiseAbs2().asDiagonal()));
  prob.Minimize(prob(g));
  const auto sol = prob.SolveMinimize(opt.sdp);
  // Still kUnbounded: the infimum is approached only as the variables grow;
  // the iterate is strictly feasible and goes through the same checks.
  if (!(sol.status == sdp::Status::kOptimal || sol.status == sdp::Status::kMaxIterations ||
        sol.status == sdp::Status::kUnbounded)) {
    return std::nullopt;
  }
  if (gamma_out) *gamma_out = sol.objective;
  const Vector phi = prob.Value(Phi, sol).diagonal();
  if ((phi.array() <= 0).any()) return std::nullopt;
  return Vector(phi.cwiseSqrt());
}

/// Alternates K-steps and D-steps starting from θ = I. `max_rounds` counts
/// D-steps; zero reproduces Synthesize at θ = I.
inline DkResult DkIterate(const StateSpace& plant, const ChannelSet& channels, int max_rounds,
                          const SynthesisOptions& opt = {}) {
  DkResult out;
  SynthesisResult current = Synthesize(plant, channels, opt);
  out.gamma_history.push_back(current.gamma);
  out.theta_history.push_back(current.theta);
  out.best = current;
  for (int round = 0; round < max_rounds; ++round) {
    const auto theta = DStep(plant, channels, current, opt);
    if (!theta) {
      out.warning = "D-step infeasible in round " + std::to_string(round + 1) +
                    "; returning best controller so far";
      break;
    }
    try {
      current = Synthesize(plant, channels, *theta, opt);
    } catch (const std::exception& e) {
      out.warning = std::string("K-step failed in round ") + std::to_string(round + 1) + ": " +
                    e.what();
      break;
    }
    const double prev = out.gamma_history.back();
    out.gamma_history.push_back(current.gamma);
    out.theta_history.push_back(current.theta);
    if (current.gamma < out.best.gamma) out.best = current;
    if ((prev - current.gamma) < 1e-4 * std::abs(prev)) break;
  }
  return out;
}

struct LimitReport {
  double mean_gain = 1.0;
  double unstable_eig_sum = 0.0;
  double sigma_star = std::numeric_limits<double>::infinity();
  std::optional<double> queried_sigma;
  std::optional<bool> stabilizable;
};

/// σ* = |μ| / √(2 Σ Re λᵢ) over the unstable eigenvalues of A_o.
inline LimitReport FundamentalLimit(const Matrix& ao, double mu,
                                    std::optional<double> sigma = std::nullopt) {
  if (mu == 0.0) throw std::invalid_argument("FundamentalLimit: mean gain must be nonzero");
  LimitReport r;
  r.mean_gain = mu;
  for (const Complex& l : Eigenvalues(ao).eigenvalues) {
    if (l.real() > kMarginalBand) r.unstable_eig_sum += l.real();
  }
  if (r.unstable_eig_sum > 0) r.sigma_star = std::abs(mu) / std::sqrt(2.0 * r.unstable_eig_sum);
  if (sigma) {
    r.queried_sigma = sigma;
    r.stabilizable = 2.0 * (*sigma) * (*sigma) / (mu * mu) * r.unstable_eig_sum < 1.0;
  }
  return r;
}

struct StateFeedback {
  Matrix k;  // 1×n, u = K x
  Matrix p;  // stabilising Riccati solution (PSD)
  double residual = 0.0;
};

namespace detail {

// Matrix sign function by the scaled Newton iteration.
inline Matrix MatrixSign(Matrix z) {
  const Eigen::Index n = z.rows();
  for (int it = 0; it < 100; ++it) {
    const auto lu = z.partialPivLu();
    const double det = std::abs(lu.determinant());
    const double c = det > 0 && std::isfinite(det) ? std::pow(det, -1.0 / n) : 1.0;
    const Matrix next = 0.5 * (c * z + lu.inverse() / c);
    const double change = (next - z).norm();
    z = next;
    if (change <= 1e-13 * z.norm()) break;
  }
  return z;
}

}  // namespace detail

/// Stabilising solution of A_oᵀP + PA_o − μ²PBBᵀP = 0 from the stable
/// invariant subspace of [[A_o, −μ²BBᵀ], [0, −A_oᵀ]], polished by Newton
/// (Kleinman) steps. Returns K = −μBᵀP.
inline StateFeedback OptimalStateFeedback(const Matrix& ao, const Matrix& b, double mu) {
  const Eigen::Index n = ao.rows();
  if (b.rows() != n || b.cols() != 1) {
    throw std::invalid_argument("OptimalStateFeedback: B must be a single column with " +
                                std::to_string(n) + " rows");
  }
  if (mu == 0.0) throw std::invalid_argument("OptimalStateFeedback: mean gain must be nonzero");
  for (const Complex& l : Eigenvalues(ao).eigenvalues) {
    if (std::abs(l.real()) <= kMarginalBand) {
      throw MarginalSpectrumError(
          "OptimalStateFeedback: A_o has an eigenvalue on the imaginary axis; no stabilising "
          "Riccati solution exists");
    }
  }
  if (!IsStabilizable(ao, b)) {
    throw std::invalid_argument("OptimalStateFeedback: (A_o, B) is not stabilizable");
  }
  const Matrix rmat = mu * mu * b * b.transpose();
  Matrix ham = Matrix::Zero(2 * n, 2 * n);
  ham.topLeftCorner(n, n) = ao;
  ham.topRightCorner(n, n) = -rmat;
  ham.bottomRightCorner(n, n) = -ao.transpose();
  const Matrix w = detail::MatrixSign(ham);
  Matrix lhs(2 * n, n), rhs(2 * n, n);
  lhs << w.topRightCorner(n, n), w.bottomRightCorner(n, n) + Matrix::Identity(n, n);
  rhs << w.topLeftCorner(n, n) + Matrix::Identity(n, n), w.bottomLeftCorner(n, n);
  Matrix p = Symmetrize(-lhs.colPivHouseholderQr().solve(rhs));

  auto residual = [&](const Matrix& x) {
    return (ao.transpose() * x + x * ao - x * rmat * x).norm();
  };
  auto scale = [&](const Matrix& x) {
    return std::max(1.0, 2.0 * (ao.transpose() * x).norm() + (x * rmat * x).norm());
  };
  double res = residual(p);
  for (int it = 0; it < 20 && res > 1e-12 * scale(p); ++it) {
    const Matrix acl = ao - rmat * p;
    if (Eigenvalues(acl).hurwitz() != Verdict::kStable) break;
    const Matrix next = SolveLyapunov(acl.transpose(), p * rmat * p);
    const double next_res = residual(next);
    if (!(next_res < res)) break;
    p = next;
    res = next_res;
  }
  if (res > 1e-10 * scale(p)) {
    throw NumericalError("OptimalStateFeedback: Riccati residual " + std::to_string(res) +
                         " above tolerance");
  }
  StateFeedback out;
  out.p = p;
  out.k = -mu * b.transpose() * p;
  out.residual = res;
  if (Eigenvalues(ao + mu * b * out.k).hurwitz() != Verdict::kStable) {
    throw NumericalError("OptimalStateFeedback: Riccati solution is not stabilising");
  }
  return out;
}

/// The state-feedback loop dx = (A_o + μBK)x dt + σBKx dΔ as a one-channel
/// interconnection.
inline Interconnection StateFeedbackLoop(const Matrix& ao, const Matrix& b, double mu,
                                         const Matrix& k, double sigma) {
  return DirectLoop(StateSpace(ao + mu * b * k, b, k), {sigma});
}

}  // namespace msslab

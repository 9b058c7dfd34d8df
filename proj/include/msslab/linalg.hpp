#pragma once

// Dense small-matrix kernel: spectra, Kronecker algebra, Lyapunov solves,
// Cholesky and transmission zeros for systems up to a few dozen states.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace msslab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

/// Raised when an iterative kernel fails or a numerical self-check trips.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by Lyapunov solves when A ⊕ A is singular (eigenvalue pairs
/// summing to zero).
class MarginalSpectrumError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Three-way stability classification shared by every Hurwitz-style test.
enum class Verdict { kStable, kMarginal, kUnstable };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kStable:
      return "stable";
    case Verdict::kMarginal:
      return "marginal";
    case Verdict::kUnstable:
      return "unstable";
  }
  return "unknown";
}

/// Real parts within this band of zero are reported as marginal.
inline constexpr double kMarginalBand = 1e-9;

inline Verdict ClassifyMaxRealPart(double max_real, double band = kMarginalBand) {
  if (max_real < -band) return Verdict::kStable;
  if (max_real > band) return Verdict::kUnstable;
  return Verdict::kMarginal;
}

struct Spectrum {
  std::vector<Complex> eigenvalues;
  double max_real_part = -std::numeric_limits<double>::infinity();

  Verdict hurwitz(double band = kMarginalBand) const {
    return ClassifyMaxRealPart(max_real_part, band);
  }
};

namespace detail {

inline void RequireSquare(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(what) + ": matrix must be square, got " +
                                std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
}

inline void RequireFinite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

inline bool ComplexLess(const Complex& a, const Complex& b) {
  if (a.real() != b.real()) return a.real() < b.real();
  return a.imag() < b.imag();
}

}  // namespace detail

/// All eigenvalues of a square real matrix (Hessenberg reduction followed by
/// shifted Francis QR). Sorted by real part, then imaginary part.
inline Spectrum Eigenvalues(const Matrix& m) {
  detail::RequireSquare(m, "Eigenvalues");
  detail::RequireFinite(m, "Eigenvalues");
  Spectrum s;
  if (m.rows() == 0) return s;
  Eigen::EigenSolver<Matrix> solver;
  // Sweep cap of 100 iterations per row.
  solver.setMaxIterations(100 * m.rows());
  solver.compute(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("Eigenvalues: QR iteration did not converge");
  }
  const auto& ev = solver.eigenvalues();
  s.eigenvalues.reserve(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    s.eigenvalues.push_back(ev(i));
    s.max_real_part = std::max(s.max_real_part, ev(i).real());
  }
  std::sort(s.eigenvalues.begin(), s.eigenvalues.end(), detail::ComplexLess);
  return s;
}

inline Matrix Kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// a ⊕ b = a ⊗ I + I ⊗ b.
inline Matrix KronSum(const Matrix& a, const Matrix& b) {
  detail::RequireSquare(a, "KronSum");
  detail::RequireSquare(b, "KronSum");
  return Kron(a, Matrix::Identity(b.rows(), b.rows())) +
         Kron(Matrix::Identity(a.rows(), a.rows()), b);
}

/// Column-stacking vectorization.
inline Vector Vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix Unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw std::invalid_argument("Unvec: size " + std::to_string(v.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Matrix Symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Solves a Q + Q aᵀ + rhs = 0 through the vectorized system
/// (a ⊕ a) vec(Q) = -vec(rhs). Intended for n up to ~30.
inline Matrix SolveLyapunov(const Matrix& a, const Matrix& rhs) {
  detail::RequireSquare(a, "SolveLyapunov");
  detail::RequireSquare(rhs, "SolveLyapunov");
  if (a.rows() != rhs.rows()) {
    throw std::invalid_argument("SolveLyapunov: a and rhs dimensions differ");
  }
  detail::RequireFinite(a, "SolveLyapunov");
  detail::RequireFinite(rhs, "SolveLyapunov");
  const Eigen::Index n = a.rows();
  if (n == 0) return Matrix(0, 0);

  const Spectrum spec = Eigenvalues(a);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  double closest = std::numeric_limits<double>::infinity();
  for (const auto& li : spec.eigenvalues) {
    for (const auto& lj : spec.eigenvalues) closest = std::min(closest, std::abs(li + lj));
  }
  if (closest <= 1e-12 * scale) {
    throw MarginalSpectrumError(
        "SolveLyapunov: marginal/resonant spectrum, a ⊕ a is singular");
  }
  const Matrix op = KronSum(a, a);
  const Vector sol = op.partialPivLu().solve(-Vec(rhs));
  return Symmetrize(Unvec(sol, n, n));
}

/// Result of a Perron-root computation on a nonnegative matrix.
struct PerronResult {
  double radius = 0.0;
  bool irreducible = false;
  /// Nonnegative right eigenvector normalised to unit 1-norm; present when
  /// the matrix is irreducible.
  std::optional<Vector> vector;
};

/// True when the directed graph of the nonzero pattern is strongly connected.
inline bool IsIrreducible(const Matrix& m, double zero_tol = 0.0) {
  const Eigen::Index n = m.rows();
  if (n <= 1) return true;
  auto reaches_all = [&](bool transpose) {
    std::vector<char> seen(n, 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const Eigen::Index i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = transpose ? m(j, i) : m(i, j);
        if (!seen[j] && w > zero_tol) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reaches_all(false) && reaches_all(true);
}

/// Perron root (spectral radius) of an elementwise nonnegative matrix.
inline PerronResult SpectralRadiusNonneg(const Matrix& m) {
  detail::RequireSquare(m, "SpectralRadiusNonneg");
  detail::RequireFinite(m, "SpectralRadiusNonneg");
  if ((m.array() < 0.0).any()) {
    throw std::invalid_argument("SpectralRadiusNonneg: negative entry");
  }
  PerronResult r;
  const Eigen::Index n = m.rows();
  if (n == 0) return r;
  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/true);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("SpectralRadiusNonneg: eigen-decomposition failed");
  }
  const auto& ev = solver.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    // Prefer the real eigenvalue among ties in modulus.
    const double ai = std::abs(ev(i)), ab = std::abs(ev(best));
    if (ai > ab * (1 + 1e-12) ||
        (ai >= ab * (1 - 1e-12) && std::abs(ev(i).imag()) < std::abs(ev(best).imag()))) {
      best = i;
    }
  }
  r.radius = std::abs(ev(best));
  r.irreducible = IsIrreducible(m);
  if (r.irreducible && r.radius > 0.0) {
    Vector v = solver.eigenvectors().col(best).real();
    if (v.sum() < 0) v = -v;
    v = v.cwiseMax(0.0);
    if (v.sum() > 0) r.vector = v / v.sum();
  }
  return r;
}

/// Lower Cholesky factor of a symmetric matrix, or nullopt when the matrix
/// is not positive definite beyond `eps` (relative to its largest entry).
inline std::optional<Matrix> CholeskyPsd(const Matrix& m, double eps = 1e-14) {
  detail::RequireSquare(m, "CholeskyPsd");
  if (!m.allFinite()) return std::nullopt;
  if (m.rows() == 0) return Matrix(0, 0);
  const Matrix sym = Symmetrize(m);
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Matrix l = llt.matrixL();
  const double floor = eps * std::max(1.0, sym.cwiseAbs().maxCoeff());
  if (l.diagonal().cwiseAbs2().minCoeff() <= floor) return std::nullopt;
  return l;
}

inline double MinEigenvalueSym(const Matrix& m) {
  if (m.rows() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Matrix> es(Symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double MaxEigenvalueSym(const Matrix& m) {
  if (m.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Matrix> es(Symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(m.rows() - 1);
}

inline double OperatorNorm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

inline double ConditionNumber(const Matrix& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  return smin == 0.0 ? std::numeric_limits<double>::infinity() : s(0) / smin;
}

inline Matrix BlockDiag(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

/// Finite generalized eigenvalues of the pencil (a, b); pairs (α, β) with
/// |β| ≤ beta_tol after normalising |α|² + |β|² = 1 are dropped as infinite.
inline std::vector<Complex> FiniteGeneralizedEigenvalues(const Matrix& a, const Matrix& b,
                                                         double beta_tol = 1e-10) {
  Eigen::GeneralizedEigenSolver<Matrix> ges;
  ges.compute(a, b, /*computeEigenvectors=*/false);
  if (ges.info() != Eigen::Success) {
    throw NumericalError("FiniteGeneralizedEigenvalues: QZ iteration did not converge");
  }
  std::vector<Complex> out;
  const auto alphas = ges.alphas();
  const auto betas = ges.betas();
  for (Eigen::Index i = 0; i < alphas.size(); ++i) {
    const double norm = std::hypot(std::abs(alphas(i)), std::abs(betas(i)));
    if (norm == 0.0) continue;  // singular pencil direction
    if (std::abs(betas(i)) / norm <= beta_tol) continue;
    out.push_back(alphas(i) / betas(i));
  }
  std::sort(out.begin(), out.end(), detail::ComplexLess);
  return out;
}

}  // namespace msslab

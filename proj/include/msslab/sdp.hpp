#pragma once

// Small dense semidefinite-program engine.
//
// Problems are stated over matrix-valued decision variables (symmetric,
// diagonal, scalar or unstructured) through affine expressions built from
// constant blocks, variable blocks, transposes and scalar multiples. Every
// LMI is compiled to the standard form G(x) = G0 + Σ xₖ Gₖ ≻ 0 and handed to
// a primal log-det barrier method with damped Newton centering. A max-margin
// phase (maximize s subject to G(x) − sI ≻ 0) either certifies feasibility
// or returns an upper bound on the best achievable margin.

#include <msslab/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msslab::sdp {

enum class Structure { kSymmetric, kDiagonal, kScalar, kFull };

/// Handle to a decision variable owned by a Problem.
struct Var {
  int id = -1;
};

struct Term {
  int var = -1;
  Matrix left;
  Matrix right;
  bool transposed = false;  // left · Vᵀ · right when set
};

/// Affine matrix expression: constant + Σ leftᵢ · Vᵢ(ᵀ) · rightᵢ.
class Expr {
 public:
  Expr() = default;
  Expr(Eigen::Index rows, Eigen::Index cols) : constant_(Matrix::Zero(rows, cols)) {}
  explicit Expr(Matrix constant) : constant_(std::move(constant)) {}

  static Expr Variable(int var, Eigen::Index rows, Eigen::Index cols) {
    Expr e(rows, cols);
    e.terms_.push_back({var, Matrix::Identity(rows, rows), Matrix::Identity(cols, cols), false});
    return e;
  }

  static Expr Zero(Eigen::Index rows, Eigen::Index cols) { return Expr(rows, cols); }
  static Expr Identity(Eigen::Index n) { return Expr(Matrix(Matrix::Identity(n, n))); }

  Eigen::Index rows() const { return constant_.rows(); }
  Eigen::Index cols() const { return constant_.cols(); }
  const Matrix& constant() const { return constant_; }
  const std::vector<Term>& terms() const { return terms_; }

  Expr transpose() const {
    Expr out(Matrix(constant_.transpose()));
    out.terms_.reserve(terms_.size());
    for (const auto& t : terms_) {
      out.terms_.push_back({t.var, t.right.transpose(), t.left.transpose(), !t.transposed});
    }
    return out;
  }

  /// 1×1 expression e_iᵀ · this · e_j.
  Expr entry(Eigen::Index i, Eigen::Index j) const {
    Matrix li = Matrix::Zero(1, rows());
    li(0, i) = 1.0;
    Matrix rj = Matrix::Zero(cols(), 1);
    rj(j, 0) = 1.0;
    return li * (*this) * rj;
  }

  Expr& operator+=(const Expr& o) {
    CheckSameShape(o, "+");
    constant_ += o.constant_;
    terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
    return *this;
  }
  Expr& operator-=(const Expr& o) { return *this += -o; }

  friend Expr operator-(const Expr& e) { return -1.0 * e; }
  friend Expr operator+(Expr a, const Expr& b) { return a += b; }
  friend Expr operator-(Expr a, const Expr& b) { return a -= b; }
  friend Expr operator+(Expr a, const Matrix& b) { return a += Expr(b); }
  friend Expr operator-(Expr a, const Matrix& b) { return a -= Expr(b); }

  friend Expr operator*(double s, const Expr& e) {
    Expr out(Matrix(s * e.constant_));
    out.terms_ = e.terms_;
    for (auto& t : out.terms_) t.left *= s;
    return out;
  }

  friend Expr operator*(const Matrix& m, const Expr& e) {
    if (m.cols() != e.rows()) throw std::invalid_argument("Expr: left product shape mismatch");
    Expr out(Matrix(m * e.constant_));
    out.terms_.reserve(e.terms_.size());
    for (const auto& t : e.terms_) out.terms_.push_back({t.var, m * t.left, t.right, t.transposed});
    return out;
  }

  friend Expr operator*(const Expr& e, const Matrix& m) {
    if (e.cols() != m.rows()) throw std::invalid_argument("Expr: right product shape mismatch");
    Expr out(Matrix(e.constant_ * m));
    out.terms_.reserve(e.terms_.size());
    for (const auto& t : e.terms_) out.terms_.push_back({t.var, t.left, t.right * m, t.transposed});
    return out;
  }

  /// Block matrix from a rectangular grid of expressions.
  static Expr Blocks(const std::vector<std::vector<Expr>>& grid) {
    if (grid.empty()) return Expr(0, 0);
    std::vector<Eigen::Index> heights, widths;
    for (const auto& row : grid) {
      if (row.size() != grid.front().size()) {
        throw std::invalid_argument("Expr::Blocks: ragged block grid");
      }
      heights.push_back(row.front().rows());
    }
    for (const auto& cell : grid.front()) widths.push_back(cell.cols());
    Eigen::Index total_r = 0, total_c = 0;
    for (auto h : heights) total_r += h;
    for (auto w : widths) total_c += w;
    Expr out(total_r, total_c);
    Eigen::Index ro = 0;
    for (size_t i = 0; i < grid.size(); ++i) {
      Eigen::Index co = 0;
      for (size_t j = 0; j < grid[i].size(); ++j) {
        const Expr& cell = grid[i][j];
        if (cell.rows() != heights[i] || cell.cols() != widths[j]) {
          throw std::invalid_argument("Expr::Blocks: block (" + std::to_string(i) + "," +
                                      std::to_string(j) + ") has inconsistent shape");
        }
        out.constant_.block(ro, co, cell.rows(), cell.cols()) = cell.constant_;
        for (const auto& t : cell.terms_) {
          Matrix left = Matrix::Zero(total_r, t.left.cols());
          left.middleRows(ro, t.left.rows()) = t.left;
          Matrix right = Matrix::Zero(t.right.rows(), total_c);
          right.middleCols(co, t.right.cols()) = t.right;
          out.terms_.push_back({t.var, std::move(left), std::move(right), t.transposed});
        }
        co += widths[j];
      }
      ro += heights[i];
    }
    return out;
  }

 private:
  void CheckSameShape(const Expr& o, const char* op) const {
    if (rows() != o.rows() || cols() != o.cols()) {
      throw std::invalid_argument(std::string("Expr: shape mismatch in '") + op + "' (" +
                                  std::to_string(rows()) + "x" + std::to_string(cols()) +
                                  " vs " + std::to_string(o.rows()) + "x" +
                                  std::to_string(o.cols()) + ")");
    }
  }

  Matrix constant_;
  std::vector<Term> terms_;
};

/// m scaled by a 1×1 expression s.
inline Expr Times(const Expr& s, const Matrix& m) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("Times: s must be 1x1");
  Expr out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (m.col(j).isZero(0.0)) continue;
    Matrix ej = Matrix::Zero(1, m.cols());
    ej(0, j) = 1.0;
    out += Matrix(m.col(j)) * s * ej;
  }
  return out;
}

/// e + eᵀ.
inline Expr Sym(const Expr& e) { return e + e.transpose(); }

enum class Sense { kNegativeDefinite, kPositiveDefinite };

enum class Status { kOptimal, kFeasible, kInfeasible, kMaxIterations, kUnbounded };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::kOptimal:
      return "optimal";
    case Status::kFeasible:
      return "feasible";
    case Status::kInfeasible:
      return "infeasible";
    case Status::kMaxIterations:
      return "maxIterations";
    case Status::kUnbounded:
      return "unbounded";
  }
  return "unknown";
}

/// Relative strictness margin applied to strict LMIs.
inline constexpr double kStrictness = 1e-9;

struct Options {
  int max_newton_steps = 200;
  /// Relative duality-gap target for minimization.
  double gap_tolerance = 1e-7;
  /// Relative accuracy of the maximised margin in feasibility mode.
  double margin_tolerance = 1e-6;
  /// Radius of the Euclidean ball that bounds all unknowns.
  double ball_radius = 1e6;
  double barrier_growth = 20.0;
  double centering_tolerance = 1e-7;
};

struct LogEntry {
  int iteration = 0;
  double objective = 0.0;
  double margin = 0.0;
  double barrier_weight = 0.0;
};

struct ConstraintMargin {
  std::string name;
  /// Smallest eigenvalue of the constraint in ≻ 0 orientation.
  double margin = 0.0;
  /// Margin the constraint must exceed (ε·scale for strict LMIs, 0 else).
  double required = 0.0;
  bool satisfied = false;
};

struct Solution {
  Status status = Status::kMaxIterations;
  Vector x;
  double objective = 0.0;
  /// Smallest margin over all constraints at x, relative to the strictness
  /// shift (positive means every LMI holds).
  double worst_margin = 0.0;
  /// Upper bound on the best achievable margin from the barrier gap; used
  /// as infeasibility evidence when negative.
  double margin_upper_bound = std::numeric_limits<double>::infinity();
  int newton_steps = 0;
  std::vector<LogEntry> log;

  bool ok() const { return status == Status::kOptimal || status == Status::kFeasible; }

  std::string LogCsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "iteration,objective,margin,barrier_weight\n";
    for (const auto& e : log) {
      os << e.iteration << ',' << e.objective << ',' << e.margin << ',' << e.barrier_weight
         << '\n';
    }
    return os.str();
  }
};

class Problem {
 public:
  Var AddVariable(std::string name, Structure structure, Eigen::Index rows,
                  Eigen::Index cols = -1) {
    if (cols < 0) cols = rows;
    if (structure == Structure::kScalar) rows = cols = 1;
    if ((structure == Structure::kSymmetric || structure == Structure::kDiagonal) &&
        rows != cols) {
      throw std::invalid_argument("Problem: symmetric/diagonal variables must be square");
    }
    VarInfo info{std::move(name), structure, rows, cols, unknowns_, 0};
    info.count = CountOf(info);
    unknowns_ += info.count;
    vars_.push_back(std::move(info));
    return Var{static_cast<int>(vars_.size()) - 1};
  }

  Var Symmetric(std::string name, Eigen::Index n) {
    return AddVariable(std::move(name), Structure::kSymmetric, n);
  }
  Var Diagonal(std::string name, Eigen::Index n) {
    return AddVariable(std::move(name), Structure::kDiagonal, n);
  }
  Var Scalar(std::string name) { return AddVariable(std::move(name), Structure::kScalar, 1); }
  Var Full(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return AddVariable(std::move(name), Structure::kFull, rows, cols);
  }

  Expr operator()(Var v) const {
    const auto& info = At(v);
    return Expr::Variable(v.id, info.rows, info.cols);
  }

  void AddLmi(std::string name, const Expr& e, Sense sense, bool strict = true) {
    if (e.rows() != e.cols()) {
      throw std::invalid_argument("Problem::AddLmi(" + name + "): expression must be square");
    }
    for (const auto& t : e.terms()) At(Var{t.var});
    const double scale = std::max(1.0, e.rows() ? e.constant().cwiseAbs().maxCoeff() : 0.0);
    constraints_.push_back({std::move(name), e, sense, strict, scale});
  }

  void Minimize(const Expr& objective) {
    if (objective.rows() != 1 || objective.cols() != 1) {
      throw std::invalid_argument("Problem::Minimize: objective must be 1x1");
    }
    objective_ = objective;
  }

  bool has_objective() const { return objective_.has_value(); }

  void SetInitial(Var v, const Matrix& value) {
    const auto& info = At(v);
    if (value.rows() != info.rows || value.cols() != info.cols) {
      throw std::invalid_argument("Problem::SetInitial: shape mismatch for " + info.name);
    }
    initial_[v.id] = value;
  }

  int unknowns() const { return unknowns_; }
  int constraint_count() const { return static_cast<int>(constraints_.size()); }

  /// Matrix value of a variable from a solution vector.
  Matrix Value(Var v, const Vector& x) const {
    const auto& info = At(v);
    Matrix out = Matrix::Zero(info.rows, info.cols);
    ForEachBasis(info, [&](int k, Eigen::Index i, Eigen::Index j) {
      out(i, j) = x(k);
      if (info.structure == Structure::kSymmetric) out(j, i) = x(k);
    });
    return out;
  }

  Matrix Value(Var v, const Solution& s) const { return Value(v, s.x); }

  /// Writes a matrix value into an unknown vector (symmetric part / diagonal
  /// for structured variables).
  void Assign(Var v, const Matrix& value, Vector& x) const {
    const auto& info = At(v);
    if (value.rows() != info.rows || value.cols() != info.cols) {
      throw std::invalid_argument("Problem::Assign: shape mismatch for " + info.name);
    }
    if (x.size() != unknowns_) x = Vector::Zero(unknowns_);
    ForEachBasis(info, [&](int k, Eigen::Index i, Eigen::Index j) {
      x(k) = info.structure == Structure::kSymmetric ? 0.5 * (value(i, j) + value(j, i))
                                                     : value(i, j);
    });
  }

  /// Value of an expression at x.
  Matrix Evaluate(const Expr& e, const Vector& x) const {
    Matrix out = e.constant();
    for (const auto& t : e.terms()) {
      const Matrix v = Value(Var{t.var}, x);
      out += t.transposed ? Matrix(t.left * v.transpose() * t.right)
                          : Matrix(t.left * v * t.right);
    }
    return out;
  }

  /// Independent re-evaluation of every constraint by eigenvalues.
  std::vector<ConstraintMargin> Check(const Vector& x) const {
    std::vector<ConstraintMargin> out;
    for (const auto& c : constraints_) {
      Matrix g = Evaluate(c.expr, x);
      if (c.sense == Sense::kNegativeDefinite) g = -g;
      ConstraintMargin m;
      m.name = c.name;
      m.margin = MinEigenvalueSym(g);
      m.required = c.strict ? kStrictness * c.scale : 0.0;
      // Non-strict constraints tolerate round-off at the boundary.
      m.satisfied = c.strict ? m.margin >= m.required * (1 - 1e-6)
                             : m.margin >= -1e-10 * c.scale;
      out.push_back(std::move(m));
    }
    return out;
  }

  Solution SolveFeasibility(const Options& opt = {}) const;
  Solution SolveMinimize(const Options& opt = {}) const;

 private:
  struct VarInfo {
    std::string name;
    Structure structure;
    Eigen::Index rows, cols;
    int offset;
    int count;
  };

  struct Constraint {
    std::string name;
    Expr expr;
    Sense sense;
    bool strict;
    double scale;
  };

  // Compiled block G0 + Σ x[idx[k]] coef[k] ≻ 0.
  struct Block {
    Matrix g0;
    std::vector<int> idx;
    std::vector<Matrix> coef;
  };

  struct Compiled {
    int n = 0;
    std::vector<Block> blocks;
    Vector c;
    double c0 = 0.0;
    int ball_dims = 0;  // the first ball_dims unknowns lie in the ball
    double radius = 1e6;
    double nu() const {
      double v = 1.0;
      for (const auto& b : blocks) v += static_cast<double>(b.g0.rows());
      return v;
    }
  };

  const VarInfo& At(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(vars_.size())) {
      throw std::invalid_argument("Problem: unknown variable handle");
    }
    return vars_[v.id];
  }

  static int CountOf(const VarInfo& info) {
    switch (info.structure) {
      case Structure::kSymmetric:
        return static_cast<int>(info.rows * (info.rows + 1) / 2);
      case Structure::kDiagonal:
        return static_cast<int>(info.rows);
      case Structure::kScalar:
        return 1;
      case Structure::kFull:
        return static_cast<int>(info.rows * info.cols);
    }
    return 0;
  }

  // Enumerates unknowns of a variable as (global index, i, j) with i ≤ j for
  // symmetric variables.
  template <typename F>
  static void ForEachBasis(const VarInfo& info, F&& f) {
    int k = info.offset;
    switch (info.structure) {
      case Structure::kSymmetric:
        for (Eigen::Index j = 0; j < info.cols; ++j)
          for (Eigen::Index i = 0; i <= j; ++i) f(k++, i, j);
        break;
      case Structure::kDiagonal:
        for (Eigen::Index i = 0; i < info.rows; ++i) f(k++, i, i);
        break;
      case Structure::kScalar:
        f(k++, 0, 0);
        break;
      case Structure::kFull:
        for (Eigen::Index j = 0; j < info.cols; ++j)
          for (Eigen::Index i = 0; i < info.rows; ++i) f(k++, i, j);
        break;
    }
  }

  // Coefficient matrices of every unknown appearing in e.
  std::map<int, Matrix> Coefficients(const Expr& e) const {
    std::map<int, Matrix> coef;
    for (const auto& t : e.terms()) {
      const auto& info = vars_[t.var];
      ForEachBasis(info, [&](int k, Eigen::Index i, Eigen::Index j) {
        auto it = coef.find(k);
        if (it == coef.end()) it = coef.emplace(k, Matrix::Zero(e.rows(), e.cols())).first;
        // left · E · right with E = e_i e_jᵀ (or its transpose).
        const Eigen::Index a = t.transposed ? j : i;
        const Eigen::Index b = t.transposed ? i : j;
        it->second.noalias() += t.left.col(a) * t.right.row(b);
        if (info.structure == Structure::kSymmetric && i != j) {
          it->second.noalias() += t.left.col(b) * t.right.row(a);
        }
      });
    }
    return coef;
  }

  Compiled Compile(const Options& opt) const {
    Compiled out;
    out.n = unknowns_;
    out.ball_dims = unknowns_;
    out.radius = opt.ball_radius;
    for (const auto& c : constraints_) {
      const double sign = c.sense == Sense::kNegativeDefinite ? -1.0 : 1.0;
      Block b;
      b.g0 = sign * c.expr.constant();
      const double asym = (b.g0 - b.g0.transpose()).cwiseAbs().maxCoeff();
      if (b.g0.size() && asym > 1e-9 * c.scale) {
        throw std::logic_error("Problem: constraint '" + c.name + "' is not symmetric");
      }
      b.g0 = Symmetrize(b.g0);
      if (c.strict) b.g0.diagonal().array() -= kStrictness * c.scale;
      for (auto& [k, m] : Coefficients(c.expr)) {
        const double mag = m.cwiseAbs().maxCoeff();
        if (mag == 0.0) continue;
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, mag)) {
          throw std::logic_error("Problem: constraint '" + c.name + "' is not symmetric");
        }
        b.idx.push_back(k);
        b.coef.push_back(sign * Symmetrize(m));
      }
      out.blocks.push_back(std::move(b));
    }
    out.c = Vector::Zero(unknowns_);
    if (objective_) {
      out.c0 = objective_->constant()(0, 0);
      for (auto& [k, m] : Coefficients(*objective_)) out.c(k) = m(0, 0);
    }
    return out;
  }

  Vector InitialPoint() const {
    Vector x = Vector::Zero(unknowns_);
    for (size_t v = 0; v < vars_.size(); ++v) {
      const auto& info = vars_[v];
      auto it = initial_.find(static_cast<int>(v));
      if (it != initial_.end()) {
        Assign(Var{static_cast<int>(v)}, it->second, x);
      } else if (info.structure != Structure::kFull) {
        Assign(Var{static_cast<int>(v)}, Matrix::Identity(info.rows, info.cols), x);
      }
    }
    return x;
  }

  struct Engine;

  std::vector<VarInfo> vars_;
  std::vector<Constraint> constraints_;
  std::optional<Expr> objective_;
  std::map<int, Matrix> initial_;
  int unknowns_ = 0;

  friend struct Engine;
};

// ---------------------------------------------------------------------------
// Barrier engine.

struct Problem::Engine {
  const Compiled& p;
  const Options& opt;
  int steps = 0;
  bool centred = false;

  static Matrix Assemble(const Block& b, const Vector& x) {
    Matrix g = b.g0;
    for (size_t k = 0; k < b.idx.size(); ++k) g.noalias() += x(b.idx[k]) * b.coef[k];
    return g;
  }

  double BallSlack(const Vector& x) const {
    const double r2 = p.radius * p.radius;
    return r2 - x.head(p.ball_dims).squaredNorm();
  }

  // Barrier objective t·cᵀx − Σ log det G − log(R² − |x|²); +inf outside.
  double Value(const Vector& x, double t) const {
    const double slack = BallSlack(x);
    if (!(slack > 0)) return std::numeric_limits<double>::infinity();
    double f = t * p.c.dot(x) - std::log(slack);
    for (const auto& b : p.blocks) {
      if (b.g0.rows() == 0) continue;
      Eigen::LLT<Matrix> llt(Assemble(b, x));
      if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
      const auto& l = llt.matrixLLT();
      for (Eigen::Index i = 0; i < l.rows(); ++i) {
        if (!(l(i, i) > 0)) return std::numeric_limits<double>::infinity();
        f -= 2.0 * std::log(l(i, i));
      }
    }
    return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
  }

  // Gradient g and a factor J of the barrier Hessian (H = JᵀJ). Each block
  // contributes rows vec(L⁻¹GₖL⁻ᵀ) over its upper triangle, off-diagonal
  // entries weighted by √2, so that ‖J dx‖² = Σ ‖Σₖ dxₖ Wₖ‖²_F. Working with J
  // instead of H keeps the Newton solve accurate when a block approaches
  // singularity.
  void Linearize(const Vector& x, double t, Vector& g, Matrix& jac) const {
    g = t * p.c;
    Eigen::Index rows = p.ball_dims + 1;
    for (const auto& b : p.blocks) {
      if (!b.idx.empty()) rows += b.g0.rows() * (b.g0.rows() + 1) / 2;
    }
    jac = Matrix::Zero(rows, p.n);
    const double slack = BallSlack(x);
    const auto xb = x.head(p.ball_dims);
    g.head(p.ball_dims) += 2.0 * xb / slack;
    // Ball Hessian (2/r) I + (4/r²) x xᵀ.
    jac.topLeftCorner(p.ball_dims, p.ball_dims).diagonal().setConstant(std::sqrt(2.0 / slack));
    jac.block(p.ball_dims, 0, 1, p.ball_dims) = (2.0 / slack) * xb.transpose();
    Eigen::Index row = p.ball_dims + 1;
    const double r2 = std::sqrt(2.0);
    for (const auto& b : p.blocks) {
      if (b.g0.rows() == 0 || b.idx.empty()) continue;
      const Eigen::Index s = b.g0.rows();
      Eigen::LLT<Matrix> llt(Assemble(b, x));
      const auto l = llt.matrixL();
      for (size_t k = 0; k < b.idx.size(); ++k) {
        const Matrix tmp = l.solve(b.coef[k]);             // L⁻¹ Gₖ
        const Matrix w = l.solve(tmp.transpose()).transpose();  // L⁻¹ Gₖ L⁻ᵀ
        g(b.idx[k]) -= w.trace();
        Eigen::Index r = row;
        for (Eigen::Index j = 0; j < s; ++j) {
          for (Eigen::Index i = 0; i <= j; ++i) {
            jac(r++, b.idx[k]) += i == j ? w(i, i) : r2 * 0.5 * (w(i, j) + w(j, i));
          }
        }
      }
      row += s * (s + 1) / 2;
    }
  }

  // Solves (JᵀJ) v = rhs through a column-pivoted QR of the
  // column-equilibrated J.
  static Vector SolveNormal(const Matrix& jac, const Vector& rhs) {
    const Eigen::Index n = jac.cols();
    Vector d(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double nk = jac.col(k).norm();
      d(k) = nk > 0 ? 1.0 / nk : 1.0;
    }
    const Matrix js = jac * d.asDiagonal();
    Eigen::ColPivHouseholderQR<Matrix> qr(js);
    const Eigen::Index rank = qr.rank();
    const auto& perm = qr.colsPermutation();
    const Matrix r = qr.matrixR().topLeftCorner(n, n).template triangularView<Eigen::Upper>();
    // Pᵀ D rhs, then Rᵀ R y = that, then v = D P y.
    Vector z = perm.transpose() * d.cwiseProduct(rhs);
    Vector y = Vector::Zero(n);
    if (rank == n) {
      z = r.transpose().template triangularView<Eigen::Lower>().solve(z);
      y = r.template triangularView<Eigen::Upper>().solve(z);
    } else {
      // Rank-deficient: minimum-norm solve on the leading block.
      const Matrix rr = r.topLeftCorner(rank, rank);
      Vector zr = rr.transpose().template triangularView<Eigen::Lower>().solve(z.head(rank));
      y.head(rank) = rr.template triangularView<Eigen::Upper>().solve(zr);
    }
    return d.cwiseProduct(perm * y);
  }

  // Damped Newton centering. Returns false when the step budget ran out.
  bool Center(Vector& x, double t, const std::function<bool(const Vector&)>& stop_early = {}) {
    Vector g;
    Matrix jac;
    double f = Value(x, t);
    centred = false;
    while (true) {
      if (steps >= opt.max_newton_steps) return false;
      Linearize(x, t, g, jac);
      const Vector dx = -SolveNormal(jac, g);
      const double lambda2 = -g.dot(dx);
      if (!(lambda2 > 2.0 * opt.centering_tolerance)) {
        centred = true;
        return true;
      }
      ++steps;
      double alpha0 = 1.0;
      double alpha = alpha0;
      double fn = Value(x + dx, t);
      while (!(fn <= f - 0.25 * alpha * lambda2) && alpha > 1e-8 * alpha0) {
        alpha *= 0.5;
        fn = Value(x + alpha * dx, t);
        // Far from the centre, restart from the damped step 1/(1+λ).
        const double lambda = std::sqrt(lambda2);
        if (alpha <= 1e-8 && alpha0 == 1.0 && lambda > 1e8) {
          alpha0 = alpha = 1.0 / (1.0 + lambda);
          fn = Value(x + alpha * dx, t);
        }
      }
      // Round-off floor: the iterate is centred as well as the arithmetic
      // allows. The duality gap bound is only trusted for a small decrement.
      if (alpha <= 1e-8 * alpha0) {
        centred = lambda2 < 0.25;
        return true;
      }
      x += alpha * dx;
      f = fn;
      if (stop_early && stop_early(x)) return true;
    }
  }

  double MinMargin(const Vector& x) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : p.blocks) {
      if (b.g0.rows() == 0) continue;
      m = std::min(m, MinEigenvalueSym(Assemble(b, x)));
    }
    return m;
  }

  // Least-squares estimate of the barrier weight that best centres x.
  double InitialWeight(const Vector& x) const {
    Vector g;
    Matrix jac;
    Linearize(x, 0.0, g, jac);
    const Vector hc = SolveNormal(jac, p.c);
    const double denom = p.c.dot(hc);
    double t = denom > 0 ? -hc.dot(g) / denom : 1.0;
    if (!std::isfinite(t) || t <= 0) t = 1.0;
    const double floor = p.nu() / (1.0 + std::abs(p.c.dot(x) + p.c0));
    return std::clamp(t, floor, 1e8);
  }
};

namespace detail {

struct PhaseOneResult {
  Vector x;
  double margin = 0.0;
  double upper_bound = 0.0;
  bool exhausted = false;
  std::vector<LogEntry> log;
};

}  // namespace detail

inline Solution Problem::SolveFeasibility(const Options& opt) const {
  Compiled base = Compile(opt);
  Solution sol;
  Vector x0 = InitialPoint();

  // Augment with the margin unknown s: G(x) − sI ≻ 0, maximise s.
  Compiled aug = base;
  const int s_idx = base.n;
  aug.n = base.n + 1;
  for (auto& b : aug.blocks) {
    b.idx.push_back(s_idx);
    b.coef.push_back(-Matrix::Identity(b.g0.rows(), b.g0.rows()));
  }
  aug.c = Vector::Zero(aug.n);
  aug.c(s_idx) = -1.0;
  aug.c0 = 0.0;

  Engine probe{base, opt};
  const double m0 = base.blocks.empty() ? 1.0 : probe.MinMargin(x0);
  Vector x(aug.n);
  x.head(base.n) = x0;
  x(s_idx) = m0 - 1.0 - 0.1 * std::abs(m0);

  Engine eng{aug, opt};
  const double nu = aug.nu();
  double t = eng.InitialWeight(x);
  bool done = false;
  while (!done) {
    const bool ok = eng.Center(x, t);
    const double s = x(s_idx);
    const double gap = nu / t;
    sol.log.push_back({eng.steps, s, s, t});
    sol.margin_upper_bound = s + gap;
    if (!ok) {
      sol.status = Status::kMaxIterations;
      break;
    }
    if (s + gap < 0 && eng.centred) {
      sol.status = Status::kInfeasible;
      done = true;
    } else if (s > 0 && gap <= opt.margin_tolerance * std::abs(s)) {
      sol.status = Status::kFeasible;
      done = true;
    } else if (gap <= 1e-13 * std::max(1.0, std::abs(s))) {
      sol.status = s > 0 ? Status::kFeasible : Status::kInfeasible;
      done = true;
    }
    t *= opt.barrier_growth;
  }
  sol.newton_steps = eng.steps;
  sol.x = x.head(base.n);
  sol.worst_margin = x(s_idx);
  if (sol.status == Status::kMaxIterations && sol.worst_margin > 0) {
    // A strictly feasible point was still found.
    sol.status = Status::kFeasible;
  }
  sol.objective = base.c.dot(sol.x) + base.c0;
  return sol;
}

inline Solution Problem::SolveMinimize(const Options& opt) const {
  if (!objective_) throw std::invalid_argument("Problem::SolveMinimize: no objective set");
  Compiled base = Compile(opt);
  Solution sol;
  Vector x = InitialPoint();

  Engine eng{base, opt};
  double margin = base.blocks.empty() ? 1.0 : eng.MinMargin(x);
  int phase_one_steps = 0;
  if (!(margin > 0) || !std::isfinite(eng.Value(x, 0.0))) {
    // Phase one: reach a strictly feasible point, capped at margin 1.
    Compiled aug = base;
    const int s_idx = base.n;
    aug.n = base.n + 1;
    for (auto& b : aug.blocks) {
      b.idx.push_back(s_idx);
      b.coef.push_back(-Matrix::Identity(b.g0.rows(), b.g0.rows()));
    }
    Block cap;
    cap.g0 = Matrix::Constant(1, 1, 1.0);
    cap.idx = {s_idx};
    cap.coef = {Matrix::Constant(1, 1, -1.0)};
    aug.blocks.push_back(cap);
    aug.c = Vector::Zero(aug.n);
    aug.c(s_idx) = -1.0;
    aug.c0 = 0.0;
    Vector y(aug.n);
    y.head(base.n) = x;
    y(s_idx) = margin - 1.0 - 0.1 * std::abs(margin);
    Engine e1{aug, opt};
    double t = e1.InitialWeight(y);
    const double nu = aug.nu();
    bool feasible = false;
    while (true) {
      const bool ok =
          e1.Center(y, t, [&](const Vector& v) { return v(s_idx) >= 0.5; });
      const double s = y(s_idx);
      sol.log.push_back({e1.steps, std::numeric_limits<double>::quiet_NaN(), s, t});
      if (s > 0) {
        feasible = true;
        break;
      }
      if (!ok) break;
      if (s + nu / t < 0 && e1.centred) {
        sol.status = Status::kInfeasible;
        sol.margin_upper_bound = s + nu / t;
        break;
      }
      if (nu / t <= 1e-13) {
        sol.status = Status::kInfeasible;
        sol.margin_upper_bound = s + nu / t;
        break;
      }
      t *= opt.barrier_growth;
    }
    phase_one_steps = e1.steps;
    x = y.head(base.n);
    if (!feasible) {
      if (sol.status != Status::kInfeasible) sol.status = Status::kMaxIterations;
      sol.x = x;
      sol.worst_margin = y(s_idx);
      sol.newton_steps = phase_one_steps;
      sol.objective = base.c.dot(x) + base.c0;
      return sol;
    }
  }

  eng.steps = phase_one_steps;
  const double nu = base.nu();
  double t = eng.InitialWeight(x);
  sol.status = Status::kMaxIterations;
  while (true) {
    const bool ok = eng.Center(x, t);
    const double obj = base.c.dot(x) + base.c0;
    sol.log.push_back({eng.steps, obj, eng.MinMargin(x), t});
    if (!ok) break;
    if (nu / t <= opt.gap_tolerance * (1.0 + std::abs(obj))) {
      sol.status = Status::kOptimal;
      break;
    }
    t *= opt.barrier_growth;
  }
  sol.newton_steps = eng.steps;
  sol.x = x;
  sol.objective = base.c.dot(x) + base.c0;
  sol.worst_margin = eng.MinMargin(x);
  sol.margin_upper_bound = std::numeric_limits<double>::infinity();
  if (std::sqrt(std::max(0.0, eng.BallSlack(x))) < 1e-3 * base.radius) {
    sol.status = Status::kUnbounded;
  }
  return sol;
}

}  // namespace msslab::sdp

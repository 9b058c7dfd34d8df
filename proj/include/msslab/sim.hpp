#pragma once

// Monte Carlo oracle: Euler–Maruyama on dx = Ax dt + Σ σℓ BℓCℓ x dΔℓ + H dW.

#include <msslab/linalg.hpp>
#include <msslab/model.hpp>
#include <msslab/moments.hpp>
#include <msslab/msnorm.hpp>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace msslab {

/// Philox4x32-10 (Salmon et al., SC'11). Stateless: output depends only on
/// the counter and key.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter Generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }
};

/// Four standard normals for (seed, path, step, block).
inline std::array<double, 4> NormalBlock(std::uint64_t seed, std::uint64_t path,
                                         std::uint32_t step, std::uint32_t block) {
  const auto r = Philox4x32::Generate(
      {step, block, static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  constexpr double kScale = 1.0 / 4294967296.0;
  std::array<double, 4> z{};
  for (int i = 0; i < 2; ++i) {
    const double u1 = (static_cast<double>(r[2 * i]) + 1.0) * kScale;  // (0, 1]
    const double u2 = static_cast<double>(r[2 * i + 1]) * kScale;
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    z[2 * i] = rad * std::cos(ang);
    z[2 * i + 1] = rad * std::sin(ang);
  }
  return z;
}

struct SimConfig {
  double step = 0.0;  // ≤ 0 selects the default
  double horizon = 1.0;
  long paths = 1000;
  std::uint64_t seed = 1;
  /// Deterministic x(0), or a covariance from which x(0) is drawn.
  std::variant<Vector, Matrix> initial;
  double divergence_threshold = 1e12;
  std::optional<Matrix> additive;
  int samples = 10;  // recorded times besides t = 0
};

inline double DefaultSimStep(const Interconnection& ic, double horizon) {
  double rate = ic.states() ? OperatorNorm(ic.nominal().A()) : 0.0;
  for (Eigen::Index l = 0; l < ic.channels(); ++l) {
    const double s = ic.sigmas()[l];
    const double g = OperatorNorm(ic.noise_gain(l));
    rate += s * s * g * g;
  }
  double h = rate > 0 ? 1e-3 / rate : 1e-3;
  if (horizon > 0) h = horizon / std::ceil(horizon / h - 1e-9);
  return h;
}

struct EmpiricalMoments {
  std::vector<double> times;
  std::vector<double> mean_traces;
  std::vector<Matrix> covariances;
  std::vector<double> standard_errors;
  long diverged_paths = 0;
  long used_paths = 0;
  std::optional<double> first_divergence_time;
  double step = 0.0;
  std::optional<std::string> warning;

  std::string ToCsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "time,empirical_trace,standard_error\n";
    for (size_t k = 0; k < times.size(); ++k) {
      os << times[k] << ',' << mean_traces[k] << ',' << standard_errors[k] << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline unsigned SimThreads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MSSLAB_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

struct ChunkSums {
  std::vector<Matrix> second;  // Σ x xᵀ per sample
  std::vector<double> trace_sq;  // Σ (xᵀx)² per sample
  long used = 0;
  long diverged = 0;
  double first_divergence = std::numeric_limits<double>::infinity();
};

}  // namespace detail

inline EmpiricalMoments Simulate(const Interconnection& ic, const SimConfig& cfg) {
  const Eigen::Index n = ic.states(), m = ic.channels();
  if (cfg.paths < 1) throw std::invalid_argument("Simulate: paths must be >= 1");
  if (!(cfg.horizon > 0)) throw std::invalid_argument("Simulate: horizon must be > 0");
  if (cfg.samples < 1) throw std::invalid_argument("Simulate: samples must be >= 1");
  const double h0 = cfg.step > 0 ? cfg.step : DefaultSimStep(ic, cfg.horizon);
  if (cfg.horizon < h0) throw std::invalid_argument("Simulate: horizon must be >= step");
  const auto steps = static_cast<long>(std::ceil(cfg.horizon / h0 - 1e-9));
  if (steps >= (1L << 32) - 1) throw std::invalid_argument("Simulate: too many steps");
  const double h = cfg.horizon / static_cast<double>(steps);
  const double sqrt_h = std::sqrt(h);

  Vector x0 = Vector::Zero(n);
  std::optional<Matrix> x0_factor;
  if (const auto* v = std::get_if<Vector>(&cfg.initial)) {
    if (v->size() != 0) x0 = *v;
  } else {
    const auto f = CholeskyPsd(std::get<Matrix>(cfg.initial));
    if (!f) throw std::invalid_argument("Simulate: initial covariance must be PSD");
    x0_factor = *f;
  }
  if (x0.size() != n || (x0_factor && x0_factor->rows() != n)) {
    throw std::invalid_argument("Simulate: initial state must have " + std::to_string(n) +
                                " entries");
  }
  Matrix hmat = Matrix::Zero(n, 0);
  if (cfg.additive) {
    RequireAdditive(ic, *cfg.additive, "Simulate");
    hmat = *cfg.additive;
  }
  const Eigen::Index r = hmat.cols();
  const Eigen::Index normals = m + r;
  const auto blocks = static_cast<std::uint32_t>((normals + 3) / 4);

  std::vector<long> sample_steps(cfg.samples + 1);
  for (int k = 0; k <= cfg.samples; ++k) {
    sample_steps[k] = static_cast<long>(std::llround(static_cast<double>(k) * steps / cfg.samples));
  }

  const Matrix& a = ic.nominal().A();
  const Matrix& bmat = ic.nominal().B();
  const Matrix& cmat = ic.nominal().C();
  Vector sig(m);
  for (Eigen::Index l = 0; l < m; ++l) sig(l) = ic.sigmas()[l];

  constexpr long kChunk = 256;
  const long chunks = (cfg.paths + kChunk - 1) / kChunk;
  std::vector<detail::ChunkSums> sums(chunks);

  auto run_chunk = [&](long c) {
    detail::ChunkSums& out = sums[c];
    out.second.assign(sample_steps.size(), Matrix::Zero(n, n));
    out.trace_sq.assign(sample_steps.size(), 0.0);
    std::vector<Vector> recorded(sample_steps.size());
    Vector x(n), z(normals), cx(m), next(n);
    const long first = c * kChunk, last = std::min(cfg.paths, first + kChunk);
    for (long path = first; path < last; ++path) {
      const auto up = static_cast<std::uint64_t>(path);
      if (x0_factor) {
        Vector w(n);
        for (Eigen::Index i = 0; i < n; i += 4) {
          const auto blk = NormalBlock(cfg.seed, up, 0xFFFFFFFFu, static_cast<std::uint32_t>(i / 4));
          for (Eigen::Index j = i; j < std::min(n, i + 4); ++j) w(j) = blk[j - i];
        }
        x = *x0_factor * w;
      } else {
        x = x0;
      }
      bool diverged = false;
      size_t next_sample = 0;
      if (sample_steps[0] == 0) recorded[next_sample++] = x;
      for (long k = 0; k < steps; ++k) {
        for (std::uint32_t b = 0; b < blocks; ++b) {
          const auto blk = NormalBlock(cfg.seed, up, static_cast<std::uint32_t>(k), b);
          for (Eigen::Index j = 4 * b; j < std::min<Eigen::Index>(normals, 4 * b + 4); ++j) {
            z(j) = blk[j - 4 * b];
          }
        }
        cx.noalias() = cmat * x;
        for (Eigen::Index l = 0; l < m; ++l) cx(l) *= sig(l) * sqrt_h * z(l);
        next.noalias() = a * x;
        next *= h;
        next += x;
        next.noalias() += bmat * cx;
        if (r > 0) next.noalias() += sqrt_h * (hmat * z.tail(r));
        x.swap(next);
        if (!x.allFinite() || x.norm() > cfg.divergence_threshold) {
          diverged = true;
          out.first_divergence =
              std::min(out.first_divergence, static_cast<double>(k + 1) * h);
          break;
        }
        while (next_sample < sample_steps.size() && sample_steps[next_sample] == k + 1) {
          recorded[next_sample++] = x;
        }
      }
      if (diverged) {
        ++out.diverged;
        continue;
      }
      ++out.used;
      for (size_t s = 0; s < recorded.size(); ++s) {
        out.second[s].noalias() += recorded[s] * recorded[s].transpose();
        const double tr = recorded[s].squaredNorm();
        out.trace_sq[s] += tr * tr;
      }
    }
  };

  const unsigned threads = std::min<unsigned>(detail::SimThreads(), static_cast<unsigned>(chunks));
  if (threads <= 1) {
    for (long c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::atomic<long> next_chunk{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (long c; (c = next_chunk.fetch_add(1)) < chunks;) run_chunk(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  EmpiricalMoments out;
  out.step = h;
  std::vector<Matrix> second(sample_steps.size(), Matrix::Zero(n, n));
  std::vector<double> trace_sq(sample_steps.size(), 0.0);
  for (const auto& c : sums) {
    out.used_paths += c.used;
    out.diverged_paths += c.diverged;
    if (c.diverged > 0) {
      out.first_divergence_time =
          std::min(out.first_divergence_time.value_or(c.first_divergence), c.first_divergence);
    }
    for (size_t s = 0; s < second.size(); ++s) {
      second[s] += c.second[s];
      trace_sq[s] += c.trace_sq[s];
    }
  }
  const double used = static_cast<double>(out.used_paths);
  for (size_t s = 0; s < sample_steps.size(); ++s) {
    out.times.push_back(static_cast<double>(sample_steps[s]) * h);
    if (out.used_paths == 0) {
      out.covariances.push_back(Matrix::Constant(n, n, std::nan("")));
      out.mean_traces.push_back(std::nan(""));
      out.standard_errors.push_back(std::nan(""));
      continue;
    }
    const Matrix cov = second[s] / used;
    const double mean = cov.trace();
    const double var = out.used_paths > 1
                           ? std::max(0.0, (trace_sq[s] - used * mean * mean) / (used - 1.0))
                           : 0.0;
    out.covariances.push_back(cov);
    out.mean_traces.push_back(mean);
    out.standard_errors.push_back(std::sqrt(var / used));
  }
  if (out.used_paths == 0) {
    out.warning = "all " + std::to_string(out.diverged_paths) + " paths diverged";
  } else if (out.diverged_paths > 0 && IsMeanSquareStable(ic).verdict == Verdict::kStable) {
    out.warning = std::to_string(out.diverged_paths) +
                  " paths diverged on a mean-square stable loop; the step may be too large";
  }
  return out;
}

struct MomentComparison {
  EmpiricalMoments empirical;
  std::vector<double> analytic_traces;
  std::vector<double> z_scores;
  std::vector<double> relative_deviations;
  double max_relative_deviation = 0.0;
  double max_abs_z = 0.0;

  std::string ToCsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "time,empirical_trace,analytic_trace,standard_error\n";
    for (size_t k = 0; k < analytic_traces.size(); ++k) {
      os << empirical.times[k] << ',' << empirical.mean_traces[k] << ',' << analytic_traces[k]
         << ',' << empirical.standard_errors[k] << '\n';
    }
    return os.str();
  }
};

/// Overlays the covariance ODE on the empirical trace at the recorded times
/// (t = 0 excluded from the deviation statistics).
inline MomentComparison CompareWithMoments(const Interconnection& ic, const SimConfig& cfg) {
  MomentComparison out;
  out.empirical = Simulate(ic, cfg);
  const Eigen::Index n = ic.states();
  Matrix q0;
  if (const auto* v = std::get_if<Vector>(&cfg.initial)) {
    q0 = v->size() ? Matrix(*v * v->transpose()) : Matrix::Zero(n, n);
  } else {
    q0 = std::get<Matrix>(cfg.initial);
  }
  const double span = cfg.horizon / cfg.samples;
  const int sub = std::max(1, static_cast<int>(std::ceil(span / DefaultMomentStep(ic))));
  const auto traj = PropagateCovariance(ic, q0, cfg.horizon, span / sub, cfg.additive, sub);
  for (size_t k = 0; k < out.empirical.times.size(); ++k) {
    const double analytic = k < traj.traces.size() ? traj.traces[k] : std::nan("");
    out.analytic_traces.push_back(analytic);
    const double se = out.empirical.standard_errors[k];
    const double dev = out.empirical.mean_traces[k] - analytic;
    const double z = se > 0 ? dev / se : (dev == 0 ? 0.0 : std::copysign(INFINITY, dev));
    const double rel = std::abs(dev) / std::max(std::abs(analytic), 1e-300);
    out.z_scores.push_back(z);
    out.relative_deviations.push_back(rel);
    if (k == 0) continue;
    out.max_relative_deviation = std::max(out.max_relative_deviation, rel);
    out.max_abs_z = std::max(out.max_abs_z, std::abs(z));
  }
  return out;
}

struct SweepRow {
  double variance = 0.0;
  double ratio = 0.0;  // σ² / σ*²
  bool bounded = false;
  double steady_trace = std::numeric_limits<double>::infinity();
  std::optional<double> empirical_trace;
  std::optional<double> empirical_se;
};

struct SweepResult {
  double critical_variance = std::numeric_limits<double>::infinity();
  std::vector<SweepRow> rows;

  std::string ToCsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "variance,ratio,steady_trace,empirical_trace,standard_error\n";
    for (const auto& r : rows) {
      os << r.variance << ',' << r.ratio << ',';
      if (r.bounded) os << r.steady_trace; else os << "unbounded";
      os << ',';
      if (r.empirical_trace) os << *r.empirical_trace;
      os << ',';
      if (r.empirical_se) os << *r.empirical_se;
      os << '\n';
    }
    return os.str();
  }
};

/// Steady-state trace under equal channel variances σ² with additive forcing
/// H. When `confirm` is given, each bounded row is also sampled at its
/// horizon.
inline SweepResult SweepVariance(const Interconnection& ic, const std::vector<double>& variances,
                                 const Matrix& additive,
                                 const std::optional<SimConfig>& confirm = std::nullopt) {
  SweepResult out;
  out.critical_variance = StabilityBySpectralRadius(ic.WithEqualVariance(1.0)).critical_variance;
  for (double v : variances) {
    if (!(v >= 0)) throw std::invalid_argument("SweepVariance: variances must be >= 0");
    const Interconnection loop = ic.WithEqualVariance(v);
    SweepRow row;
    row.variance = v;
    row.ratio = v / out.critical_variance;
    if (IsMeanSquareStable(loop).verdict == Verdict::kStable) {
      row.bounded = true;
      row.steady_trace = SteadyStateCovariance(loop, additive).trace();
      if (confirm) {
        SimConfig cfg = *confirm;
        cfg.additive = additive;
        const auto e = Simulate(loop, cfg);
        row.empirical_trace = e.mean_traces.back();
        row.empirical_se = e.standard_errors.back();
      }
    }
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace msslab

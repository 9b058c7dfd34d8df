#pragma once

// The command workflows behind the msslab executable. Each returns a JSON
// report, an exit code and any CSV files to be written next to it.

#include <msslab/linalg.hpp>
#include <msslab/model.hpp>
#include <msslab/moments.hpp>
#include <msslab/msnorm.hpp>
#include <msslab/scenario.hpp>
#include <msslab/sim.hpp>
#include <msslab/synthesis.hpp>

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace msslab {

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitUnstable = 2 };

struct OutputFile {
  std::string name;
  std::string content;
};

struct CommandResult {
  Json report;
  int exit_code = kExitOk;
  std::vector<OutputFile> files;
};

/// Per-invocation overrides from the command line.
struct CommandOverrides {
  std::optional<Vector> theta;
  std::optional<std::uint64_t> seed;
  std::optional<long> paths;
};

namespace detail {

inline Json Envelope(const std::string& command, const std::string& digest) {
  return Json{{"toolkit", "msslab"},
              {"version", kToolkitVersion},
              {"schema_version", kSchemaVersion},
              {"command", command},
              {"input_digest", digest}};
}

inline void ApplyOverrides(ScenarioOptions& o, const CommandOverrides& ov) {
  if (ov.theta) o.theta = ov.theta;
  if (ov.seed) o.seed = *ov.seed;
  if (ov.paths) o.paths = *ov.paths;
}

inline Json SpectrumJson(const std::vector<Complex>& eig) { return ComplexListJson(eig); }

}  // namespace detail

struct LoopAnalysis {
  Json json;
  int exit_code = kExitOk;
  bool stable = false;
};

/// Lifted test, Lyapunov certificate and spectral-radius test on one loop,
/// with their agreement.
inline LoopAnalysis AnalyzeLoop(const Interconnection& ic) {
  LoopAnalysis out;
  const Spectrum nominal = Eigenvalues(ic.nominal().A());
  Json& j = out.json;
  j["states"] = ic.states();
  j["channels"] = ic.channels();
  j["nominal_max_real_part"] = Sig9(nominal.max_real_part);
  if (nominal.hurwitz() != Verdict::kStable) {
    j["verdict"] = "unstable nominal";
    j["detail"] = "the noise-free loop is not internally stable, so no channel variance is "
                  "tolerable";
    out.exit_code = kExitUnstable;
    return out;
  }
  const LiftedVerdict lifted = IsMeanSquareStable(ic);
  const CertificateResult cert = FindLyapunovCertificate(ic);
  const MsReport ms = StabilityBySpectralRadius(ic);

  j["lifted"] = {{"verdict", to_string(lifted.verdict)},
                 {"max_real_part", Sig9(lifted.spectrum.max_real_part)}};
  Json lyap{{"feasible", cert.feasible()},
            {"solver_status", sdp::to_string(cert.status)},
            {"margin_bound", Sig9(cert.margin_bound)}};
  if (cert.certificate) {
    lyap["P"] = MatrixJson(cert.certificate->p, true);
    lyap["slack"] = Exact(cert.certificate->slack);
  } else {
    lyap["diagnostic"] = cert.diagnostic;
  }
  j["lyapunov"] = lyap;
  Json sr{{"verdict", to_string(ms.verdict)},
          {"rho", Sig9(ms.spectral_radius)},
          {"g_tilde", MatrixJson(ms.g_tilde)},
          {"sigma_sq", VectorJson(ms.sigma_sq)},
          {"critical_variance", Sig9(ms.critical_variance)},
          {"irreducible", ms.irreducible}};
  if (ms.theta) sr["theta"] = VectorJson(*ms.theta);
  j["spectral_radius"] = sr;

  if (lifted.verdict == Verdict::kMarginal || ms.verdict == Verdict::kMarginal) {
    j["verdict"] = "marginal";
    j["agreement"] = "not assessed inside the marginal band";
    out.exit_code = kExitUnstable;
    return out;
  }
  const bool a = lifted.verdict == Verdict::kStable;
  const bool b = cert.feasible();
  const bool c = ms.verdict == Verdict::kStable;
  j["agreement"] = (a == b && b == c);
  if (!(a == b && b == c)) {
    j["verdict"] = "inconsistent";
    j["diagnostic"] = {{"lifted_stable", a},
                       {"certificate_found", b},
                       {"spectral_radius_stable", c},
                       {"A", MatrixJson(ic.nominal().A(), true)},
                       {"B", MatrixJson(ic.nominal().B(), true)},
                       {"C", MatrixJson(ic.nominal().C(), true)}};
    out.exit_code = kExitError;
    return out;
  }
  out.stable = a;
  j["verdict"] = a ? "stable" : "unstable";
  out.exit_code = a ? kExitOk : kExitUnstable;
  return out;
}

/// Recomputes the certificate's residual eigenvalues from a report.
inline bool CheckCertificate(const Interconnection& ic, const Matrix& p) {
  return MinEigenvalueSym(p) > 0 && MaxEigenvalueSym(LyapunovResidual(ic, p)) < 0;
}

inline CommandResult CmdAnalyze(const Scenario& s) {
  CommandResult r;
  r.report = detail::Envelope("analyze", s.digest);
  const auto a = AnalyzeLoop(s.Resolve());
  r.report["analysis"] = a.json;
  r.exit_code = a.exit_code;
  return r;
}

inline Json SynthesisJson(const SynthesisResult& k) {
  return Json{{"gamma", Sig9(k.gamma)},
              {"recomputed_gamma", Sig9(k.recomputed_gamma)},
              {"achieved_critical_variance", Sig9(k.achieved_critical_variance)},
              {"theta", VectorJson(k.theta)},
              {"closed_loop", to_string(k.closed_loop_verdict)},
              {"controller", SystemJson(k.controller, true)},
              {"reconstruction_residual", Sig9(k.reconstruction_residual)},
              {"cond_M", Sig9(k.cond_m)},
              {"cond_N", Sig9(k.cond_n)},
              {"N_perturbed", k.n_perturbed},
              {"solver_status", sdp::to_string(k.status)},
              {"newton_steps", k.newton_steps}};
}

inline CommandResult CmdSynthesize(const Scenario& s, const CommandOverrides& ov = {}) {
  CommandResult r;
  r.report = detail::Envelope("synthesize", s.digest);
  if (!s.plant) throw ScenarioError("synthesize: scenario needs 'plant'");
  ScenarioOptions o = s.options;
  detail::ApplyOverrides(o, ov);
  const ChannelSet& ch = *s.channels;
  SynthesisResult best;
  try {
    if (o.dk_rounds > 0) {
      const DkResult dk = DkIterate(*s.plant, ch, o.dk_rounds);
      best = dk.best;
      Json hist = Json::array();
      for (double g : dk.gamma_history) hist.push_back(Sig9(g));
      r.report["gamma_history"] = hist;
      if (dk.warning) r.report["warning"] = *dk.warning;
    } else {
      const Vector theta = o.theta ? *o.theta : Vector::Ones(s.plant->inputs() + s.plant->outputs());
      best = Synthesize(*s.plant, ch, theta);
    }
  } catch (const SynthesisInfeasible& e) {
    r.report["status"] = "infeasible";
    r.report["error"] = e.what();
    r.exit_code = kExitError;
    return r;
  }
  r.report["synthesis"] = SynthesisJson(best);
  r.report["status"] = "ok";
  if (best.closed_loop_verdict != Verdict::kStable) {
    r.report["status"] = "reconstruction failed";
    r.exit_code = kExitError;
    return r;
  }
  const auto check = AnalyzeLoop(AssembleNominal(*s.plant, best.controller, ch));
  r.report["self_check"] = check.json;
  r.exit_code = check.exit_code;
  return r;
}

inline CommandResult CmdSimulate(const Scenario& s, const CommandOverrides& ov = {}) {
  CommandResult r;
  r.report = detail::Envelope("simulate", s.digest);
  ScenarioOptions o = s.options;
  detail::ApplyOverrides(o, ov);
  const Interconnection ic = s.Resolve();
  SimConfig cfg;
  cfg.step = o.step;
  cfg.horizon = o.horizon;
  cfg.paths = o.paths;
  cfg.seed = o.seed;
  cfg.samples = o.samples;
  cfg.additive = o.additive;
  if (o.initial_covariance) {
    cfg.initial = *o.initial_covariance;
  } else if (o.initial_state) {
    cfg.initial = *o.initial_state;
  } else {
    cfg.initial = o.additive ? Vector(Vector::Zero(ic.states())) : Vector(Vector::Ones(ic.states()));
  }
  const MomentComparison cmp = CompareWithMoments(ic, cfg);
  const EmpiricalMoments& e = cmp.empirical;
  Json sim{{"paths", cfg.paths},
           {"used_paths", e.used_paths},
           {"diverged_paths", e.diverged_paths},
           {"step", Sig9(e.step)},
           {"seed", cfg.seed},
           {"max_relative_deviation", Sig9(cmp.max_relative_deviation)},
           {"max_abs_z", Sig9(cmp.max_abs_z)},
           {"final_empirical_trace", Sig9(e.mean_traces.back())},
           {"final_analytic_trace", Sig9(cmp.analytic_traces.back())}};
  if (e.first_divergence_time) sim["first_divergence_time"] = Sig9(*e.first_divergence_time);
  if (e.warning) sim["warning"] = *e.warning;
  r.report["simulation"] = sim;
  r.files.push_back({"moments.csv", cmp.ToCsv()});
  Json files = Json::array({"moments.csv"});
  if (!o.variances.empty()) {
    if (!o.additive) throw ScenarioError("simulate: a variance sweep needs options.additive");
    const SweepResult sw = SweepVariance(ic, o.variances, *o.additive);
    Json rows = Json::array();
    for (const auto& row : sw.rows) {
      rows.push_back({{"variance", Sig9(row.variance)},
                      {"bounded", row.bounded},
                      {"steady_trace", Sig9(row.steady_trace)}});
    }
    r.report["sweep"] = {{"critical_variance", Sig9(sw.critical_variance)}, {"rows", rows}};
    r.files.push_back({"sweep.csv", sw.ToCsv()});
    files.push_back("sweep.csv");
  }
  r.report["files"] = files;
  return r;
}

struct LimitCheck {
  LimitReport limit;
  std::optional<StateFeedback> feedback;
  std::optional<double> bisected_sigma;
};

/// Fundamental limit plus the Riccati gain and the σ at which the lifted
/// test of the resulting loop flips.
inline LimitCheck CheckLimit(const Matrix& ao, const Matrix& b, double mu,
                             std::optional<double> sigma = std::nullopt) {
  LimitCheck out;
  out.limit = FundamentalLimit(ao, mu, sigma);
  out.feedback = OptimalStateFeedback(ao, b, mu);
  if (std::isfinite(out.limit.sigma_star)) {
    auto stable = [&](double s) {
      return IsMeanSquareStable(StateFeedbackLoop(ao, b, mu, out.feedback->k, s)).verdict ==
             Verdict::kStable;
    };
    double lo = 0.0, hi = 4.0 * out.limit.sigma_star;
    if (stable(lo) && !stable(hi)) {
      for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        (stable(mid) ? lo : hi) = mid;
      }
      out.bisected_sigma = 0.5 * (lo + hi);
    }
  }
  return out;
}

inline Json LimitJson(const LimitCheck& c) {
  Json j{{"mean_gain", Sig9(c.limit.mean_gain)},
         {"unstable_eig_sum", Sig9(c.limit.unstable_eig_sum)},
         {"sigma_star", Sig9(c.limit.sigma_star)},
         {"critical_variance", Sig9(c.limit.sigma_star * c.limit.sigma_star)}};
  if (c.limit.queried_sigma) {
    j["queried_sigma"] = Sig9(*c.limit.queried_sigma);
    j["stabilizable"] = *c.limit.stabilizable;
  }
  if (c.feedback) {
    j["K"] = MatrixJson(c.feedback->k, true);
    j["riccati_residual"] = Sig9(c.feedback->residual);
  }
  if (c.bisected_sigma) {
    j["bisected_sigma"] = Sig9(*c.bisected_sigma);
    j["bisection_relative_gap"] =
        Sig9(std::abs(*c.bisected_sigma - c.limit.sigma_star) / c.limit.sigma_star);
  }
  return j;
}

inline CommandResult CmdLimits(const Scenario& s) {
  CommandResult r;
  r.report = detail::Envelope("limits", s.digest);
  if (!s.plant) throw ScenarioError("limits: scenario needs 'plant'");
  if (s.plant->inputs() != 1) {
    throw ScenarioError("limits: the bound covers single-input plants under full state "
                        "feedback; this plant has " + std::to_string(s.plant->inputs()) +
                        " inputs");
  }
  const double mu = s.options.mu ? *s.options.mu : s.channels->input_means(0);
  r.report["limits"] = LimitJson(CheckLimit(s.plant->A(), s.plant->B(), mu, s.options.sigma));
  return r;
}

// Built-in WSCC 9-bus workflows.

struct Wscc9Output {
  std::string label;
  double w1, w2, w3;
};

inline std::vector<Wscc9Output> Wscc9Table1Outputs() {
  return {{"omega1", 1, 0, 0}, {"omega1+omega2", 1, 1, 0}, {"omega2", 0, 1, 0}};
}

inline StateSpace Wscc9Siso(const Wscc9Output& o) {
  return StateSpace(wscc9::StateMatrix(), wscc9::Table1Input(),
                    wscc9::FrequencyOutput(o.w1, o.w2, o.w3));
}

inline DkResult Wscc9Synthesis(int rounds) {
  return DkIterate(wscc9::MimoPlant(), ChannelSet::Uniform(3, 3, 1.0, 0.0), rounds);
}

inline Interconnection Wscc9ClosedLoop(const SynthesisResult& k) {
  return AssembleNominal(wscc9::MimoPlant(), k.controller, ChannelSet::Uniform(3, 3, 1.0, 0.0));
}

/// Fractions of σ*² used by the sweep.
inline std::vector<double> Wscc9SweepFractions() {
  return {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99, 1.0, 1.05};
}

inline CommandResult CmdWscc9(const std::string& task, const CommandOverrides& ov = {},
                              int dk_rounds = 3) {
  CommandResult r;
  r.report = detail::Envelope("wscc9 " + task, DigestString("builtin:wscc9:" + task));
  const Matrix a = wscc9::StateMatrix();
  if (task == "poles") {
    r.report["poles"] = detail::SpectrumJson(Eigenvalues(a).eigenvalues);
  } else if (task == "zeros" || task == "table1") {
    Json rows = Json::array();
    for (const auto& o : Wscc9Table1Outputs()) {
      const StateSpace sys = Wscc9Siso(o);
      Json row{{"output", o.label}, {"zeros", ComplexListJson(TransmissionZeros(sys))}};
      if (task == "table1") {
        try {
          const auto k = Synthesize(sys, ChannelSet::Uniform(1, 1, 1.0, 0.0));
          row["critical_variance"] = Sig9(k.achieved_critical_variance);
          row["closed_loop"] = to_string(k.closed_loop_verdict);
        } catch (const std::exception& e) {
          row["critical_variance"] = nullptr;
          row["synthesis_error"] = e.what();
        }
      }
      rows.push_back(row);
    }
    r.report["rows"] = rows;
  } else if (task == "synth") {
    const DkResult dk = Wscc9Synthesis(dk_rounds);
    Json hist = Json::array();
    for (double g : dk.gamma_history) hist.push_back(Sig9(g));
    r.report["gamma_history"] = hist;
    if (dk.warning) r.report["warning"] = *dk.warning;
    r.report["synthesis"] = SynthesisJson(dk.best);
    if (dk.best.closed_loop_verdict == Verdict::kStable) {
      const auto check =
          AnalyzeLoop(Wscc9ClosedLoop(dk.best).WithEqualVariance(0.5 * dk.best.achieved_critical_variance));
      r.report["self_check_at_half_critical"] = check.json;
      r.exit_code = check.exit_code;
    } else {
      r.exit_code = kExitError;
    }
  } else if (task == "limits") {
    r.report["limits"] = LimitJson(CheckLimit(a, wscc9::Generator3Input(), 1.0));
  } else if (task == "sweep") {
    const DkResult dk = Wscc9Synthesis(dk_rounds);
    const Interconnection loop = Wscc9ClosedLoop(dk.best);
    const double crit = dk.best.achieved_critical_variance;
    std::vector<double> vars;
    for (double f : Wscc9SweepFractions()) vars.push_back(f * crit);
    const Matrix probe = 1e-3 * Matrix::Identity(loop.states(), loop.states());
    std::optional<SimConfig> confirm;
    if (ov.paths) {
      SimConfig cfg;
      cfg.paths = *ov.paths;
      cfg.seed = ov.seed.value_or(1);
      cfg.horizon = 200.0;
      cfg.initial = Vector(Vector::Zero(loop.states()));
      confirm = cfg;
    }
    const SweepResult sw = SweepVariance(loop, vars, probe, confirm);
    Json rows = Json::array();
    for (const auto& row : sw.rows) {
      Json jr{{"variance", Sig9(row.variance)},
              {"ratio", Sig9(row.ratio)},
              {"bounded", row.bounded},
              {"steady_trace", Sig9(row.steady_trace)}};
      if (row.empirical_trace) {
        jr["empirical_trace"] = Sig9(*row.empirical_trace);
        jr["empirical_se"] = Sig9(*row.empirical_se);
      }
      rows.push_back(jr);
    }
    r.report["critical_variance"] = Sig9(crit);
    r.report["rows"] = rows;
    r.files.push_back({"wscc9_sweep.csv", sw.ToCsv()});
    r.report["files"] = Json::array({"wscc9_sweep.csv"});
  } else {
    throw ScenarioError("wscc9: unknown task '" + task +
                        "' (expected poles, zeros, table1, synth, limits or sweep)");
  }
  return r;
}

}  // namespace msslab

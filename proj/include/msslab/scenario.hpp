#pragma once

// JSON scenario ingestion and report formatting.

#include <msslab/linalg.hpp>
#include <msslab/model.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace msslab {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolkitVersion = "1.0.0";

class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScenarioOptions {
  std::optional<Vector> theta;
  double horizon = 10.0;
  long paths = 10000;
  std::uint64_t seed = 1;
  double step = 0.0;
  int samples = 10;
  int dk_rounds = 0;
  std::optional<Vector> initial_state;
  std::optional<Matrix> initial_covariance;
  std::optional<Matrix> additive;
  std::vector<double> variances;
  std::optional<double> mu;
  std::optional<double> sigma;
};

struct Scenario {
  std::optional<StateSpace> plant;
  std::optional<StateSpace> controller;
  std::optional<ChannelSet> channels;
  /// Already assembled nominal loop with per-channel σ.
  std::optional<Interconnection> loop;
  ScenarioOptions options;
  std::vector<std::string> tasks;
  std::string digest;

  /// The loop to analyse: `loop`, or plant ⋆ controller through `channels`.
  Interconnection Resolve() const {
    if (loop) return *loop;
    if (!plant || !controller || !channels) {
      throw ScenarioError(
          "scenario: need either 'loop' or all of 'plant', 'controller' and 'channels'");
    }
    return AssembleNominal(*plant, *controller, *channels);
  }
};

/// FNV-1a, 64 bit.
inline std::uint64_t Fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string DigestString(const std::string& text) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                static_cast<unsigned long long>(Fnv1a64(text)));
  return buf;
}

namespace detail {

[[noreturn]] inline void Fail(const std::string& where, const std::string& what) {
  throw ScenarioError("scenario: " + where + ": " + what);
}

inline double Number(const Json& j, const std::string& where) {
  if (!j.is_number()) Fail(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) Fail(where, "non-finite value");
  return v;
}

inline Matrix ParseMatrix(const Json& j, const std::string& where) {
  if (!j.is_array()) Fail(where, "expected a row-major array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  if (!j[0].is_array()) Fail(where, "expected a row-major array of rows");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      Fail(where, "row " + std::to_string(i) + " has a different length; matrices must be "
                  "rectangular");
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      m(i, k) = Number(row[static_cast<size_t>(k)],
                       where + "[" + std::to_string(i) + "][" + std::to_string(k) + "]");
    }
  }
  return m;
}

inline Vector ParseVector(const Json& j, const std::string& where) {
  if (!j.is_array()) Fail(where, "expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = Number(j[i], where + "[" + std::to_string(i) + "]");
  }
  return v;
}

inline void AllowKeys(const Json& j, const std::string& where, std::set<std::string> keys) {
  if (!j.is_object()) Fail(where, "expected an object");
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) Fail(where, "unknown key '" + k + "'");
  }
}

inline StateSpace ParseSystem(const Json& j, const std::string& where) {
  AllowKeys(j, where, {"A", "B", "C", "D"});
  for (const char* k : {"A", "B", "C"}) {
    if (!j.contains(k)) Fail(where, std::string("missing '") + k + "'");
  }
  std::optional<Matrix> d;
  if (j.contains("D")) d = ParseMatrix(j["D"], where + ".D");
  try {
    return StateSpace(ParseMatrix(j["A"], where + ".A"), ParseMatrix(j["B"], where + ".B"),
                      ParseMatrix(j["C"], where + ".C"), d);
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    Fail(where, e.what());
  }
}

inline ChannelSet ParseChannels(const Json& j, const StateSpace& plant) {
  AllowKeys(j, "channels",
            {"mean", "std", "input_means", "input_stds", "output_means", "output_stds"});
  const Eigen::Index d = plant.inputs(), q = plant.outputs();
  const double mean = j.contains("mean") ? Number(j["mean"], "channels.mean") : 1.0;
  const double sd = j.contains("std") ? Number(j["std"], "channels.std") : 0.0;
  ChannelSet c = ChannelSet::Uniform(d, q, mean, sd);
  if (j.contains("input_means")) c.input_means = ParseVector(j["input_means"], "channels.input_means");
  if (j.contains("input_stds")) c.input_stds = ParseVector(j["input_stds"], "channels.input_stds");
  if (j.contains("output_means")) c.output_means = ParseVector(j["output_means"], "channels.output_means");
  if (j.contains("output_stds")) c.output_stds = ParseVector(j["output_stds"], "channels.output_stds");
  try {
    c.Validate(d, q);
  } catch (const std::invalid_argument& e) {
    Fail("channels", e.what());
  }
  return c;
}

}  // namespace detail

inline Scenario ParseScenario(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ScenarioError(std::string("scenario: invalid JSON: ") + e.what());
  }
  detail::AllowKeys(j, "top level",
                    {"schema_version", "plant", "controller", "channels", "loop", "options",
                     "tasks", "description"});
  if (!j.contains("schema_version")) detail::Fail("top level", "missing 'schema_version'");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion) {
    detail::Fail("schema_version", "unsupported version (expected " +
                                       std::to_string(kSchemaVersion) + ")");
  }
  Scenario s;
  s.digest = DigestString(text);
  if (j.contains("plant")) s.plant = detail::ParseSystem(j["plant"], "plant");
  if (j.contains("controller")) s.controller = detail::ParseSystem(j["controller"], "controller");
  if (j.contains("channels")) {
    if (!s.plant) detail::Fail("channels", "requires 'plant'");
    s.channels = detail::ParseChannels(j["channels"], *s.plant);
  } else if (s.plant) {
    s.channels = ChannelSet::Uniform(s.plant->inputs(), s.plant->outputs(), 1.0, 0.0);
  }
  if (j.contains("loop")) {
    const Json& l = j["loop"];
    detail::AllowKeys(l, "loop", {"A", "B", "C", "sigmas"});
    if (!l.contains("sigmas")) detail::Fail("loop", "missing 'sigmas'");
    Json sys = l;
    sys.erase("sigmas");
    const StateSpace nominal = detail::ParseSystem(sys, "loop");
    const Vector sig = detail::ParseVector(l["sigmas"], "loop.sigmas");
    try {
      s.loop = DirectLoop(nominal, std::vector<double>(sig.data(), sig.data() + sig.size()));
    } catch (const std::invalid_argument& e) {
      detail::Fail("loop", e.what());
    }
  }
  if (s.plant && s.controller) {
    try {
      (void)AssembleNominal(*s.plant, *s.controller, *s.channels);
    } catch (const std::invalid_argument& e) {
      detail::Fail("controller", e.what());
    }
  }
  if (j.contains("options")) {
    const Json& o = j["options"];
    detail::AllowKeys(o, "options",
                      {"theta", "horizon", "paths", "seed", "step", "samples", "dk_rounds",
                       "initial_state", "initial_covariance", "additive", "variances", "mu",
                       "sigma"});
    ScenarioOptions& opt = s.options;
    if (o.contains("theta")) opt.theta = detail::ParseVector(o["theta"], "options.theta");
    if (o.contains("horizon")) opt.horizon = detail::Number(o["horizon"], "options.horizon");
    if (o.contains("paths")) {
      if (!o["paths"].is_number_integer() || o["paths"].get<long>() < 1) {
        detail::Fail("options.paths", "expected a positive integer");
      }
      opt.paths = o["paths"].get<long>();
    }
    if (o.contains("seed")) {
      if (!o["seed"].is_number_unsigned()) detail::Fail("options.seed", "expected an integer >= 0");
      opt.seed = o["seed"].get<std::uint64_t>();
    }
    if (o.contains("step")) opt.step = detail::Number(o["step"], "options.step");
    if (o.contains("samples")) {
      if (!o["samples"].is_number_integer() || o["samples"].get<int>() < 1) {
        detail::Fail("options.samples", "expected a positive integer");
      }
      opt.samples = o["samples"].get<int>();
    }
    if (o.contains("dk_rounds")) {
      if (!o["dk_rounds"].is_number_integer() || o["dk_rounds"].get<int>() < 0) {
        detail::Fail("options.dk_rounds", "expected an integer >= 0");
      }
      opt.dk_rounds = o["dk_rounds"].get<int>();
    }
    if (o.contains("initial_state")) {
      opt.initial_state = detail::ParseVector(o["initial_state"], "options.initial_state");
    }
    if (o.contains("initial_covariance")) {
      opt.initial_covariance =
          detail::ParseMatrix(o["initial_covariance"], "options.initial_covariance");
    }
    if (o.contains("additive")) opt.additive = detail::ParseMatrix(o["additive"], "options.additive");
    if (o.contains("variances")) {
      const Vector v = detail::ParseVector(o["variances"], "options.variances");
      opt.variances.assign(v.data(), v.data() + v.size());
    }
    if (o.contains("mu")) opt.mu = detail::Number(o["mu"], "options.mu");
    if (o.contains("sigma")) opt.sigma = detail::Number(o["sigma"], "options.sigma");
  }
  if (j.contains("tasks")) {
    if (!j["tasks"].is_array()) detail::Fail("tasks", "expected an array of names");
    for (const auto& t : j["tasks"]) {
      if (!t.is_string()) detail::Fail("tasks", "expected an array of names");
      s.tasks.push_back(t.get<std::string>());
    }
  }
  return s;
}

// Report formatting.

/// Rounds to 9 significant digits; non-finite values become strings.
inline Json Sig9(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline Json Exact(double v) {
  if (!std::isfinite(v)) return Sig9(v);
  return v;
}

inline Json MatrixJson(const Matrix& m, bool exact = false) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(exact ? Exact(m(i, k)) : Sig9(m(i, k)));
    rows.push_back(row);
  }
  return rows;
}

inline Json VectorJson(const Vector& v, bool exact = false) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(exact ? Exact(v(i)) : Sig9(v(i)));
  return out;
}

inline Json ComplexListJson(const std::vector<Complex>& zs) {
  Json out = Json::array();
  for (const Complex& z : zs) {
    if (z.imag() == 0.0) {
      out.push_back(Sig9(z.real()));
    } else {
      out.push_back(Json{{"re", Sig9(z.real())}, {"im", Sig9(z.imag())}});
    }
  }
  return out;
}

inline Json SystemJson(const StateSpace& s, bool exact = false) {
  return Json{{"A", MatrixJson(s.A(), exact)},
              {"B", MatrixJson(s.B(), exact)},
              {"C", MatrixJson(s.C(), exact)}};
}

inline Matrix MatrixFromJson(const Json& j) { return detail::ParseMatrix(j, "report"); }

}  // namespace msslab

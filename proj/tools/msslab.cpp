#include <msslab/commands.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw msslab::ScenarioError("cannot read scenario file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void Emit(const msslab::CommandResult& r, const std::string& out_dir) {
  const std::string text = r.report.dump(2);
  std::cout << text << '\n';
  if (out_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "report.json") << text << '\n';
  for (const auto& f : r.files) std::ofstream(fs::path(out_dir) / f.name) << f.content;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-square stability analysis and synthesis under multiplicative channel noise"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir;
  std::vector<double> theta;
  std::uint64_t seed = 0;
  long paths = 0;
  int rounds = 3;

  auto add_common = [&](CLI::App* sub, bool needs_scenario) {
    auto* opt = sub->add_option("--scenario", scenario_path, "Scenario JSON file");
    if (needs_scenario) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--theta", theta, "Channel scaling, outputs first then inputs");
    sub->add_option("--seed", seed, "Monte Carlo seed");
    sub->add_option("--paths", paths, "Monte Carlo paths")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Directory for report.json and CSV files");
  };
  auto* analyze = app.add_subcommand("analyze", "Mean-square stability of a closed loop");
  auto* synthesize = app.add_subcommand("synthesize", "Robust output-feedback synthesis");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo against the moment equation");
  auto* limits = app.add_subcommand("limits", "Input-noise limit under state feedback");
  auto* wscc9 = app.add_subcommand("wscc9", "Built-in WSCC 9-bus workflows");
  for (auto* sub : {analyze, synthesize, simulate, limits}) add_common(sub, true);
  add_common(wscc9, false);
  std::string task;
  wscc9->add_option("task", task, "poles, zeros, table1, synth, limits or sweep")
      ->required()
      ->check(CLI::IsMember({"poles", "zeros", "table1", "synth", "limits", "sweep"}));
  wscc9->add_option("--rounds", rounds, "D-K rounds for synth and sweep")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : msslab::kExitError;
  }

  msslab::CommandOverrides ov;
  if (!theta.empty()) {
    ov.theta = Eigen::Map<const msslab::Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  }
  for (auto* sub : {analyze, synthesize, simulate, limits, wscc9}) {
    if (sub->parsed() && sub->count("--seed")) ov.seed = seed;
    if (sub->parsed() && sub->count("--paths")) ov.paths = paths;
  }

  try {
    msslab::CommandResult r;
    if (wscc9->parsed()) {
      r = msslab::CmdWscc9(task, ov, rounds);
    } else {
      const msslab::Scenario s = msslab::ParseScenario(ReadFile(scenario_path));
      if (analyze->parsed()) r = msslab::CmdAnalyze(s);
      if (synthesize->parsed()) r = msslab::CmdSynthesize(s, ov);
      if (simulate->parsed()) r = msslab::CmdSimulate(s, ov);
      if (limits->parsed()) r = msslab::CmdLimits(s);
    }
    Emit(r, out_dir);
    return r.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "msslab: " << e.what() << '\n';
    return msslab::kExitError;
  }
}

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "scalecbf/checks.hpp"
#include "scalecbf/io.hpp"
#include "scalecbf/scenarios.hpp"
#include "scalecbf/sim.hpp"

namespace fs = std::filesystem;
using namespace scalecbf;

namespace {

enum Exit { kOk = 0, kConfig = 1, kInfeasible = 2, kCheckFailed = 3 };

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create '" + dir + "': " + ec.message());
  return fs::path(dir);
}

struct RunArgs {
  std::string scenario, config, out = "out", circulation;
  std::optional<double> dt, horizon;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunArgs& a) {
  if (a.scenario.empty() == a.config.empty()) throw ConfigError("give exactly one of --scenario or --config");
  ScenarioConfig cfg;
  if (!a.config.empty()) {
    cfg = load_scenario(a.config);
  } else if (a.scenario == "random") {
    cfg = random_collision_scenario(a.seed.value_or(0));
  } else {
    cfg = builtin_scenario(a.scenario);
  }
  if (a.dt) cfg.dt = *a.dt;
  if (a.horizon) cfg.horizon = *a.horizon;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.circulation.empty()) cfg.circulation = a.circulation == "on";
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  const RunResult r = run_scenario(cfg);
  const fs::path dir = prepare_dir(a.out);
  std::ostringstream csv;
  write_log_csv(csv, r.log);
  json summary = to_json(r.summary);
  summary["scenario"] = cfg.name;
  write_file(dir / "scenario.json", to_json(cfg).dump(2) + "\n");
  write_file(dir / "log.csv", csv.str());
  write_file(dir / "summary.json", summary.dump(2) + "\n");

  std::cout << cfg.name << ": " << r.summary.steps << " steps, min h " << r.summary.min_h
            << ", goal " << (r.summary.goal_reached ? "reached" : "not reached") << ", equilibrium "
            << (r.summary.equilibrium.detected ? "detected" : "none") << ", qp p50/p90 " << r.summary.qp_time_p50_us << "/"
            << r.summary.qp_time_p90_us << " us\n";
  if (r.summary.halted) {
    std::cerr << "QP infeasible at t = " << r.log.records.back().t << ", run halted\n";
    return kInfeasible;
  }
  return kOk;
}

struct CheckArgs {
  std::string suite, out = "out", replay;
  std::uint64_t seed = 0;
  int count = 100;
};

int cmd_check(const CheckArgs& a) {
  const fs::path dir = prepare_dir(a.out);
  if (!a.replay.empty()) {
    const auto cases = replay_case(read_json_file(a.replay));
    bool ok = true;
    for (const CheckCase& c : cases) {
      std::cout << c.suite << " " << c.metric << " = " << c.error << " (threshold " << c.threshold << ")\n";
      ok = ok && !c.failed();
    }
    return ok ? kOk : kCheckFailed;
  }
  std::vector<std::string> suites;
  if (a.suite == "all") suites = check_suites();
  else suites = {a.suite};

  json report = json::array();
  int failures = 0;
  for (const std::string& s : suites) {
    const auto t0 = std::chrono::steady_clock::now();
    const CheckReport rep = run_check(s, a.seed, a.count);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json j = to_json(rep);
    j["seconds"] = sec;
    report.push_back(j);
    for (const CheckCase& c : rep.worst) {
      std::cout << s << " " << c.metric << " max " << c.error << " (threshold " << c.threshold << ")\n";
    }
    for (const CheckCase& c : rep.failures) {
      const fs::path p = dir / ("failure_" + s + "_" + std::to_string(++failures) + ".json");
      write_file(p, c.input.dump(2) + "\n");
      std::cerr << s << ": " << c.metric << " = " << c.error << " exceeds " << c.threshold << ", case saved to " << p.string()
                << "\n";
    }
  }
  write_file(dir / "check_report.json", report.dump(2) + "\n");
  return failures ? kCheckFailed : kOk;
}

struct PlotArgs {
  std::string log, config, out = "plot";
};

int cmd_plotdata(const PlotArgs& a) {
  std::ifstream in(a.log);
  if (!in) throw ConfigError("cannot open '" + a.log + "'");
  const CsvTable table = read_log_csv(in);
  const fs::path cfg_path = a.config.empty() ? fs::path(a.log).parent_path() / "scenario.json" : fs::path(a.config);
  ScenarioConfig cfg;
  if (table.rows > 0 || fs::exists(cfg_path)) cfg = load_scenario(cfg_path.string());
  const PlotFiles files = plot_series(table, cfg);
  const fs::path dir = prepare_dir(a.out);
  write_file(dir / "trajectory.csv", files.trajectory);
  write_file(dir / "outlines.csv", files.outlines);
  write_file(dir / "barriers.csv", files.barriers);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scaling-factor control barrier functions: rollouts, checks and plot data"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Simulate a scenario and write log.csv, summary.json and scenario.json");
  run->add_option("--scenario", ra.scenario, "Built-in scenario name, or 'random' with --seed");
  run->add_option("--config", ra.config, "Scenario JSON document");
  run->add_option("--out", ra.out, "Output directory");
  run->add_option("--dt", ra.dt, "Step size override");
  run->add_option("--horizon", ra.horizon, "Horizon override");
  run->add_option("--seed", ra.seed, "Seed");
  run->add_option("--circulation", ra.circulation, "Circulation override")->check(CLI::IsMember({"on", "off"}));

  CheckArgs ca;
  auto* check = app.add_subcommand("check", "Run a verification sweep");
  check->add_option("suite", ca.suite, "gradients | hessians | closedform | invariance | all")
      ->check(CLI::IsMember({"gradients", "hessians", "closedform", "invariance", "all"}));
  check->add_option("--seed", ca.seed, "Root seed");
  check->add_option("--count", ca.count, "Cases per pair kind and dimension")->check(CLI::PositiveNumber);
  check->add_option("--out", ca.out, "Directory for the report and failure dumps");
  check->add_option("--replay", ca.replay, "Re-run one saved failure case");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plotdata", "Turn a log into plot-ready CSV series");
  plot->add_option("log", pa.log, "log.csv from a run")->required();
  plot->add_option("--config", pa.config, "Scenario JSON (default: scenario.json beside the log)");
  plot->add_option("--out", pa.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*run) return cmd_run(ra);
    if (*check) {
      if (ca.suite.empty() && ca.replay.empty()) throw ConfigError("check needs a suite or --replay");
      return cmd_check(ca);
    }
    return cmd_plotdata(pa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
}

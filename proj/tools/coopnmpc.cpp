// Command-line front end: run a scenario and write trace, message log and
// summary into an output directory.

#include "coopnmpc/scenario.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace coopnmpc;

namespace {

// Stable exit codes; documented in README.md.
enum Exit : int {
  kOk = 0,
  kUsage = 1,
  kScenario = 2,
  kInitialInfeasibility = 3,
  kLeaderInfeasibility = 4,
  kFollowerInfeasibility = 5,
  kSingularity = 6,
  kMonitor = 7,
  kRuntime = 8,
};

int exit_code(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return kOk;
    case RunStatus::InitialInfeasibility: return kInitialInfeasibility;
    case RunStatus::LeaderInfeasibility: return kLeaderInfeasibility;
    case RunStatus::FollowerInfeasibility: return kFollowerInfeasibility;
    case RunStatus::Singularity: return kSingularity;
    case RunStatus::MonitorViolation: return kMonitor;
    case RunStatus::ProtocolError: return kRuntime;
  }
  return kRuntime;
}

std::string resolve_scenario(const std::string& s) {
  if (std::filesystem::exists(s)) return s;
  const auto bundled = std::filesystem::path(COOPNMPC_SCENARIO_DIR) / (s + ".json");
  if (std::filesystem::exists(bundled)) return bundled.string();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized leader-follower NMPC for cooperative object transport"};
  std::string scenario, out = "run", replay;
  ScenarioOverrides ov;
  bool strict = false;
  int verbosity = 0;
  app.add_option("--scenario,scenario", scenario, "scenario file, or the name of a bundled scenario")->required();
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--horizon", ov.horizon, "prediction horizon T_p (s)");
  app.add_option("--total-time", ov.total_time, "simulated time (s)");
  app.add_option("--seed", ov.seed, "seed for the initial perturbation");
  app.add_option("--q-weight", ov.q_weight, "leader state weight, Q = w I");
  app.add_option("--r-weight", ov.r_weight, "leader input weight, R = w I");
  app.add_option("--p-weight", ov.p_weight, "leader terminal weight, P = w I");
  app.add_option("--replay", replay, "message log to replay; reports sends that differ from it");
  app.add_flag("--strict-monitor", strict, "fail the run on any constraint residual above the monitor tolerance");
  app.add_flag("-v,--verbose", verbosity, "progress on stderr (repeat for per-step lines)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  ScenarioConfig cfg;
  try {
    cfg = parse_scenario(resolve_scenario(scenario));
    apply_overrides(cfg, ov);
  } catch (const ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    std::cout << "status=scenario_error reason=\""
              << (e.kind() == ScenarioError::Kind::Parse ? "parse error" : "validation error") << "\"\n";
    return kScenario;
  }

  std::unique_ptr<Bus> bus;
  try {
    if (replay.empty()) {
      bus = std::make_unique<Bus>();
    } else {
      std::ifstream in(replay);
      if (!in) throw std::runtime_error("cannot read " + replay);
      bus = std::make_unique<Bus>(read_message_log(in));
    }
    std::filesystem::create_directories(out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }

  RunOptions opt;
  opt.strict_monitor = strict;
  opt.on_row = [&](const TraceRow& r) {
    const long step = std::lround(r.t / cfg.team.grid.h);
    if (verbosity >= 2 || (verbosity == 1 && step % std::max(1L, std::lround(1.0 / cfg.team.grid.h)) == 0))
      std::cerr << "t=" << r.t << " |e|=" << r.error_norm << " obstacle=" << r.obstacle_value
                << " mode=" << r.leader_mode << " it=" << r.leader_iterations << "\n";
  };
  RunResult res;
  try {
    res = run_scenario(cfg, *bus, opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }

  const auto dir = std::filesystem::path(out);
  {
    std::ofstream f(dir / "trace.csv");
    write_trace_csv(f, cfg, res.trace);
  }
  {
    std::ofstream f(dir / "messages.jsonl");
    write_message_log(f, res.messages);
  }
  {
    std::ofstream f(dir / "scenario.json");
    f << serialize_scenario(cfg);
  }
  auto summary = run_summary(cfg, res);
  const int code = exit_code(res.status);
  summary["exit_code"] = code;
  if (!replay.empty()) summary["replay_mismatches"] = res.replay_mismatches;
  {
    std::ofstream f(dir / "summary.json");
    f << summary.dump(2) << "\n";
  }
  for (const auto& d : res.diagnostics) std::cerr << d << "\n";
  std::cout << "status=" << to_string(res.status) << " reason=\"" << res.reason << "\" rows=" << res.trace.size()
            << " exit=" << code << "\n";
  if (!replay.empty() && res.replay_mismatches) return kRuntime;
  return code;
}

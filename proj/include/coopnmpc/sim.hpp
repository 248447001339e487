#pragma once

// Closed-loop plant simulation of the cooperating team.

#include "coopnmpc/comms.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace coopnmpc {

/// Everything a run needs. The team carries models, gains and environment.
struct ScenarioConfig {
  std::string name = "scenario";
  Team team;
  std::vector<AgentState> initial;  ///< by agent id − 1
  double total_time = 60.0;         ///< s
  std::uint64_t seed = 0;
  double initial_perturbation = 0.0;  ///< uniform noise on the initial q (rad or m), drawn from `seed`
  int integration_substeps = 4;
  double monitor_tolerance = 1e-4;
  double stop_error = 1e-9;  ///< stop early once ‖e_1‖ falls to this (goal reached at rest)
};

/// Step rejected by the plant integrator.
class StepRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// RK4 with `substeps` equal sub-steps on the decoupled agent ODE; the
/// singularity floor is checked at every stage.
inline AgentState integrate_step(const AgentParams& p, const ObjectParams& obj, const AgentState& x, const JVec& u,
                                 double h, int substeps = 4) {
  AgentState y = x;
  const double dt = h / substeps;
  try {
    for (int s = 0; s < substeps; ++s) y = rk4_step(p, obj, y, u, dt, true);
  } catch (const SingularityError& e) {
    throw StepRejected(p.name + ": " + e.what());
  }
  return y;
}

/// Signed obstacle function: positive inside, zero on the surface, negative
/// outside. For a sphere of radius r about c this is r² − ‖p − c‖².
inline double obstacle_function(const Ellipsoid& obstacle, const Vec3& p) {
  const Vec3 d = p - obstacle.center;
  return (1.0 - d.dot(obstacle.shape * d)) * 3.0 / obstacle.shape.trace();
}

/// Pose difference with the Euler angles wrapped.
inline Vec6 pose_difference(const ObjectPose& a, const ObjectPose& b) {
  Vec6 d = a.vec() - b.vec();
  for (int i = 3; i < 6; ++i) d[i] = detail::wrap_angle(d[i]);
  return d;
}

/// Largest pose disagreement between any two agents' views of the object.
inline double closure_drift(const Team& team, const std::vector<AgentState>& states) {
  std::vector<ObjectPose> poses;
  for (int i = 0; i < team.size(); ++i) poses.push_back(object_pose_from_agent(team.agents[i], states[i].q));
  double d = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i)
    for (std::size_t j = i + 1; j < poses.size(); ++j) d = std::max(d, pose_difference(poses[i], poses[j]).norm());
  return d;
}

inline double closure_twist_drift(const Team& team, const std::vector<AgentState>& states) {
  std::vector<Vec6> tw;
  for (int i = 0; i < team.size(); ++i)
    tw.push_back(object_twist_from_agent(team.agents[i], states[i].q, states[i].qdot).vec());
  double d = 0.0;
  for (std::size_t i = 0; i < tw.size(); ++i)
    for (std::size_t j = i + 1; j < tw.size(); ++j) d = std::max(d, (tw[i] - tw[j]).norm());
  return d;
}

/// Least-squares adjustment of a follower onto the object pose and twist
/// held by the reference chain: Gauss-Newton on q, then the smallest change
/// of q̇ that matches the twist.
inline AgentState project_onto_object(const AgentParams& p, const AgentState& x, const ObjectPose& pose,
                                      const ObjectTwist& twist, double tol = 1e-13, int max_iterations = 50) {
  const auto& rows = p.task_rows;
  const int n = p.dof(), m = p.task_dim();
  const VecX target = task_coordinates(rows, pose);
  auto residual = [&](const JVec& q) {
    VecX r = task_coordinates(rows, object_pose_from_agent(p, q)) - target;
    for (int i = 0; i < m; ++i)
      if (rows[i] >= 3) r[i] = detail::wrap_angle(r[i]);
    return r;
  };
  AgentState y = x;
  for (int it = 0; it < max_iterations; ++it) {
    const VecX r = residual(y.q);
    if (r.cwiseAbs().maxCoeff() <= tol) break;
    MatX J(m, n);
    for (int c = 0; c < n; ++c) {
      const double step = 1e-7 * std::max(1.0, std::abs(y.q[c]));
      JVec qp = y.q, qm = y.q;
      qp[c] += step;
      qm[c] -= step;
      J.col(c) = (residual(qp) - residual(qm)) / (2 * step);
    }
    const VecX dq = Eigen::CompleteOrthogonalDecomposition<MatX>(J).solve(r);
    y.q -= dq;
    if (dq.cwiseAbs().maxCoeff() <= 1e-15) break;
  }
  MatX A(m, n);
  for (int c = 0; c < n; ++c)
    A.col(c) = task_twist(rows, object_twist_from_agent(p, y.q, JVec(JVec::Unit(n, c))));
  const VecX dv = task_twist(rows, twist) - A * VecX(y.qdot);
  y.qdot += JVec(Eigen::CompleteOrthogonalDecomposition<MatX>(A).solve(dv));
  return y;
}

/// Closure projection of every follower onto the leader's object state.
inline void project_closure(const Team& team, std::vector<AgentState>& states) {
  const auto& lead = team.agents[0];
  const ObjectPose pose = object_pose_from_agent(lead, states[0].q);
  const ObjectTwist twist = object_twist_from_agent(lead, states[0].q, states[0].qdot);
  for (int i = 1; i < team.size(); ++i) states[i] = project_onto_object(team.agents[i], states[i], pose, twist);
}

/// One sampling instant of the trace.
struct TraceRow {
  double t = 0.0;
  std::vector<AgentState> states;  ///< measured at t (after closure projection)
  std::vector<ObjectPose> object_pose;
  std::vector<ObjectTwist> object_twist;
  std::vector<JVec> u;             ///< applied on [t, t + h)
  double error_norm = 0.0;         ///< ‖e_1‖
  double object_error = 0.0;       ///< ‖x_O − x_des‖ in task coordinates
  double obstacle_value = std::nan("");  ///< largest obstacle function value over obstacles
  double drift_pre = 0.0;          ///< closure drift before projection
  double drift_post = 0.0;
  double twist_drift_post = 0.0;
  double max_state_residual = 0.0;
  double max_input_residual = 0.0;
  std::string worst_residual;
  double min_singularity = 0.0;    ///< min over agents of the singularity measure
  std::string leader_mode;
  int leader_iterations = 0;
  double leader_cost = 0.0;
  double leader_terminal = 0.0;
  double leader_kkt = 0.0;
  int follower_iterations = 0;
  double follower_residual = 0.0;  ///< largest follower equality residual
  double follower_penalty = 0.0;   ///< largest follower ρ
  double decrease_margin = std::nan("");  ///< J*(t_{j−1}) − running cost − J_warm(t_j); hard mode only
};

enum class RunStatus {
  Completed,
  InitialInfeasibility,
  LeaderInfeasibility,
  FollowerInfeasibility,
  Singularity,
  MonitorViolation,
  ProtocolError,
};

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::InitialInfeasibility: return "initial infeasibility";
    case RunStatus::LeaderInfeasibility: return "leader infeasibility";
    case RunStatus::FollowerInfeasibility: return "follower infeasibility";
    case RunStatus::Singularity: return "singularity";
    case RunStatus::MonitorViolation: return "monitor violation";
    case RunStatus::ProtocolError: return "protocol error";
  }
  return "?";
}

struct RunOptions {
  bool strict_monitor = false;
  std::function<void(const TraceRow&)> on_row;
};

struct RunResult {
  RunStatus status = RunStatus::Completed;
  std::string reason;  ///< machine-readable status text
  std::vector<std::string> diagnostics;
  std::vector<TraceRow> trace;
  std::vector<PredictionMessage> messages;
  double wall_seconds = 0.0;
  int replay_mismatches = 0;

  bool ok() const { return status == RunStatus::Completed; }
};

namespace detail {

inline RunStatus status_for(const std::string& reason) {
  if (reason == "leader infeasibility") return RunStatus::LeaderInfeasibility;
  if (reason == "follower infeasibility") return RunStatus::FollowerInfeasibility;
  if (reason == "singularity") return RunStatus::Singularity;
  return RunStatus::ProtocolError;
}

/// State and input residuals of the whole team at one instant.
inline void monitor(const Team& team, const std::vector<AgentState>& states, const std::vector<JVec>& u,
                    const std::vector<JVec>& u_prev, TraceRow& row) {
  std::vector<std::vector<Ellipsoid>> bodies;
  for (int i = 0; i < team.size(); ++i) bodies.push_back(agent_ellipsoids(team.agents[i], states[i].q));
  row.max_state_residual = -kInf;
  row.max_input_residual = -kInf;
  for (int i = 0; i < team.size(); ++i) {
    const auto& p = team.agents[i];
    StateConstraintContext ctx;
    ctx.obstacles = team.obstacles;
    ctx.workspace_radius = team.workspace_radius;
    if (i == 0) ctx.object = &team.object;
    for (int j = 0; j < team.size(); ++j)
      if (j != i) {
        for (std::size_t b = 0; b < bodies[j].size(); ++b) {
          ctx.other_bodies.push_back(bodies[j][b]);
          ctx.other_labels.push_back("agent[" + team.agents[j].name + "].body[" + std::to_string(b) + "]");
        }
      }
    const auto s = state_residuals(p, states[i], ctx);
    if (s.max_value() > row.max_state_residual) {
      row.max_state_residual = s.max_value();
      row.worst_residual = p.name + "." + s.worst();
    }
    if (!u[i].size()) continue;
    const JVec up = u_prev[i].size() ? u_prev[i] : u[i];
    const auto in = input_residuals(p, states[i].q, states[i].qdot, u[i], JVec((u[i] - up) / team.grid.h));
    if (in.max_value() > row.max_input_residual) {
      row.max_input_residual = in.max_value();
      if (in.max_value() > row.max_state_residual) row.worst_residual = p.name + "." + in.worst();
    }
  }
}

}  // namespace detail

/// Measure → round → integrate → project → log, from t = 0 to the total time.
inline RunResult run_scenario(const ScenarioConfig& cfg, Bus& bus, const RunOptions& opt = {}) {
  const auto wall0 = std::chrono::steady_clock::now();
  const Team& team = cfg.team;
  team.grid.validate();
  team.validate_priority();
  const int N = team.size();
  const double h = team.grid.h;
  const int steps = static_cast<int>(std::llround(cfg.total_time / h));

  RunResult res;
  auto finish = [&](RunStatus s, std::string reason) {
    res.status = s;
    res.reason = std::move(reason);
    res.messages = bus.log();
    res.replay_mismatches = bus.mismatches();
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return res;
  };

  std::vector<AgentState> states = cfg.initial;
  if (cfg.initial_perturbation > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> noise(-cfg.initial_perturbation, cfg.initial_perturbation);
    for (auto& x : states)
      for (int k = 0; k < x.q.size(); ++k) x.q[k] += noise(rng);
  }
  double drift_pre = closure_drift(team, states);
  try {
    project_closure(team, states);
  } catch (const std::exception& e) {
    res.diagnostics.push_back(e.what());
    return finish(RunStatus::InitialInfeasibility, "initial infeasibility");
  }
  {
    std::vector<JVec> qs;
    for (const auto& x : states) qs.push_back(x.q);
    const auto rep = feasibility_assumption_check(team.agents, qs, team.object, team.obstacles, team.workspace_radius);
    if (!rep) {
      res.diagnostics = rep.violations;
      return finish(RunStatus::InitialInfeasibility, "initial infeasibility");
    }
  }

  std::vector<AgentMemory> memory(static_cast<std::size_t>(N));
  std::vector<JVec> u_prev(static_cast<std::size_t>(N));
  std::optional<SolveRecord> prev_leader;
  for (int j = 0; j <= steps; ++j) {
    const double t = j * h;
    TraceRow row;
    row.t = t;
    row.states = states;
    for (int i = 0; i < N; ++i) {
      row.object_pose.push_back(object_pose_from_agent(team.agents[i], states[i].q));
      row.object_twist.push_back(object_twist_from_agent(team.agents[i], states[i].q, states[i].qdot));
    }
    const auto& lead = team.agents[0];
    const VecX e = error_state(lead, states[0].q, states[0].qdot, team.x_des);
    row.error_norm = e.norm();
    row.object_error = e.head(lead.task_dim()).norm();
    for (const auto& o : team.obstacles) {
      const double v = obstacle_function(o, row.object_pose[0].p_O);
      row.obstacle_value = std::isnan(row.obstacle_value) ? v : std::max(row.obstacle_value, v);
    }
    row.drift_pre = drift_pre;
    row.drift_post = closure_drift(team, states);
    row.twist_drift_post = closure_twist_drift(team, states);
    row.min_singularity = kInf;
    for (int i = 0; i < N; ++i)
      row.min_singularity = std::min(row.min_singularity, singularity_measure(team.agents[i], states[i].q));

    RoundResult round;
    try {
      round = run_round(j, t, team, states, memory, bus);
    } catch (const RoundAbort& a) {
      res.diagnostics = a.diagnostics();
      res.diagnostics.push_back("t = " + std::to_string(t));
      if (j == 0 && a.reason() == "leader infeasibility" &&
          a.diagnostics().back().find("initial node") != std::string::npos)
        return finish(RunStatus::InitialInfeasibility, "initial infeasibility");
      return finish(detail::status_for(a.reason()), a.reason());
    }
    row.u = round.controls;
    for (const auto& s : round.solves) {
      if (s.agent == 1) {
        row.leader_mode = to_string(s.solution.mode);
        row.leader_iterations = s.solution.iterations;
        row.leader_cost = s.solution.cost;
        row.leader_terminal = s.solution.terminal_value;
        row.leader_kkt = s.solution.kkt;
        if (prev_leader && prev_leader->solution.mode == TerminalMode::Hard)
          row.decrease_margin = prev_leader->solution.cost - prev_leader->solution.first_stage_cost - s.warm_start_cost;
        prev_leader = s;
      } else {
        row.follower_iterations += s.solution.iterations;
        row.follower_residual = std::max(row.follower_residual, s.solution.equality_residual);
        row.follower_penalty = std::max(row.follower_penalty, s.solution.penalty);
      }
    }
    detail::monitor(team, states, row.u, u_prev, row);
    u_prev = row.u;
    res.trace.push_back(row);
    if (opt.on_row) opt.on_row(res.trace.back());
    if (opt.strict_monitor && std::max(row.max_state_residual, row.max_input_residual) > cfg.monitor_tolerance) {
      res.diagnostics.push_back("t = " + std::to_string(t) + ": " + row.worst_residual + " = " +
                                std::to_string(std::max(row.max_state_residual, row.max_input_residual)));
      return finish(RunStatus::MonitorViolation, "monitor violation");
    }
    if (j == steps || row.error_norm <= cfg.stop_error) break;

    try {
      for (int i = 0; i < N; ++i)
        states[i] = integrate_step(team.agents[i], team.object, states[i], row.u[i], h, cfg.integration_substeps);
    } catch (const StepRejected& e) {
      res.diagnostics.push_back("t = " + std::to_string(t) + ": " + e.what());
      return finish(RunStatus::Singularity, "singularity");
    }
    drift_pre = closure_drift(team, states);
    project_closure(team, states);
  }
  return finish(RunStatus::Completed, "completed");
}

inline RunResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opt = {}) {
  Bus bus;
  return run_scenario(cfg, bus, opt);
}

/// CSV output: `# key value` metadata lines, a header, one row per instant.
/// Doubles are printed in the shortest form that round-trips.
inline void write_trace_csv(std::ostream& os, const ScenarioConfig& cfg, const std::vector<TraceRow>& trace) {
  const Team& team = cfg.team;
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  os << "# schema coopnmpc-trace 1\n";
  os << "# scenario " << cfg.name << "\n";
  os << "# h_s " << num(team.grid.h) << "\n";
  os << "# T_p_s " << num(team.grid.T_p) << "\n";
  os << "# total_time_s " << num(cfg.total_time) << "\n";
  os << "# seed " << cfg.seed << "\n";
  os << "t_s";
  const char* pose_names[6] = {"x", "y", "z", "phi", "theta", "psi"};
  const char* twist_names[6] = {"vx", "vy", "vz", "wx", "wy", "wz"};
  for (const auto& p : team.agents) {
    for (int k = 0; k < p.dof(); ++k) os << "," << p.name << ".q" << k;
    for (int k = 0; k < p.dof(); ++k) os << "," << p.name << ".qdot" << k;
    for (int k = 0; k < p.task_dim(); ++k) os << "," << p.name << ".u" << k;
    for (const char* n : pose_names) os << "," << p.name << ".obj_" << n;
    for (const char* n : twist_names) os << "," << p.name << ".obj_" << n;
  }
  os << ",error_norm,object_error,obstacle_value,drift_pre,drift_post,twist_drift_post,max_state_residual,"
        "max_input_residual,worst_residual,min_singularity,leader_mode,leader_iterations,leader_cost,"
        "leader_terminal,leader_kkt,follower_iterations,follower_residual,follower_penalty,decrease_margin\n";
  for (const auto& r : trace) {
    os << num(r.t);
    for (int i = 0; i < team.size(); ++i) {
      for (int k = 0; k < r.states[i].q.size(); ++k) os << "," << num(r.states[i].q[k]);
      for (int k = 0; k < r.states[i].qdot.size(); ++k) os << "," << num(r.states[i].qdot[k]);
      for (int k = 0; k < r.u[i].size(); ++k) os << "," << num(r.u[i][k]);
      const Vec6 xo = r.object_pose[i].vec(), vo = r.object_twist[i].vec();
      for (int k = 0; k < 6; ++k) os << "," << num(xo[k]);
      for (int k = 0; k < 6; ++k) os << "," << num(vo[k]);
    }
    os << "," << num(r.error_norm) << "," << num(r.object_error) << "," << num(r.obstacle_value) << ","
       << num(r.drift_pre) << "," << num(r.drift_post) << "," << num(r.twist_drift_post) << ","
       << num(r.max_state_residual) << "," << num(r.max_input_residual) << "," << r.worst_residual << ","
       << num(r.min_singularity) << "," << r.leader_mode << "," << r.leader_iterations << "," << num(r.leader_cost)
       << "," << num(r.leader_terminal) << "," << num(r.leader_kkt) << "," << r.follower_iterations << ","
       << num(r.follower_residual) << "," << num(r.follower_penalty) << "," << num(r.decrease_margin) << "\n";
  }
}

/// Run summary as a JSON object.
inline nlohmann::json run_summary(const ScenarioConfig& cfg, const RunResult& res) {
  nlohmann::json j;
  j["scenario"] = cfg.name;
  j["status"] = to_string(res.status);
  j["reason"] = res.reason;
  j["diagnostics"] = res.diagnostics;
  j["rows"] = res.trace.size();
  j["messages"] = res.messages.size();
  j["wall_clock_s"] = res.wall_seconds;
  j["h_s"] = cfg.team.grid.h;
  j["T_p_s"] = cfg.team.grid.T_p;
  j["seed"] = cfg.seed;
  if (!res.trace.empty()) {
    const auto& last = res.trace.back();
    j["final_time_s"] = last.t;
    j["final_error_norm"] = last.error_norm;
    j["final_object_error"] = last.object_error;
    double max_obstacle = -kInf, max_u = 0.0, max_drift_pre = 0.0, max_drift_post = 0.0, max_res = -kInf;
    double min_sing = kInf, min_decrease = kInf;
    for (const auto& r : res.trace) {
      if (!std::isnan(r.obstacle_value)) max_obstacle = std::max(max_obstacle, r.obstacle_value);
      for (const auto& u : r.u)
        if (u.size()) max_u = std::max(max_u, u.cwiseAbs().maxCoeff());
      max_drift_pre = std::max(max_drift_pre, r.drift_pre);
      max_drift_post = std::max(max_drift_post, r.drift_post);
      max_res = std::max({max_res, r.max_state_residual, r.max_input_residual});
      min_sing = std::min(min_sing, r.min_singularity);
      if (!std::isnan(r.decrease_margin)) min_decrease = std::min(min_decrease, r.decrease_margin);
    }
    if (std::isfinite(max_obstacle)) j["max_obstacle_value"] = max_obstacle;
    j["max_abs_input"] = max_u;
    j["max_drift_pre"] = max_drift_pre;
    j["max_drift_post"] = max_drift_post;
    j["max_residual"] = max_res;
    j["min_singularity"] = min_sing;
    if (std::isfinite(min_decrease)) j["min_decrease_margin"] = min_decrease;
  }
  return j;
}

}  // namespace coopnmpc

#pragma once

// Priority-ordered message passing between the leader and the followers
// within one sampling round.

#include "coopnmpc/fhocp.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace coopnmpc {

/// Predicted trajectory an agent transmits to lower-priority agents.
struct PredictionMessage {
  std::uint64_t sequence = 0;  ///< bus-wide send order
  int round = 0;
  int sender = 0;              ///< agent id, 1-based
  std::vector<int> receivers;  ///< agent ids
  double t = 0.0;              ///< sampling instant t_j
  std::vector<double> node_times;
  std::vector<JVec> q;
  std::vector<JVec> qdot;
  std::vector<ObjectPose> object_pose;
  std::vector<ObjectTwist> object_twist;

  int nodes() const { return static_cast<int>(q.size()); }
};

namespace detail {

inline nlohmann::json to_json_rows(const std::vector<JVec>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back(std::vector<double>(r.data(), r.data() + r.size()));
  return out;
}

template <typename T>
nlohmann::json to_json_vec6(const std::vector<T>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    const Vec6 v = r.vec();
    out.push_back(std::vector<double>(v.data(), v.data() + 6));
  }
  return out;
}

inline std::vector<JVec> jvec_rows(const nlohmann::json& j) {
  std::vector<JVec> out;
  for (const auto& row : j) {
    const auto v = row.get<std::vector<double>>();
    if (v.size() > static_cast<std::size_t>(kMaxJoints)) throw std::invalid_argument("message row too long");
    out.push_back(Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return out;
}

inline Vec6 vec6(const nlohmann::json& row) {
  const auto v = row.get<std::vector<double>>();
  if (v.size() != 6) throw std::invalid_argument("message pose/twist rows need 6 entries");
  return Eigen::Map<const Vec6>(v.data());
}

}  // namespace detail

inline nlohmann::json to_json(const PredictionMessage& m) {
  nlohmann::json j;
  j["sequence"] = m.sequence;
  j["round"] = m.round;
  j["sender"] = m.sender;
  j["receivers"] = m.receivers;
  j["t_s"] = m.t;
  j["node_times_s"] = m.node_times;
  j["q"] = detail::to_json_rows(m.q);
  j["qdot"] = detail::to_json_rows(m.qdot);
  j["object_pose"] = detail::to_json_vec6(m.object_pose);
  j["object_twist"] = detail::to_json_vec6(m.object_twist);
  return j;
}

inline PredictionMessage message_from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys = {"sequence", "round", "sender", "receivers", "t_s",
                                             "node_times_s", "q", "qdot", "object_pose", "object_twist"};
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw std::invalid_argument("unknown message field '" + k + "'");
  PredictionMessage m;
  m.sequence = j.at("sequence").get<std::uint64_t>();
  m.round = j.at("round").get<int>();
  m.sender = j.at("sender").get<int>();
  m.receivers = j.at("receivers").get<std::vector<int>>();
  m.t = j.at("t_s").get<double>();
  m.node_times = j.at("node_times_s").get<std::vector<double>>();
  m.q = detail::jvec_rows(j.at("q"));
  m.qdot = detail::jvec_rows(j.at("qdot"));
  for (const auto& r : j.at("object_pose")) m.object_pose.push_back(ObjectPose::from(detail::vec6(r)));
  for (const auto& r : j.at("object_twist")) m.object_twist.push_back(ObjectTwist::from(detail::vec6(r)));
  const std::size_t n = m.q.size();
  if (m.qdot.size() != n || m.object_pose.size() != n || m.object_twist.size() != n || m.node_times.size() != n)
    throw std::invalid_argument("message fields disagree in node count");
  return m;
}

/// One JSON object per line.
inline void write_message_log(std::ostream& os, const std::vector<PredictionMessage>& log) {
  for (const auto& m : log) os << to_json(m).dump() << '\n';
}

inline std::vector<PredictionMessage> read_message_log(std::istream& is) {
  std::vector<PredictionMessage> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(message_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("message log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Exact field-by-field comparison (bitwise on doubles).
inline bool identical(const PredictionMessage& a, const PredictionMessage& b) {
  auto same6 = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].vec() != y[i].vec()) return false;
    return true;
  };
  auto same_rows = [](const std::vector<JVec>& x, const std::vector<JVec>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].size() != y[i].size() || x[i] != y[i]) return false;
    return true;
  };
  return a.sequence == b.sequence && a.round == b.round && a.sender == b.sender && a.receivers == b.receivers &&
         a.t == b.t && a.node_times == b.node_times && same_rows(a.q, b.q) && same_rows(a.qdot, b.qdot) &&
         same6(a.object_pose, b.object_pose) && same6(a.object_twist, b.object_twist);
}

/// Largest deviation between the transmitted object fields and the ones the
/// receiver recomputes from q̂, q̂̇ through the sender's chain.
inline double message_consistency(const AgentParams& sender, const PredictionMessage& m) {
  double err = 0.0;
  for (int k = 0; k < m.nodes(); ++k) {
    const Vec6 dp = object_pose_from_agent(sender, m.q[k]).vec() - m.object_pose[k].vec();
    const Vec6 dv = object_twist_from_agent(sender, m.q[k], m.qdot[k]).vec() - m.object_twist[k].vec();
    err = std::max({err, dp.cwiseAbs().maxCoeff(), dv.cwiseAbs().maxCoeff()});
  }
  return err;
}

inline PredictionMessage make_message(int round, int sender, std::vector<int> receivers, double t,
                                      const HorizonGrid& grid, const HorizonSolution& sol) {
  PredictionMessage m;
  m.round = round;
  m.sender = sender;
  m.receivers = std::move(receivers);
  m.t = t;
  m.node_times = grid.node_times(t);
  for (const auto& x : sol.states) {
    m.q.push_back(x.q);
    m.qdot.push_back(x.qdot);
  }
  m.object_pose = sol.object_poses;
  m.object_twist = sol.object_twists;
  return m;
}

/// In-process reliable, zero-delay, in-order transport. Every send is
/// stamped from a logical clock; a receiver only sees messages stamped
/// before it asked. In replay mode the bus delivers the logged messages and
/// records every send that differs from the log.
class Bus {
 public:
  Bus() = default;
  explicit Bus(std::vector<PredictionMessage> replay) : replay_(std::move(replay)), replaying_(true) {}

  std::uint64_t send(PredictionMessage m) {
    std::lock_guard lock(mu_);
    m.sequence = log_.size();
    if (replaying_) {
      if (m.sequence >= replay_.size() || !identical(m, replay_[m.sequence])) ++mismatches_;
      if (m.sequence < replay_.size()) m = replay_[m.sequence];
    }
    log_.push_back(m);
    return m.sequence;
  }

  /// Logical time: number of messages sent so far.
  std::uint64_t clock() const {
    std::lock_guard lock(mu_);
    return log_.size();
  }

  /// Messages of `round` addressed to `receiver`, sent before `before`.
  std::vector<PredictionMessage> receive(int round, int receiver, std::uint64_t before) const {
    std::lock_guard lock(mu_);
    std::vector<PredictionMessage> out;
    for (std::uint64_t s = 0; s < std::min<std::uint64_t>(before, log_.size()); ++s) {
      const auto& m = log_[s];
      if (m.round == round && std::find(m.receivers.begin(), m.receivers.end(), receiver) != m.receivers.end())
        out.push_back(m);
    }
    return out;
  }

  std::vector<PredictionMessage> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }
  bool replaying() const { return replaying_; }
  int mismatches() const {
    std::lock_guard lock(mu_);
    return mismatches_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<PredictionMessage> log_;
  std::vector<PredictionMessage> replay_;
  bool replaying_ = false;
  int mismatches_ = 0;
};

/// Everything the agents share about the task: models, environment,
/// gains and the priority order (agent ids, leader first).
struct Team {
  std::vector<AgentParams> agents;  ///< agent id i is agents[i − 1]
  std::vector<int> priority;
  ObjectParams object;
  std::vector<Ellipsoid> obstacles;
  double workspace_radius = kInf;
  VecX x_des;
  HorizonGrid grid;
  LeaderGains leader_gains;
  FollowerCost follower_cost;
  PenaltySchedule penalty;
  SqpOptions solver;
  double authority_margin = 0.97;

  int size() const { return static_cast<int>(agents.size()); }
  const AgentParams& agent(int id) const { return agents.at(static_cast<std::size_t>(id - 1)); }

  void validate_priority() const {
    std::vector<int> sorted = priority;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < size(); ++i)
      if (static_cast<int>(sorted.size()) != size() || sorted[i] != i + 1)
        throw std::invalid_argument("priority order must be a permutation of 1..N");
    if (priority.front() != 1) throw std::invalid_argument("priority order must start with the leader (agent 1)");
  }
};

/// Per-agent state carried from round to round.
struct AgentMemory {
  VecX warm_start;
  JVec u_prev;
  double rho = 0.0;
};

struct SolveRecord {
  int agent = 0;
  std::uint64_t stamp = 0;                ///< bus clock when the solve started
  std::vector<std::uint64_t> consumed;    ///< sequences of the messages it used
  std::vector<std::string> constraint_sources;  ///< agent names its collision rows reference
  JVec u;
  HorizonSolution solution;
  double warm_start_cost = 0.0;  ///< leader: cost of the shifted warm start in the hard-mode cost
};

struct RoundResult {
  int round = 0;
  double t = 0.0;
  std::vector<JVec> controls;       ///< by agent id − 1
  std::vector<SolveRecord> solves;  ///< in priority order
  int messages = 0;
};

/// A round could not produce controls for every agent.
class RoundAbort : public std::runtime_error {
 public:
  RoundAbort(std::string reason, std::vector<std::string> diagnostics)
      : std::runtime_error(reason + ": " + join(diagnostics)), reason_(std::move(reason)),
        diagnostics_(std::move(diagnostics)) {}
  const std::string& reason() const { return reason_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  static std::string join(const std::vector<std::string>& d) {
    std::string s;
    for (const auto& x : d) s += (s.empty() ? "" : "; ") + x;
    return s;
  }
  std::string reason_;
  std::vector<std::string> diagnostics_;
};

namespace detail {

inline void add_bodies(const AgentParams& p, const JVec& q, std::vector<Ellipsoid>& bodies,
                       std::vector<std::string>& labels) {
  const auto e = agent_ellipsoids(p, q);
  for (std::size_t b = 0; b < e.size(); ++b) {
    bodies.push_back(e[b]);
    labels.push_back("agent[" + p.name + "].body[" + std::to_string(b) + "]");
  }
}

inline AgentMemory& memory_for(std::vector<AgentMemory>& memory, const Team& team, int id) {
  auto& mem = memory.at(static_cast<std::size_t>(id - 1));
  const auto& p = team.agent(id);
  if (mem.warm_start.size() != team.grid.K() * p.task_dim()) mem.warm_start.resize(0);
  return mem;
}

}  // namespace detail

/// Leader problem data for the measured team state.
inline LeaderSetup leader_setup(const Team& team, const std::vector<AgentState>& states, const AgentMemory& mem) {
  LeaderSetup s;
  s.agent = team.agent(1);
  s.object = team.object;
  s.x0 = states[0];
  s.u_prev = mem.u_prev;
  s.x_des = team.x_des;
  s.obstacles = team.obstacles;
  s.workspace_radius = team.workspace_radius;
  s.gains = team.leader_gains;
  s.authority_margin = team.authority_margin;
  for (int id = 2; id <= team.size(); ++id) {
    detail::add_bodies(team.agent(id), states[id - 1].q, s.other_bodies, s.other_labels);
    s.followers.push_back(team.agent(id));
    s.follower_q.push_back(states[id - 1].q);
  }
  return s;
}

/// One synchronous round at t_j: the leader solves and broadcasts, then each
/// follower in priority order solves against the messages it has received
/// and forwards its own prediction to the agents below it.
inline RoundResult run_round(int round, double t, const Team& team, const std::vector<AgentState>& states,
                             std::vector<AgentMemory>& memory, Bus& bus) {
  const int N = team.size();
  const auto& grid = team.grid;
  RoundResult res;
  res.round = round;
  res.t = t;
  res.controls.assign(N, JVec());
  std::vector<std::string> diag;
  const std::uint64_t first_seq = bus.clock();

  for (std::size_t pos = 0; pos < team.priority.size(); ++pos) {
    const int id = team.priority[pos];
    const auto& p = team.agent(id);
    auto& mem = detail::memory_for(memory, team, id);
    std::vector<int> below(team.priority.begin() + static_cast<long>(pos) + 1, team.priority.end());

    SolveRecord rec;
    rec.agent = id;
    rec.stamp = bus.clock();
    const VecX U0 = mem.warm_start.size() ? mem.warm_start : equilibrium_warm_start(p, team.object, states[id - 1].q, grid);
    try {
      if (id == 1) {
        const auto s = leader_setup(team, states, mem);
        for (int f = 2; f <= N; ++f) rec.constraint_sources.push_back(team.agent(f).name);
        {
          const auto probe = transcribe_leader(grid, s, TerminalMode::Hard);
          NlpEval e;
          try {
            probe.nlp.evaluate(U0, e, false);
            rec.warm_start_cost = e.r.squaredNorm();
          } catch (const SingularityError&) {
            rec.warm_start_cost = kInf;
          }
        }
        rec.solution = solve_leader(grid, s, U0, false, team.solver);
      } else {
        const auto inbox = bus.receive(round, id, rec.stamp);
        const PredictionMessage* lead = nullptr;
        for (const auto& m : inbox) {
          rec.consumed.push_back(m.sequence);
          const double err = message_consistency(team.agent(m.sender), m);
          if (err > 1e-10)
            throw InfeasibilityError("message inconsistency", "message " + std::to_string(m.sequence) + " from agent " +
                                                                  std::to_string(m.sender) + " off by " + std::to_string(err));
          if (m.sender == 1) lead = &m;
        }
        if (!lead) throw InfeasibilityError("protocol error", "no leader prediction received");
        FollowerSetup s;
        s.agent = p;
        s.object = team.object;
        s.x0 = states[id - 1];
        s.u_prev = mem.u_prev;
        s.obstacles = team.obstacles;
        s.workspace_radius = team.workspace_radius;
        s.cost = team.follower_cost;
        for (int k = 0; k < lead->nodes(); ++k) {
          s.leader_pose.push_back(task_coordinates(p.task_rows, lead->object_pose[k]));
          s.leader_twist.push_back(task_twist(p.task_rows, lead->object_twist[k]));
        }
        s.predicted_bodies.assign(static_cast<std::size_t>(grid.K() + 1), {});
        for (const auto& m : inbox) {
          rec.constraint_sources.push_back(team.agent(m.sender).name);
          for (int k = 0; k <= grid.K(); ++k) {
            std::vector<std::string> labels;
            detail::add_bodies(team.agent(m.sender), m.q[k], s.predicted_bodies[k], labels);
            if (k == 0) s.predicted_labels.insert(s.predicted_labels.end(), labels.begin(), labels.end());
          }
        }
        for (int lower : below) {
          rec.constraint_sources.push_back(team.agent(lower).name);
          detail::add_bodies(team.agent(lower), states[lower - 1].q, s.current_bodies, s.current_labels);
        }
        rec.solution = solve_follower(grid, s, U0, team.penalty, mem.rho, team.solver);
      }
    } catch (const InfeasibilityError& e) {
      diag.push_back(p.name + ": " + e.what());
      throw RoundAbort(e.reason(), diag);
    } catch (const SingularityError& e) {
      diag.push_back(p.name + ": " + e.what());
      throw RoundAbort("singularity", diag);
    }

    const auto step = receding_step(rec.solution, grid);
    rec.u = step.u;
    mem.warm_start = step.warm_start;
    mem.u_prev = step.u;
    res.controls[id - 1] = step.u;
    if (!below.empty()) {
      // the leader broadcasts to every follower; followers forward down-priority
      bus.send(make_message(round, id, below, t, grid, rec.solution));
    }
    diag.push_back(p.name + ": " + to_string(rec.solution.status) + ", " + std::to_string(rec.solution.iterations) +
                   " iterations");
    res.solves.push_back(std::move(rec));
  }
  res.messages = static_cast<int>(bus.clock() - first_seq);
  return res;
}

}  // namespace coopnmpc

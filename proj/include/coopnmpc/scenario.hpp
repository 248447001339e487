#pragma once

// Scenario files: JSON with the unit in every dimensional key. Unknown keys
// are rejected; infinite bounds are written as null.

#include "coopnmpc/sim.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace coopnmpc {

/// Scenario text that does not parse or does not describe a valid run.
class ScenarioError : public std::runtime_error {
 public:
  enum class Kind { Parse, Validation };
  ScenarioError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace scenario_detail {

using nlohmann::json;

[[noreturn]] inline void field_error(const std::string& path, const std::string& msg) {
  throw ScenarioError(ScenarioError::Kind::Parse, "field '" + path + "': " + msg);
}

[[noreturn]] inline void invalid(const std::string& invariant, const std::string& msg) {
  throw ScenarioError(ScenarioError::Kind::Validation, invariant + ": " + msg);
}

/// Walks one JSON object, remembering which keys were consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) field_error(path_, "expected an object");
  }
  ~Reader() = default;

  bool has(const std::string& k) const { return j_.contains(k); }
  std::string at(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json& get(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) field_error(at(k), "missing");
    return j_.at(k);
  }

  double number(const std::string& k) {
    const auto& v = get(k);
    if (v.is_null()) return kInf;
    if (!v.is_number()) field_error(at(k), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& k, double fallback) { return has(k) ? number(k) : fallback; }

  int integer(const std::string& k) {
    const auto& v = get(k);
    if (!v.is_number_integer()) field_error(at(k), "expected an integer");
    return v.get<int>();
  }
  int integer(const std::string& k, int fallback) { return has(k) ? integer(k) : fallback; }

  std::string text(const std::string& k) {
    const auto& v = get(k);
    if (!v.is_string()) field_error(at(k), "expected a string");
    return v.get<std::string>();
  }

  VecX vector(const std::string& k, int expected = -1) {
    const auto& v = get(k);
    if (!v.is_array()) field_error(at(k), "expected an array");
    VecX out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].is_null()) out[static_cast<Eigen::Index>(i)] = kInf;
      else if (v[i].is_number()) out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
      else field_error(at(k) + "[" + std::to_string(i) + "]", "expected a number");
    }
    if (expected >= 0 && out.size() != expected)
      field_error(at(k), "expected " + std::to_string(expected) + " entries, got " + std::to_string(out.size()));
    return out;
  }

  Vec3 vec3(const std::string& k) { return vector(k, 3); }

  std::vector<int> indices(const std::string& k) {
    const auto& v = get(k);
    if (!v.is_array()) field_error(at(k), "expected an array");
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer()) field_error(at(k) + "[" + std::to_string(i) + "]", "expected an integer");
      out.push_back(v[i].get<int>());
    }
    return out;
  }

  /// Square matrix given as "<k>_diag" (diagonal) or "<k>" (rows).
  MatX matrix(const std::string& k) {
    if (has(k + "_diag")) return vector(k + "_diag").asDiagonal();
    const auto& v = get(k);
    if (!v.is_array()) field_error(at(k), "expected an array of rows");
    const int n = static_cast<int>(v.size());
    MatX out(n, n);
    for (int r = 0; r < n; ++r) {
      if (!v[r].is_array() || static_cast<int>(v[r].size()) != n)
        field_error(at(k) + "[" + std::to_string(r) + "]", "expected a row of " + std::to_string(n) + " numbers");
      for (int c = 0; c < n; ++c) {
        if (!v[r][c].is_number()) field_error(at(k) + "[" + std::to_string(r) + "][" + std::to_string(c) + "]", "expected a number");
        out(r, c) = v[r][c].get<double>();
      }
    }
    return out;
  }

  Reader child(const std::string& k) { return Reader(get(k), at(k)); }

  std::vector<Reader> children(const std::string& k) {
    const auto& v = get(k);
    if (!v.is_array()) field_error(at(k), "expected an array");
    std::vector<Reader> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], at(k) + "[" + std::to_string(i) + "]");
    return out;
  }

  /// Reject keys nobody asked for.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) field_error(at(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json array(const VecX& v) {
  auto out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

inline json matrix(const MatX& m) {
  auto out = json::array();
  for (int r = 0; r < m.rows(); ++r) out.push_back(array(m.row(r).transpose()));
  return out;
}

inline void put_matrix(json& j, const std::string& k, const MatX& m) {
  if (m.isDiagonal(0.0)) j[k + "_diag"] = array(m.diagonal());
  else j[k] = matrix(m);
}

inline AgentParams parse_agent(Reader& a, AgentState& init) {
  AgentParams p;
  p.name = a.text("name");
  p.base_mass = a.number("base_mass_kg");
  p.base_inertia = a.vec3("base_inertia_kg_m2");
  p.arm_mount = a.vec3("arm_mount_m");
  for (auto& l : a.children("links")) {
    LinkParams lp;
    lp.length = l.number("length_m");
    lp.mass = l.number("mass_kg");
    lp.inertia = l.vec3("inertia_kg_m2");
    l.finish();
    p.links.push_back(lp);
  }
  p.active_joints = a.indices("active_joints");
  p.nominal_configuration = a.vector("nominal_configuration_m_rad", p.full_dof());
  p.task_rows = a.indices("task_rows");
  p.grasp_offset = a.vec3("grasp_offset_m");
  p.grasp_orientation = a.vec3("grasp_orientation_rad");
  p.load_share = a.number("load_share");
  p.gravity = a.number("gravity_m_s2");
  {
    auto l = a.child("limits");
    auto& L = p.limits;
    L.input_component = l.number("input_bound_N_Nm");
    L.torque_norm = l.number("torque_norm_Nm");
    L.torque_rate_norm = l.number("torque_rate_norm_Nm_s");
    L.joint_velocity = l.number("joint_velocity_m_rad_s");
    L.arm_velocity_norm = l.number("arm_velocity_norm_rad_s");
    L.singularity_floor = l.number("singularity_floor");
    L.tilt = l.number("tilt_rad");
    L.joint_lower = l.vector("joint_lower_m_rad", p.dof());
    L.joint_upper = l.vector("joint_upper_m_rad", p.dof());
    for (int k = 0; k < p.dof(); ++k)
      if (L.joint_lower[k] == kInf) L.joint_lower[k] = -kInf;
    l.finish();
  }
  for (auto& e : a.children("ellipsoids")) {
    BodyEllipsoid b;
    b.frame = e.integer("frame");
    b.center = e.vec3("center_m");
    b.semi_axes = e.vec3("semi_axes_m");
    e.finish();
    p.ellipsoids.push_back(b);
  }
  init.q = a.vector("initial_q_m_rad", p.dof());
  init.qdot = a.has("initial_qdot_m_rad_s") ? JVec(a.vector("initial_qdot_m_rad_s", p.dof())) : JVec::Zero(p.dof());
  a.finish();
  return p;
}

inline json agent_json(const AgentParams& p, const AgentState& init) {
  json a;
  a["name"] = p.name;
  a["base_mass_kg"] = p.base_mass;
  a["base_inertia_kg_m2"] = array(p.base_inertia);
  a["arm_mount_m"] = array(p.arm_mount);
  a["links"] = json::array();
  for (const auto& l : p.links)
    a["links"].push_back({{"length_m", l.length}, {"mass_kg", l.mass}, {"inertia_kg_m2", array(l.inertia)}});
  a["active_joints"] = p.active_joints;
  a["nominal_configuration_m_rad"] = array(p.nominal_configuration);
  a["task_rows"] = p.task_rows;
  a["grasp_offset_m"] = array(p.grasp_offset);
  a["grasp_orientation_rad"] = array(p.grasp_orientation);
  a["load_share"] = p.load_share;
  a["gravity_m_s2"] = p.gravity;
  const auto& L = p.limits;
  a["limits"] = {{"input_bound_N_Nm", number(L.input_component)},
                 {"torque_norm_Nm", number(L.torque_norm)},
                 {"torque_rate_norm_Nm_s", number(L.torque_rate_norm)},
                 {"joint_velocity_m_rad_s", number(L.joint_velocity)},
                 {"arm_velocity_norm_rad_s", number(L.arm_velocity_norm)},
                 {"singularity_floor", L.singularity_floor},
                 {"tilt_rad", L.tilt},
                 {"joint_lower_m_rad", array(L.joint_lower)},
                 {"joint_upper_m_rad", array(L.joint_upper)}};
  a["ellipsoids"] = json::array();
  for (const auto& e : p.ellipsoids)
    a["ellipsoids"].push_back({{"frame", e.frame}, {"center_m", array(e.center)}, {"semi_axes_m", array(e.semi_axes)}});
  a["initial_q_m_rad"] = array(init.q);
  a["initial_qdot_m_rad_s"] = array(init.qdot);
  return a;
}

inline bool positive_definite(const MatX& A, bool semi) {
  if (A.rows() != A.cols() || (A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  const VecX ev = Eigen::SelfAdjointEigenSolver<MatX>(A).eigenvalues();
  return semi ? ev.minCoeff() >= 0.0 : ev.minCoeff() > 0.0;
}

inline HessianMode hessian_mode(const std::string& s, const std::string& path) {
  if (s == "gauss_newton") return HessianMode::GaussNewton;
  if (s == "damped_bfgs") return HessianMode::DampedBfgs;
  field_error(path, "expected \"gauss_newton\" or \"damped_bfgs\"");
}

}  // namespace scenario_detail

/// Invariants a parsed scenario must satisfy; throws ScenarioError naming
/// the violated invariant.
inline void validate_scenario(const ScenarioConfig& c) {
  using scenario_detail::invalid;
  const Team& t = c.team;
  const int N = t.size();
  if (N < 1) invalid("team size", "at least one agent is required");
  try {
    t.grid.validate();
  } catch (const std::invalid_argument& e) {
    invalid("horizon grid", e.what());
  }
  if (!(c.total_time > 0.0)) invalid("total time", "must be positive");
  if (std::abs(c.total_time / t.grid.h - std::round(c.total_time / t.grid.h)) > 1e-9)
    invalid("total time", "must be an integer multiple of the sampling period");
  if (c.integration_substeps < 1) invalid("integration substeps", "must be at least 1");
  if (!(c.monitor_tolerance >= 0.0)) invalid("monitor tolerance", "must be non-negative");
  if (!(c.initial_perturbation >= 0.0)) invalid("initial perturbation", "must be non-negative");
  double share = 0.0;
  for (const auto& p : t.agents) {
    if (!(p.load_share > 0.0)) invalid("load-share invariant", p.name + " has non-positive load_share");
    share += p.load_share;
  }
  if (std::abs(share - 1.0) > 1e-9)
    invalid("load-share invariant", "load shares sum to " + std::to_string(share) + ", must sum to 1");
  std::set<std::string> names;
  for (int i = 0; i < N; ++i) {
    const auto& p = t.agents[i];
    if (!names.insert(p.name).second) invalid("agent names", "duplicate name " + p.name);
    const auto& L = p.limits;
    for (double b : {L.input_component, L.torque_norm, L.torque_rate_norm, L.joint_velocity, L.arm_velocity_norm, L.tilt})
      if (!(b > 0.0)) invalid("bounds positive", p.name + " has a non-positive bound");
    if (!(L.singularity_floor >= 0.0)) invalid("bounds positive", p.name + " has a negative singularity floor");
    for (int k = 0; k < p.dof(); ++k)
      if (!(L.joint_lower[k] < L.joint_upper[k])) invalid("joint box", p.name + " joint " + std::to_string(k) + " is empty");
    for (int j : p.active_joints)
      if (j < 0 || j >= p.full_dof()) invalid("active joints", p.name + " has an index outside the configuration");
    if (p.dof() < 1 || p.dof() > kMaxJoints) invalid("active joints", p.name + " has an unsupported joint count");
    if (p.task_dim() < 1 || p.task_dim() > 6) invalid("task rows", p.name + " needs 1 to 6 task rows");
    for (int r : p.task_rows)
      if (r < 0 || r > 5) invalid("task rows", p.name + " has a row outside 0..5");
    if (p.task_dim() != t.agents[0].task_dim()) invalid("task rows", "all agents must share the task space");
    if (!(p.base_mass > 0.0)) invalid("masses positive", p.name + " base mass");
    for (const auto& l : p.links)
      if (!(l.mass > 0.0) || !(l.length > 0.0)) invalid("masses positive", p.name + " link mass and length");
    for (const auto& e : p.ellipsoids) {
      if (e.frame < 0 || e.frame > static_cast<int>(p.links.size())) invalid("ellipsoid frame", p.name + " frame out of range");
      if (!(e.semi_axes.minCoeff() > 0.0)) invalid("ellipsoid axes", p.name + " semi-axes must be positive");
    }
    if (c.initial.size() != static_cast<std::size_t>(N) || c.initial[i].q.size() != p.dof() ||
        c.initial[i].qdot.size() != p.dof())
      invalid("initial state", p.name + " initial state has the wrong size");
  }
  if (!(t.object.mass > 0.0)) invalid("masses positive", "object mass");
  if (!scenario_detail::positive_definite(t.object.inertia, false)) invalid("object inertia", "must be positive definite");
  const int m = t.agents[0].task_dim();
  if (t.x_des.size() != m) invalid("goal", "x_des needs one entry per task row");
  if (t.leader_gains.Q.rows() != 2 * m || !scenario_detail::positive_definite(t.leader_gains.Q, true))
    invalid("gains", "Q must be a positive semidefinite " + std::to_string(2 * m) + "x" + std::to_string(2 * m) + " matrix");
  if (t.leader_gains.P.rows() != 2 * m || !scenario_detail::positive_definite(t.leader_gains.P, false))
    invalid("gains", "P must be a positive definite " + std::to_string(2 * m) + "x" + std::to_string(2 * m) + " matrix");
  if (t.leader_gains.R.rows() != m || !scenario_detail::positive_definite(t.leader_gains.R, false))
    invalid("gains", "R must be a positive definite " + std::to_string(m) + "x" + std::to_string(m) + " matrix");
  if (!(t.leader_gains.eps > 0.0)) invalid("gains", "terminal level must be positive");
  if (N > 1 && (t.follower_cost.R.rows() != m || !scenario_detail::positive_definite(t.follower_cost.R, false)))
    invalid("gains", "follower R must be a positive definite " + std::to_string(m) + "x" + std::to_string(m) + " matrix");
  try {
    t.validate_priority();
  } catch (const std::invalid_argument& e) {
    invalid("priority order", e.what());
  }
  for (std::size_t z = 0; z < t.obstacles.size(); ++z) {
    try {
      validate_ellipsoid(t.obstacles[z]);
    } catch (const std::exception& e) {
      invalid("obstacle shape", e.what());
    }
    if (std::isfinite(t.workspace_radius)) {
      const double reach = 1.0 / std::sqrt(Eigen::SelfAdjointEigenSolver<Mat3>(t.obstacles[z].shape).eigenvalues().minCoeff());
      if (t.obstacles[z].center.norm() + reach > t.workspace_radius)
        invalid("obstacle inside workspace", "obstacle " + std::to_string(z) + " reaches outside the workspace");
    }
  }
  if (!(t.authority_margin > 0.0 && t.authority_margin <= 1.0)) invalid("authority margin", "must lie in (0, 1]");
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& root) {
  using namespace scenario_detail;
  Reader r(root, "");
  ScenarioConfig c;
  Team& t = c.team;
  c.name = r.text("name");
  c.total_time = r.number("total_time_s");
  if (r.has("seed")) {
    if (!r.get("seed").is_number_unsigned()) field_error("seed", "expected a non-negative integer");
    c.seed = r.get("seed").get<std::uint64_t>();
  }
  c.initial_perturbation = r.number("initial_perturbation_m_rad", 0.0);
  c.integration_substeps = r.integer("integration_substeps", 4);
  c.monitor_tolerance = r.number("monitor_tolerance", 1e-4);
  c.stop_error = r.number("stop_error", 1e-9);
  {
    auto g = r.child("grid");
    t.grid.h = g.number("sampling_period_s");
    t.grid.T_p = g.number("horizon_s");
    t.grid.substeps = g.integer("rk4_substeps", 2);
    g.finish();
  }
  {
    auto o = r.child("object");
    t.object.mass = o.number("mass_kg");
    t.object.inertia = o.matrix("inertia_kg_m2");
    if (t.object.inertia.rows() != 3) field_error("object.inertia_kg_m2", "expected a 3x3 matrix");
    t.object.semi_axes = o.vec3("semi_axes_m");
    t.object.gravity = o.number("gravity_m_s2");
    o.finish();
  }
  t.workspace_radius = r.number("workspace_radius_m", kInf);
  if (r.has("obstacles")) {
    for (auto& o : r.children("obstacles")) {
      const Vec3 center = o.vec3("center_m");
      if (o.has("radius_m")) t.obstacles.push_back(Ellipsoid::sphere(center, o.number("radius_m")));
      else if (o.has("semi_axes_m")) t.obstacles.push_back(Ellipsoid::from_axes(center, o.vec3("semi_axes_m"), Mat3::Identity()));
      else {
        const MatX S = o.matrix("shape_per_m2");
        if (S.rows() != 3) field_error(o.at("shape_per_m2"), "expected a 3x3 matrix");
        t.obstacles.push_back({center, S});
      }
      o.finish();
    }
  }
  t.x_des = r.vector("goal_object_m_rad");
  {
    auto l = r.child("leader");
    t.leader_gains.Q = l.matrix("Q");
    t.leader_gains.R = l.matrix("R");
    t.leader_gains.P = l.matrix("P");
    t.leader_gains.eps = l.number("terminal_level");
    t.leader_gains.soft_weight = l.number("soft_terminal_weight", 1e4);
    t.authority_margin = l.number("follower_authority_margin", 0.97);
    l.finish();
  }
  if (r.has("follower")) {
    auto f = r.child("follower");
    t.follower_cost.R = f.matrix("R");
    t.follower_cost.qdot_weight = f.number("qdot_weight");
    t.penalty.initial = f.number("penalty_initial", t.penalty.initial);
    t.penalty.factor = f.number("penalty_factor", t.penalty.factor);
    t.penalty.max = f.number("penalty_max", t.penalty.max);
    t.penalty.tolerance = f.number("equality_tolerance", t.penalty.tolerance);
    t.penalty.infeasible = f.number("equality_infeasible", t.penalty.infeasible);
    f.finish();
  }
  if (r.has("solver")) {
    auto s = r.child("solver");
    t.solver.max_iterations = s.integer("max_iterations", t.solver.max_iterations);
    t.solver.kkt_tolerance = s.number("kkt_tolerance", t.solver.kkt_tolerance);
    t.solver.feasibility_tolerance = s.number("feasibility_tolerance", t.solver.feasibility_tolerance);
    if (s.has("hessian")) t.solver.hessian = hessian_mode(s.text("hessian"), s.at("hessian"));
    s.finish();
  }
  for (auto& a : r.children("agents")) {
    AgentState init;
    t.agents.push_back(parse_agent(a, init));
    c.initial.push_back(init);
  }
  if (r.has("priority")) t.priority = r.indices("priority");
  else
    for (int i = 1; i <= t.size(); ++i) t.priority.push_back(i);
  r.finish();
  validate_scenario(c);
  return c;
}

inline nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  using namespace scenario_detail;
  const Team& t = c.team;
  json j;
  j["name"] = c.name;
  j["total_time_s"] = c.total_time;
  j["seed"] = c.seed;
  j["initial_perturbation_m_rad"] = c.initial_perturbation;
  j["integration_substeps"] = c.integration_substeps;
  j["monitor_tolerance"] = c.monitor_tolerance;
  j["stop_error"] = c.stop_error;
  j["grid"] = {{"sampling_period_s", t.grid.h}, {"horizon_s", t.grid.T_p}, {"rk4_substeps", t.grid.substeps}};
  json o;
  o["mass_kg"] = t.object.mass;
  put_matrix(o, "inertia_kg_m2", t.object.inertia);
  o["semi_axes_m"] = array(t.object.semi_axes);
  o["gravity_m_s2"] = t.object.gravity;
  j["object"] = o;
  j["workspace_radius_m"] = number(t.workspace_radius);
  j["obstacles"] = json::array();
  for (const auto& e : t.obstacles) {
    // the friendliest form that reproduces the shape matrix exactly
    const Vec3 axes = e.shape.diagonal().cwiseSqrt().cwiseInverse();
    json z;
    z["center_m"] = array(e.center);
    if (Ellipsoid::sphere(e.center, axes.x()).shape == e.shape) z["radius_m"] = axes.x();
    else if (Ellipsoid::from_axes(e.center, axes, Mat3::Identity()).shape == e.shape) z["semi_axes_m"] = array(axes);
    else z["shape_per_m2"] = matrix(e.shape);
    j["obstacles"].push_back(z);
  }
  j["goal_object_m_rad"] = array(t.x_des);
  json l;
  put_matrix(l, "Q", t.leader_gains.Q);
  put_matrix(l, "R", t.leader_gains.R);
  put_matrix(l, "P", t.leader_gains.P);
  l["terminal_level"] = t.leader_gains.eps;
  l["soft_terminal_weight"] = t.leader_gains.soft_weight;
  l["follower_authority_margin"] = t.authority_margin;
  j["leader"] = l;
  if (t.follower_cost.R.size()) {
    json f;
    put_matrix(f, "R", t.follower_cost.R);
    f["qdot_weight"] = t.follower_cost.qdot_weight;
    f["penalty_initial"] = t.penalty.initial;
    f["penalty_factor"] = t.penalty.factor;
    f["penalty_max"] = t.penalty.max;
    f["equality_tolerance"] = t.penalty.tolerance;
    f["equality_infeasible"] = t.penalty.infeasible;
    j["follower"] = f;
  }
  j["solver"] = {{"max_iterations", t.solver.max_iterations},
                 {"kkt_tolerance", t.solver.kkt_tolerance},
                 {"feasibility_tolerance", t.solver.feasibility_tolerance},
                 {"hessian", t.solver.hessian == HessianMode::GaussNewton ? "gauss_newton" : "damped_bfgs"}};
  j["agents"] = json::array();
  for (int i = 0; i < t.size(); ++i) j["agents"].push_back(agent_json(t.agents[i], c.initial[i]));
  j["priority"] = t.priority;
  return j;
}

/// Parse scenario text; parse errors carry the line number.
inline ScenarioConfig parse_scenario_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min(text.size(), static_cast<std::size_t>(e.byte));
    const long line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto ? upto - 1 : 0), '\n');
    throw ScenarioError(ScenarioError::Kind::Parse, "line " + std::to_string(line) + ": " + e.what());
  }
  try {
    return scenario_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(ScenarioError::Kind::Parse, e.what());
  }
}

inline ScenarioConfig parse_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(ScenarioError::Kind::Parse, "cannot read scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

inline std::string serialize_scenario(const ScenarioConfig& c) { return scenario_to_json(c).dump(2) + "\n"; }

/// Run-time overrides from the command line.
struct ScenarioOverrides {
  std::optional<double> horizon;     ///< T_p (s)
  std::optional<double> total_time;  ///< s
  std::optional<std::uint64_t> seed;
  std::optional<double> q_weight;    ///< Q = w·I
  std::optional<double> r_weight;    ///< R = w·I
  std::optional<double> p_weight;    ///< P = w·I
};

inline void apply_overrides(ScenarioConfig& c, const ScenarioOverrides& o) {
  auto& g = c.team.leader_gains;
  if (o.horizon) c.team.grid.T_p = *o.horizon;
  if (o.total_time) c.total_time = *o.total_time;
  if (o.seed) c.seed = *o.seed;
  if (o.q_weight) g.Q = MatX::Identity(g.Q.rows(), g.Q.cols()) * *o.q_weight;
  if (o.r_weight) g.R = MatX::Identity(g.R.rows(), g.R.cols()) * *o.r_weight;
  if (o.p_weight) g.P = MatX::Identity(g.P.rows(), g.P.cols()) * *o.p_weight;
  validate_scenario(c);
}

/// Field-by-field equality of two configurations.
inline bool same_scenario(const ScenarioConfig& a, const ScenarioConfig& b) {
  auto same_m = [](const MatX& x, const MatX& y) { return x.rows() == y.rows() && x.cols() == y.cols() && x == y; };
  auto same_v = [](const VecX& x, const VecX& y) { return x.size() == y.size() && x == y; };
  const Team &s = a.team, &t = b.team;
  if (a.name != b.name || a.total_time != b.total_time || a.seed != b.seed ||
      a.initial_perturbation != b.initial_perturbation || a.integration_substeps != b.integration_substeps ||
      a.monitor_tolerance != b.monitor_tolerance || a.stop_error != b.stop_error)
    return false;
  if (s.grid.h != t.grid.h || s.grid.T_p != t.grid.T_p || s.grid.substeps != t.grid.substeps) return false;
  if (!(s.object == t.object) || s.workspace_radius != t.workspace_radius || !same_v(s.x_des, t.x_des)) return false;
  if (s.obstacles.size() != t.obstacles.size()) return false;
  for (std::size_t z = 0; z < s.obstacles.size(); ++z)
    if (s.obstacles[z].center != t.obstacles[z].center || s.obstacles[z].shape != t.obstacles[z].shape) return false;
  if (!same_m(s.leader_gains.Q, t.leader_gains.Q) || !same_m(s.leader_gains.R, t.leader_gains.R) ||
      !same_m(s.leader_gains.P, t.leader_gains.P) || s.leader_gains.eps != t.leader_gains.eps ||
      s.leader_gains.soft_weight != t.leader_gains.soft_weight || s.authority_margin != t.authority_margin)
    return false;
  if (!same_m(s.follower_cost.R, t.follower_cost.R) || s.follower_cost.qdot_weight != t.follower_cost.qdot_weight)
    return false;
  if (s.penalty.initial != t.penalty.initial || s.penalty.factor != t.penalty.factor || s.penalty.max != t.penalty.max ||
      s.penalty.tolerance != t.penalty.tolerance || s.penalty.infeasible != t.penalty.infeasible)
    return false;
  if (s.solver.max_iterations != t.solver.max_iterations || s.solver.kkt_tolerance != t.solver.kkt_tolerance ||
      s.solver.feasibility_tolerance != t.solver.feasibility_tolerance || s.solver.hessian != t.solver.hessian)
    return false;
  if (!(s.agents == t.agents) || s.priority != t.priority || a.initial.size() != b.initial.size()) return false;
  for (std::size_t i = 0; i < a.initial.size(); ++i)
    if (a.initial[i].q != b.initial[i].q || a.initial[i].qdot != b.initial[i].qdot) return false;
  return true;
}

}  // namespace coopnmpc

#include "coopnmpc/fhocp.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace coopnmpc;
using namespace testutil;

namespace {

LeaderGains transport_gains() {
  LeaderGains g;
  g.Q = MatX::Identity(8, 8) * 0.5;
  g.P = MatX::Identity(8, 8) * 0.5;
  g.R = MatX::Identity(4, 4) * 0.5;
  return g;
}

std::vector<AgentParams> boxed_team() {
  auto team = three_agent_team();
  const double eps = 0.05, pi = std::numbers::pi;
  for (int i = 0; i < 3; ++i) {
    auto& L = team[i].limits;
    L.input_component = 8.5;
    L.singularity_floor = 0.05;
    if (i == 0) L.joint_lower << -kInf, -kInf, eps, -pi / 2 + eps;
    else L.joint_lower << -kInf, -kInf, -pi / 2 + eps, -pi / 2 + eps;
    if (i == 0) L.joint_upper << kInf, kInf, pi / 2 - eps, pi / 2 - eps;
    else L.joint_upper << kInf, kInf, -eps, pi / 2 - eps;
  }
  return team;
}

LeaderSetup leader_at_start(const VecX& x_des) {
  const auto team = boxed_team();
  const auto qs = three_agent_initial_q();
  LeaderSetup s;
  s.agent = team[0];
  s.object = small_object();
  s.x0 = {qs[0], JVec::Zero(4)};
  s.x_des = x_des;
  s.gains = transport_gains();
  for (int i = 1; i < 3; ++i) {
    for (const auto& b : agent_ellipsoids(team[i], qs[i])) s.other_bodies.push_back(b);
    s.followers.push_back(team[i]);
    s.follower_q.push_back(qs[i]);
  }
  return s;
}

VecX start_pose() { return (VecX(4) << 0, -2.2071, 0.9071, std::numbers::pi / 2).finished(); }

AgentState rk4_oracle(const AgentParams& p, const ObjectParams& o, AgentState x, const JVec& u, double dt) {
  auto f = [&](const AgentState& s) { return forward_dynamics(p, o, s, u, false); };
  const auto k1 = f(x);
  const auto k2 = f({x.q + dt / 2 * k1.qdot, x.qdot + dt / 2 * k1.qddot});
  const auto k3 = f({x.q + dt / 2 * k2.qdot, x.qdot + dt / 2 * k2.qddot});
  const auto k4 = f({x.q + dt * k3.qdot, x.qdot + dt * k3.qddot});
  x.q += dt / 6 * (k1.qdot + 2 * k2.qdot + 2 * k3.qdot + k4.qdot);
  x.qdot += dt / 6 * (k1.qddot + 2 * k2.qddot + 2 * k3.qddot + k4.qddot);
  return x;
}

}  // namespace

TEST(HorizonGrid, HalfSecondHorizonHasFiveIntervals) {
  const HorizonGrid g{0.1, 0.5};
  EXPECT_NO_THROW(g.validate());
  EXPECT_EQ(g.K(), 5);
  EXPECT_EQ(g.node_times(1.0).size(), 6u);
  EXPECT_THROW((HorizonGrid{0.1, 0.45}.validate()), std::invalid_argument);
  EXPECT_THROW((HorizonGrid{0.0, 0.5}.validate()), std::invalid_argument);
  EXPECT_THROW((HorizonGrid{0.1, 0.5, 3}.validate()), std::invalid_argument);
}

TEST(TranscribeLeader, CostMatchesIndependentAssembly) {
  const HorizonGrid grid{0.1, 0.5};
  VecX x_des = start_pose();
  x_des[0] = 5.0;
  const auto s = leader_at_start(x_des);
  const auto prob = transcribe_leader(grid, s, TerminalMode::Hard);
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 3; ++trial) {
    VecX U(20);
    for (int i = 0; i < 20; ++i) U[i] = uniform(rng, -3, 3);
    U += equilibrium_warm_start(s.agent, s.object, s.x0.q, grid);
    NlpEval e;
    prob.nlp.evaluate(U, e, false);

    // independent assembly: two RK4 half-steps per interval, Simpson on e
    double J = 0.0;
    AgentState x = s.x0;
    auto F = [&](const AgentState& y) {
      const VecX ey = error_state(s.agent, y.q, y.qdot, x_des);
      return ey.dot(s.gains.Q * ey);
    };
    for (int k = 0; k < 5; ++k) {
      const JVec u = U.segment(4 * k, 4);
      const JVec du = u - equilibrium_input(s.agent, s.object, x.q, false);
      const AgentState xm = rk4_oracle(s.agent, s.object, x, u, 0.05);
      const AgentState x1 = rk4_oracle(s.agent, s.object, xm, u, 0.05);
      J += 0.1 / 6 * (F(x) + 4 * F(xm) + F(x1)) + 0.1 * du.dot(s.gains.R * du);
      x = x1;
    }
    const VecX eK = error_state(s.agent, x.q, x.qdot, x_des);
    J += eK.dot(s.gains.P * eK);
    EXPECT_NEAR(e.r.squaredNorm(), J, 1e-10 * std::max(1.0, J));
    EXPECT_NEAR(e.ci[prob.terminal_ci_row], eK.dot(s.gains.P * eK) - s.gains.eps, 1e-10 * std::max(1.0, J));
  }
}

TEST(TranscribeLeader, GoalAtStartKeepsEquilibrium) {
  const HorizonGrid grid{0.1, 0.5};
  auto s = leader_at_start(start_pose());
  s.x_des = task_coordinates(s.agent.task_rows, object_pose_from_agent(s.agent, s.x0.q));
  s.other_bodies.clear();
  const auto prob = transcribe_leader(grid, s, TerminalMode::Hard);
  const VecX U0 = equilibrium_warm_start(s.agent, s.object, s.x0.q, grid);
  const auto sol = solve_fhocp(prob, U0);
  EXPECT_EQ(sol.status, SqpStatus::Converged);
  EXPECT_LE(sol.cost, 1e-12);
  EXPECT_NEAR(sol.cost, sol.terminal_value, 1e-12);
  EXPECT_LE((sol.decision - U0).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(sol.iterations, 1);
}

TEST(TranscribeLeader, InfeasibleInitialNodeReported) {
  const HorizonGrid grid{0.1, 0.5};
  auto s = leader_at_start(start_pose());
  s.obstacles = {Ellipsoid::sphere(forward_kinematics(s.agent, s.x0.q).p_E, 0.3)};
  try {
    transcribe_leader(grid, s, TerminalMode::Hard);
    FAIL() << "expected infeasibility";
  } catch (const InfeasibilityError& e) {
    EXPECT_EQ(e.reason(), "leader infeasibility");
  }
}

TEST(TranscribeLeader, ConstraintRowsPerNode) {
  const HorizonGrid grid{0.1, 0.5};
  const auto s = leader_at_start(start_pose());
  const auto prob = transcribe_leader(grid, s, TerminalMode::Hard);
  NlpEval e;
  prob.nlp.evaluate(equilibrium_warm_start(s.agent, s.object, s.x0.q, grid), e, false);
  ASSERT_EQ(static_cast<std::size_t>(e.ci.size()), prob.ci_labels.size());
  int object_rows = 0, authority_rows = 0, follower_state_rows = 0;
  for (const auto& l : prob.ci_labels) {
    object_rows += l.find("object_tilt_hi") != std::string::npos;
    authority_rows += l.find("follower[agent3].u_box") != std::string::npos;
    follower_state_rows += l.rfind("node[", 0) == 0 && l.find("follower[agent3]") != std::string::npos;
  }
  StateConstraintContext fc;
  fc.obstacles = s.obstacles;
  const auto f_rows = state_residuals(s.followers[1], {s.follower_q[1], JVec::Zero(4)}, fc).labels.size();
  EXPECT_EQ(object_rows, 5);
  EXPECT_EQ(authority_rows, 5 * 3 * 4);
  EXPECT_EQ(follower_state_rows, static_cast<int>(5 * f_rows));
  EXPECT_EQ(prob.ci_labels.back(), "terminal");
  EXPECT_TRUE(prob.nlp.upper.isApproxToConstant(8.5));
}

TEST(TranscribeLeader, FiniteDifferenceJacobianMatchesCentral) {
  const HorizonGrid grid{0.1, 0.5};
  VecX x_des = start_pose();
  x_des[0] = 1.0;
  const auto s = leader_at_start(x_des);
  const auto prob = transcribe_leader(grid, s, TerminalMode::Hard);
  std::mt19937_64 rng(62);
  VecX U = equilibrium_warm_start(s.agent, s.object, s.x0.q, grid);
  for (int i = 0; i < U.size(); ++i) U[i] += uniform(rng, -1, 1);
  NlpEval e, ep, em;
  prob.nlp.evaluate(U, e, true);
  for (int c : {0, 7, 19}) {
    VecX Up = U, Um = U;
    Up[c] += 1e-5;
    Um[c] -= 1e-5;
    prob.nlp.evaluate(Up, ep, false);
    prob.nlp.evaluate(Um, em, false);
    const VecX dr = (ep.r - em.r) / 2e-5, dc = (ep.ci - em.ci) / 2e-5;
    EXPECT_LE((e.Jr.col(c) - dr).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, dr.cwiseAbs().maxCoeff())) << c;
    EXPECT_LE((e.Jci.col(c) - dc).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, dc.cwiseAbs().maxCoeff())) << c;
  }
}

TEST(SolveLeader, MovesTowardGoalWithinBounds) {
  const HorizonGrid grid{0.1, 0.5};
  VecX x_des = start_pose();
  x_des[0] = 5.0;
  const auto s = leader_at_start(x_des);
  const VecX U0 = equilibrium_warm_start(s.agent, s.object, s.x0.q, grid);
  const auto sol = solve_leader(grid, s, U0, false);
  EXPECT_EQ(sol.mode, TerminalMode::Soft);
  EXPECT_TRUE(sol.acceptable(1e-6));
  EXPECT_LE(sol.decision.cwiseAbs().maxCoeff(), 8.5 + 1e-9);
  // the plan stays within what the followers can reproduce
  NlpEval e;
  transcribe_leader(grid, s, TerminalMode::Soft).nlp.evaluate(sol.decision, e, false);
  EXPECT_LE(e.ci.maxCoeff(), 1e-6);
  EXPECT_GT(sol.object_poses.back().p_O.x(), 0.0);
  for (const auto& it : sol.history) EXPECT_LE(it.merit_after, it.merit_before);
}

TEST(SolveLeader, WarmStartedResolveIsFixedPoint) {
  const HorizonGrid grid{0.1, 0.5};
  VecX x_des = start_pose();
  x_des[0] = 0.05;
  const auto s = leader_at_start(x_des);
  const auto prob = transcribe_leader(grid, s, TerminalMode::Soft);
  SqpOptions opt;
  opt.max_iterations = 200;
  const auto first = solve_fhocp(prob, equilibrium_warm_start(s.agent, s.object, s.x0.q, grid), opt);
  ASSERT_EQ(first.status, SqpStatus::Converged);
  const auto again = solve_fhocp(prob, first.decision, opt);
  EXPECT_LE(again.iterations, 1);
  EXPECT_NEAR(again.cost, first.cost, 1e-10);
}

// Drive a follower with a known input, read off the object motion through its
// chain, and recover the input.
TEST(FollowerAuthority, InputForObjectMotionInvertsDynamics) {
  const auto team = boxed_team();
  const auto obj = small_object();
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 20; ++trial) {
    const auto& p = team[1 + trial % 2];
    JVec q = three_agent_initial_q()[1 + trial % 2];
    q[2] += uniform(rng, -0.2, 0.2);
    q[3] += uniform(rng, -0.2, 0.2);
    const AgentState x{q, random_jvec(rng, 4, -0.5, 0.5)};
    const JVec u = random_jvec(rng, 4, -8, 8);
    const VecX vO = task_twist(p.task_rows, object_twist_from_agent(p, x.q, x.qdot));
    const VecX aO = error_dynamics(p, obj, x, u, false).tail(4);
    EXPECT_LE((input_for_object_motion(p, obj, x.q, vO, aO) - u).cwiseAbs().maxCoeff(), 1e-9);
  }
}

// Follower configurations carried along a leader plan reproduce the
// leader's object poses up to the midpoint-rule error.
TEST(FollowerAuthority, ImpliedStatesFollowPlannedObject) {
  const HorizonGrid grid{0.1, 0.5};
  auto s = leader_at_start(start_pose());
  const auto prob = transcribe_leader(grid, s, TerminalMode::Soft);
  std::mt19937_64 rng(64);
  VecX U = equilibrium_warm_start(s.agent, s.object, s.x0.q, grid);
  for (int i = 0; i < U.size(); ++i) U[i] += uniform(rng, -1, 1);
  const auto tr = prob.predict(U);
  std::vector<VecX> vn, vm;
  for (int k = 0; k <= grid.K(); ++k) {
    vn.push_back(task_twist(s.agent.task_rows, object_twist_from_agent(s.agent, tr.nodes[k].q, tr.nodes[k].qdot)));
    if (k < grid.K())
      vm.push_back(task_twist(s.agent.task_rows, object_twist_from_agent(s.agent, tr.mids[k].q, tr.mids[k].qdot)));
  }
  for (std::size_t f = 0; f < s.followers.size(); ++f) {
    const auto imp = implied_states(s.followers[f], s.follower_q[f], vn, vm, grid.h, grid.K());
    ASSERT_EQ(static_cast<int>(imp.size()), grid.K() + 1);
    for (int k = 0; k <= grid.K(); ++k) {
      const auto lead = object_pose_from_agent(s.agent, tr.nodes[k].q);
      const auto fol = object_pose_from_agent(s.followers[f], imp[k].q);
      EXPECT_LE((lead.p_O - fol.p_O).norm(), 1e-3) << f << " " << k;
      const VecX v = task_twist(s.followers[f].task_rows, object_twist_from_agent(s.followers[f], imp[k].q, imp[k].qdot));
      EXPECT_LE((v - vn[k]).norm(), 1e-2) << f << " " << k;
    }
  }
}

TEST(RecedingStep, ReturnsFirstIntervalAndShifts) {
  HorizonSolution sol;
  for (int k = 0; k < 5; ++k) sol.controls.push_back(JVec::Constant(4, k + 1.0));
  const auto step = receding_step(sol, HorizonGrid{0.1, 0.5});
  EXPECT_EQ(step.u, sol.controls[0]);
  ASSERT_EQ(step.warm_start.size(), 20);
  EXPECT_EQ(step.warm_start.segment(0, 4), sol.controls[1]);
  EXPECT_EQ(step.warm_start.segment(12, 4), step.warm_start.segment(16, 4));
  EXPECT_EQ(step.warm_start.segment(16, 4), sol.controls[4]);
}

// Closed loop on a static problem that starts in the terminal set: every
// receding step stays in F_1 and the optimal cost decreases by at least the
// elapsed running cost.
TEST(RecedingStep, ClosedLoopStaysInTerminalSet) {
  const HorizonGrid grid{0.1, 0.5};
  VecX x_des = start_pose();
  x_des[0] = 0.05;
  auto s = leader_at_start(x_des);
  VecX U = equilibrium_warm_start(s.agent, s.object, s.x0.q, grid);
  double prev_cost = -1.0, prev_stage = 0.0;
  for (int j = 0; j < 10; ++j) {
    const auto sol = solve_leader(grid, s, U, true);
    ASSERT_EQ(sol.mode, TerminalMode::Hard) << j;
    const VecX e = error_state(s.agent, s.x0.q, s.x0.qdot, x_des);
    EXPECT_LE(e.dot(s.gains.P * e), s.gains.eps + 1e-9) << j;
    if (prev_cost >= 0.0) EXPECT_LE(sol.cost, prev_cost - prev_stage + 1e-3) << j;
    prev_cost = sol.cost;
    prev_stage = sol.first_stage_cost;
    const auto step = receding_step(sol, grid);
    AgentState x = s.x0;
    for (int i = 0; i < 4; ++i) x = rk4_oracle(s.agent, s.object, x, step.u, 0.025);
    s.x0 = x;
    s.u_prev = step.u;
    U = step.warm_start;
  }
}

// x_{k+1} = A x_k + B u_k, cost Σ xᵀQx + uᵀRu + x_Kᵀ P x_K; Riccati oracle.
TEST(SolveNlp, LinearQuadraticMatchesRiccati) {
  const int nx = 3, nu = 2, K = 6;
  MatX A(nx, nx), B(nx, nu);
  A << 1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.05, 0.0, 0.98;
  B << 0.0, 0.01, 0.1, 0.0, 0.0, 0.1;
  const MatX Q = MatX::Identity(nx, nx) * 2.0, R = MatX::Identity(nu, nu) * 0.3, P = MatX::Identity(nx, nx) * 5.0;
  const VecX x0 = (VecX(nx) << 1.0, -0.5, 0.3).finished();

  // closed form: backward Riccati recursion, u_k = −K_k x_k
  std::vector<MatX> gains(K);
  MatX S = P;
  for (int k = K - 1; k >= 0; --k) {
    gains[k] = (R + B.transpose() * S * B).ldlt().solve(B.transpose() * S * A);
    S = Q + A.transpose() * S * (A - B * gains[k]);
  }
  VecX u_ref(K * nu);
  VecX x = x0;
  for (int k = 0; k < K; ++k) {
    u_ref.segment(k * nu, nu) = -gains[k] * x;
    x = A * x + B * u_ref.segment(k * nu, nu);
  }

  const MatX Lq = Q.llt().matrixU(), Lr = R.llt().matrixU(), Lp = P.llt().matrixU();
  NlpProblem prob;
  prob.n = K * nu;
  prob.lower = VecX::Constant(prob.n, -kInf);
  prob.upper = VecX::Constant(prob.n, kInf);
  prob.evaluate = [&](const VecX& U, NlpEval& e, bool jac) {
    e.r.resize(K * (nx + nu) + nx);
    e.ce.resize(0);
    e.ci.resize(0);
    MatX dx = MatX::Zero(nx, prob.n);  // ∂x_k/∂U
    VecX xk = x0;
    MatX Jr = MatX::Zero(e.r.size(), prob.n);
    for (int k = 0; k < K; ++k) {
      e.r.segment(k * (nx + nu), nx) = Lq * xk;
      Jr.block(k * (nx + nu), 0, nx, prob.n) = Lq * dx;
      e.r.segment(k * (nx + nu) + nx, nu) = Lr * U.segment(k * nu, nu);
      Jr.block(k * (nx + nu) + nx, k * nu, nu, nu) = Lr;
      xk = A * xk + B * U.segment(k * nu, nu);
      dx = A * dx;
      dx.block(0, k * nu, nx, nu) += B;
    }
    e.r.tail(nx) = Lp * xk;
    Jr.bottomRows(nx) = Lp * dx;
    if (jac) {
      e.Jr = Jr;
      e.Jce.resize(0, prob.n);
      e.Jci.resize(0, prob.n);
    }
  };
  const auto res = solve_nlp(prob, VecX::Zero(prob.n));
  EXPECT_EQ(res.status, SqpStatus::Converged);
  EXPECT_LE((res.x - u_ref).cwiseAbs().maxCoeff(), 1e-8);
}

// K = 1 instance with a two-input vehicle and a box, against a grid search.
TEST(SolveNlp, SingleIntervalMatchesGridSearch) {
  const HorizonGrid grid{0.1, 0.1};
  LeaderSetup s;
  s.agent = point_vehicle();
  s.agent.limits.input_component = 0.15;
  s.object = small_object();
  s.x0 = {JVec::Zero(2), JVec::Zero(2)};
  s.x_des = (VecX(2) << 1.0, 0.0005).finished();
  s.gains.Q = MatX::Identity(4, 4);
  s.gains.P = MatX::Identity(4, 4) * 2.0;
  s.gains.R = MatX::Identity(2, 2) * 0.5;
  const auto prob = transcribe_leader(grid, s, TerminalMode::Soft);
  const auto sol = solve_fhocp(prob, VecX::Zero(2));
  ASSERT_TRUE(sol.acceptable(1e-9));

  double best = kInf;
  VecX arg(2);
  NlpEval e;
  VecX U(2);
  for (int i = -150; i <= 150; ++i)
    for (int j = -150; j <= 150; ++j) {
      U << i * 1e-3, j * 1e-3;
      prob.nlp.evaluate(U, e, false);
      if (e.cost() < best) {
        best = e.cost();
        arg = U;
      }
    }
  NlpEval es;
  prob.nlp.evaluate(sol.decision, es, false);
  EXPECT_LE((sol.decision - arg).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LE(es.cost(), best + 1e-12);
  EXPECT_NEAR(sol.decision[0], 0.15, 1e-9);  // the box is active on x
}

namespace {

FollowerSetup follower_from_leader(const HorizonGrid& grid, const HorizonSolution& lead, int i) {
  const auto team = boxed_team();
  const auto qs = three_agent_initial_q();
  FollowerSetup f;
  f.agent = team[i];
  f.object = small_object();
  f.x0 = {qs[i], JVec::Zero(4)};
  for (int k = 0; k <= grid.K(); ++k) {
    f.leader_pose.push_back(task_coordinates(team[0].task_rows, lead.object_poses[k]));
    f.leader_twist.push_back(task_twist(team[0].task_rows, lead.object_twists[k]));
  }
  f.cost.R = MatX::Identity(4, 4) * 0.5;
  return f;
}

}  // namespace

TEST(TranscribeFollower, LeaderTrajectoryIsFollowable) {
  const HorizonGrid grid{0.1, 0.5};
  VecX x_des = start_pose();
  x_des[0] = 5.0;
  const auto s = leader_at_start(x_des);
  const auto lead = solve_leader(grid, s, equilibrium_warm_start(s.agent, s.object, s.x0.q, grid), false);
  const auto f = follower_from_leader(grid, lead, 1);
  double rho = 1e4;
  const auto sol = solve_follower(grid, f, equilibrium_warm_start(f.agent, f.object, f.x0.q, grid), PenaltySchedule{}, rho);
  EXPECT_LE(sol.equality_residual, 1e-4);
  EXPECT_TRUE(sol.acceptable(1e-6));
  for (int k = 0; k <= grid.K(); ++k)
    EXPECT_LE((task_coordinates(f.agent.task_rows, sol.object_poses[k]) - f.leader_pose[k]).norm(), 1e-4) << k;
}

TEST(TranscribeFollower, PriorityRowsReferenceOnlyHigherAndLowerAgents) {
  const HorizonGrid grid{0.1, 0.5};
  const auto s = leader_at_start(start_pose());
  const auto lead = solve_fhocp(transcribe_leader(grid, s, TerminalMode::Soft),
                                equilibrium_warm_start(s.agent, s.object, s.x0.q, grid));
  auto f = follower_from_leader(grid, lead, 2);
  const auto team = boxed_team();
  const auto qs = three_agent_initial_q();
  // agent 3 sees predictions of agents 1 and 2
  for (int k = 0; k <= grid.K(); ++k) {
    std::vector<Ellipsoid> bodies = agent_ellipsoids(team[0], lead.states[k].q);
    const auto b2 = agent_ellipsoids(team[1], qs[1]);
    bodies.insert(bodies.end(), b2.begin(), b2.end());
    f.predicted_bodies.push_back(bodies);
  }
  for (const char* who : {"agent1", "agent2"})
    for (int b = 0; b < 3; ++b) f.predicted_labels.push_back(std::string("agent[") + who + "].b" + std::to_string(b));
  const auto prob = transcribe_follower(grid, f, 1e4);
  int refs1 = 0, refs2 = 0, refs4 = 0;
  for (const auto& l : prob.ci_labels) {
    refs1 += l.find("agent[agent1]") != std::string::npos;
    refs2 += l.find("agent[agent2]") != std::string::npos;
    refs4 += l.find("agent[agent4]") != std::string::npos;
  }
  EXPECT_GT(refs1, 0);
  EXPECT_GT(refs2, 0);
  EXPECT_EQ(refs4, 0);
  EXPECT_EQ(refs1, refs2);
}

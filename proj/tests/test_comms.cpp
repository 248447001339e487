#include "coopnmpc/scenario.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <thread>

using namespace coopnmpc;
using namespace testutil;

namespace {

PredictionMessage random_message(std::mt19937_64& rng, int nodes = 6) {
  PredictionMessage m;
  m.sequence = 7;
  m.round = 3;
  m.sender = 1;
  m.receivers = {2, 3};
  m.t = 0.3;
  for (int k = 0; k < nodes; ++k) {
    m.node_times.push_back(0.3 + 0.1 * k);
    m.q.push_back(random_jvec(rng, 4, -2, 2));
    m.qdot.push_back(random_jvec(rng, 4, -1, 1));
    Vec6 p, v;
    for (int i = 0; i < 6; ++i) {
      p[i] = uniform(rng, -1, 1);
      v[i] = uniform(rng, -1, 1) / 3.0;
    }
    m.object_pose.push_back(ObjectPose::from(p));
    m.object_twist.push_back(ObjectTwist::from(v));
  }
  return m;
}

std::string bundled(const std::string& name) { return std::string(COOPNMPC_SCENARIO_DIR) + "/" + name + ".json"; }

struct RoundFixture {
  ScenarioConfig cfg;
  std::vector<AgentState> states;
  std::vector<AgentMemory> memory;

  explicit RoundFixture(const std::string& name) : cfg(parse_scenario(bundled(name))) {
    states = cfg.initial;
    project_closure(cfg.team, states);
    memory.assign(static_cast<std::size_t>(cfg.team.size()), {});
  }
  RoundResult run(Bus& bus, int round = 0) { return run_round(round, 0.0, cfg.team, states, memory, bus); }
};

std::vector<int> solve_order(const RoundResult& r) {
  std::vector<int> ids;
  for (const auto& s : r.solves) ids.push_back(s.agent);
  return ids;
}

}  // namespace

TEST(MessageJson, RoundTripIsExact) {
  std::mt19937_64 rng(71);
  const auto m = random_message(rng);
  const auto back = message_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_TRUE(identical(m, back));
}

TEST(MessageJson, RejectsUnknownField) {
  std::mt19937_64 rng(72);
  auto j = to_json(random_message(rng));
  j["priority"] = 1;
  EXPECT_THROW(message_from_json(j), std::invalid_argument);
}

TEST(MessageJson, RejectsNodeCountMismatch) {
  std::mt19937_64 rng(73);
  auto j = to_json(random_message(rng));
  j["qdot"].erase(0);
  EXPECT_THROW(message_from_json(j), std::invalid_argument);
}

TEST(MessageLog, RoundTripAndLineNumbers) {
  std::mt19937_64 rng(74);
  const std::vector<PredictionMessage> log = {random_message(rng), random_message(rng, 3)};
  std::stringstream ss;
  write_message_log(ss, log);
  const auto back = read_message_log(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(identical(back[0], log[0]));
  EXPECT_TRUE(identical(back[1], log[1]));

  std::stringstream bad;
  write_message_log(bad, log);
  bad << "{\"sequence\": 2,\n";
  try {
    read_message_log(bad);
    FAIL() << "expected a parse error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(MessageConsistency, RecomputesObjectFieldsThroughSenderChain) {
  const auto team = three_agent_team();
  const auto qs = three_agent_initial_q();
  PredictionMessage m;
  for (int k = 0; k < 3; ++k) {
    JVec q = qs[0], qd = JVec::Zero(4);
    q[0] += 0.1 * k;
    qd[2] = 0.2 * k;
    m.q.push_back(q);
    m.qdot.push_back(qd);
    m.object_pose.push_back(object_pose_from_agent(team[0], q));
    m.object_twist.push_back(object_twist_from_agent(team[0], q, qd));
  }
  EXPECT_EQ(message_consistency(team[0], m), 0.0);
  m.object_pose[2].p_O.x() += 1e-6;
  EXPECT_NEAR(message_consistency(team[0], m), 1e-6, 1e-12);
}

TEST(Bus, ReceiverSeesOnlyEarlierMessagesOfItsRound) {
  std::mt19937_64 rng(75);
  Bus bus;
  auto m = random_message(rng);
  m.round = 0;
  m.receivers = {2, 3};
  EXPECT_EQ(bus.clock(), 0u);
  EXPECT_EQ(bus.send(m), 0u);
  EXPECT_EQ(bus.clock(), 1u);
  EXPECT_TRUE(bus.receive(0, 3, 0).empty());
  EXPECT_EQ(bus.receive(0, 3, 1).size(), 1u);
  EXPECT_TRUE(bus.receive(0, 1, 1).empty());
  EXPECT_TRUE(bus.receive(1, 3, 1).empty());
  m.receivers = {3};
  EXPECT_EQ(bus.send(m), 1u);
  EXPECT_EQ(bus.receive(0, 2, 2).size(), 1u);
  EXPECT_EQ(bus.receive(0, 3, 2).size(), 2u);
}

TEST(Bus, ConcurrentSendersGetDistinctSequences) {
  std::mt19937_64 rng(76);
  const auto proto = random_message(rng, 2);
  Bus bus;
  std::vector<std::thread> threads;
  for (int s = 0; s < 4; ++s)
    threads.emplace_back([&, s] {
      for (int i = 0; i < 50; ++i) {
        auto m = proto;
        m.sender = s + 1;
        m.round = i;
        bus.send(m);
      }
    });
  for (auto& t : threads) t.join();
  const auto log = bus.log();
  ASSERT_EQ(log.size(), 200u);
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].sequence, i);
  for (int s = 1; s <= 4; ++s) {
    int last = -1;
    for (const auto& m : log)
      if (m.sender == s) {
        EXPECT_EQ(m.round, last + 1);
        last = m.round;
      }
  }
}

TEST(Bus, HandsMessageToWaitingThread) {
  std::mt19937_64 rng(77);
  const auto proto = random_message(rng, 2);
  Bus bus;
  std::vector<PredictionMessage> got;
  std::thread consumer([&] {
    while (bus.clock() < 1) std::this_thread::yield();
    got = bus.receive(proto.round, 2, bus.clock());
  });
  bus.send(proto);
  consumer.join();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].q[1], proto.q[1]);
}

TEST(Bus, ReplayDeliversLogAndCountsMismatches) {
  std::mt19937_64 rng(78);
  const auto a = random_message(rng), b = random_message(rng);
  Bus rec;
  rec.send(a);
  rec.send(b);
  const auto log = rec.log();

  Bus same(log);
  EXPECT_TRUE(same.replaying());
  same.send(a);
  same.send(b);
  EXPECT_EQ(same.mismatches(), 0);

  Bus diff(log);
  auto c = b;
  c.q[0][0] += 1.0;
  diff.send(a);
  diff.send(c);
  EXPECT_EQ(diff.mismatches(), 1);
  EXPECT_TRUE(identical(diff.log()[1], log[1]));
  diff.send(a);
  EXPECT_EQ(diff.mismatches(), 2);
}

TEST(Team, PriorityMustBePermutationStartingWithLeader) {
  Team t;
  t.agents = three_agent_team();
  t.priority = {1, 2, 3};
  EXPECT_NO_THROW(t.validate_priority());
  t.priority = {1, 3, 2};
  EXPECT_NO_THROW(t.validate_priority());
  t.priority = {2, 1, 3};
  EXPECT_THROW(t.validate_priority(), std::invalid_argument);
  t.priority = {1, 2, 2};
  EXPECT_THROW(t.validate_priority(), std::invalid_argument);
  t.priority = {1, 2};
  EXPECT_THROW(t.validate_priority(), std::invalid_argument);
}

TEST(Round, SingleAgentSendsNothing) {
  RoundFixture f("single_agent_smoke");
  Bus bus;
  const auto r = f.run(bus);
  EXPECT_EQ(r.messages, 0);
  EXPECT_EQ(bus.clock(), 0u);
  ASSERT_EQ(r.solves.size(), 1u);
  EXPECT_EQ(r.controls[0].size(), 4);
}

TEST(Round, ThreeAgentsFollowPriority) {
  RoundFixture f("paper_sec5");
  Bus bus;
  const auto r = f.run(bus);
  EXPECT_EQ(r.messages, 2);
  EXPECT_EQ(solve_order(r), (std::vector<int>{1, 2, 3}));
  const auto log = bus.log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0].sender, 1);
  EXPECT_EQ(log[0].receivers, (std::vector<int>{2, 3}));
  EXPECT_EQ(log[1].sender, 2);
  EXPECT_EQ(log[1].receivers, (std::vector<int>{3}));
  for (const auto& m : log) {
    EXPECT_EQ(m.nodes(), f.cfg.team.grid.K() + 1);
    EXPECT_LE(message_consistency(f.cfg.team.agent(m.sender), m), 1e-10);
  }
  EXPECT_TRUE(r.solves[0].consumed.empty());
  EXPECT_EQ(r.solves[1].consumed, (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(r.solves[2].consumed, (std::vector<std::uint64_t>{0, 1}));
  // every solve starts after the messages it consumed were sent
  for (const auto& s : r.solves)
    for (auto c : s.consumed) EXPECT_LT(c, s.stamp);
  EXPECT_EQ(r.solves[0].constraint_sources, (std::vector<std::string>{"agent2", "agent3"}));
  EXPECT_EQ(r.solves[1].constraint_sources, (std::vector<std::string>{"agent1", "agent3"}));
  EXPECT_EQ(r.solves[2].constraint_sources, (std::vector<std::string>{"agent1", "agent2"}));
  for (int i = 0; i < 3; ++i) EXPECT_LE(r.controls[i].cwiseAbs().maxCoeff(), 8.5 + 1e-9);
}

TEST(Round, PermutedPriorityReordersFollowers) {
  RoundFixture f("paper_sec5");
  f.cfg.team.priority = {1, 3, 2};
  // agent3 now sees agent2 frozen at its current pose; thin bodies keep the round feasible
  for (auto& a : f.cfg.team.agents)
    for (auto& e : a.ellipsoids) e.semi_axes *= 0.25;
  Bus bus;
  const auto r = f.run(bus);
  EXPECT_EQ(solve_order(r), (std::vector<int>{1, 3, 2}));
  const auto log = bus.log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0].receivers, (std::vector<int>{3, 2}));
  EXPECT_EQ(log[1].sender, 3);
  EXPECT_EQ(log[1].receivers, (std::vector<int>{2}));
  EXPECT_EQ(r.solves[1].consumed.size(), 1u);
  EXPECT_EQ(r.solves[2].consumed.size(), 2u);
  EXPECT_EQ(r.solves[1].constraint_sources, (std::vector<std::string>{"agent1", "agent2"}));
}

TEST(Round, ReplayReproducesControls) {
  RoundFixture f("paper_sec5");
  const auto memory0 = f.memory;
  Bus rec;
  const auto r1 = f.run(rec);
  const auto r2 = f.run(rec, 1);

  f.memory = memory0;
  Bus replay(rec.log());
  const auto p1 = f.run(replay);
  const auto p2 = f.run(replay, 1);
  EXPECT_EQ(replay.mismatches(), 0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(p1.controls[i], r1.controls[i]);
    EXPECT_EQ(p2.controls[i], r2.controls[i]);
  }
}

TEST(Round, TamperedLogIsDetected) {
  RoundFixture f("paper_sec5");
  const auto memory0 = f.memory;
  Bus rec;
  f.run(rec);
  auto log = rec.log();
  log[0].q[2][0] += 1e-3;
  f.memory = memory0;
  Bus replay(log);
  try {
    f.run(replay);
    FAIL() << "expected an abort";
  } catch (const RoundAbort& a) {
    EXPECT_EQ(a.reason(), "message inconsistency");
  }
  EXPECT_EQ(replay.mismatches(), 1);
}

TEST(Round, UnreachableEqualityToleranceAbortsFollower) {
  RoundFixture f("paper_sec5");
  f.cfg.team.x_des[0] = 1.0;
  f.cfg.team.penalty.max = f.cfg.team.penalty.initial;
  f.cfg.team.penalty.tolerance = 0.0;
  f.cfg.team.penalty.infeasible = 0.0;
  Bus bus;
  try {
    f.run(bus);
    FAIL() << "expected an abort";
  } catch (const RoundAbort& a) {
    EXPECT_EQ(a.reason(), "follower infeasibility");
    ASSERT_FALSE(a.diagnostics().empty());
    EXPECT_NE(a.diagnostics().back().find("agent2"), std::string::npos);
  }
  EXPECT_EQ(bus.clock(), 1u);
}

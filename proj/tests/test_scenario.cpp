#include "coopnmpc/scenario.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace coopnmpc;
using nlohmann::json;

namespace {

std::string bundled(const std::string& name) { return std::string(COOPNMPC_SCENARIO_DIR) + "/" + name + ".json"; }

json bundled_json(const std::string& name) {
  std::ifstream in(bundled(name));
  return json::parse(in);
}

ScenarioError::Kind error_kind(const json& j, std::string* what = nullptr) {
  try {
    parse_scenario_text(j.dump(2));
  } catch (const ScenarioError& e) {
    if (what) *what = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "scenario was accepted";
  return ScenarioError::Kind::Parse;
}

}  // namespace

TEST(Scenario, ThreeAgentScenarioValues) {
  const auto c = parse_scenario(bundled("paper_sec5"));
  const double pi = std::numbers::pi;
  const Team& t = c.team;
  ASSERT_EQ(t.size(), 3);
  EXPECT_EQ(t.grid.h, 0.1);
  EXPECT_EQ(t.grid.T_p, 0.5);
  EXPECT_EQ(t.grid.K(), 5);
  EXPECT_EQ(c.total_time, 60.0);
  EXPECT_TRUE(t.leader_gains.Q.isApprox(MatX::Identity(8, 8) * 0.5, 0.0));
  EXPECT_TRUE(t.leader_gains.P.isApprox(MatX::Identity(8, 8) * 0.5, 0.0));
  EXPECT_TRUE(t.leader_gains.R.isApprox(MatX::Identity(4, 4) * 0.5, 0.0));
  EXPECT_EQ(t.agents[0].load_share, 0.3);
  EXPECT_EQ(t.agents[1].load_share, 0.5);
  EXPECT_EQ(t.agents[2].load_share, 0.2);
  for (const auto& p : t.agents) EXPECT_EQ(p.limits.input_component, 8.5);
  ASSERT_EQ(t.obstacles.size(), 1u);
  EXPECT_EQ(t.obstacles[0].center, Vec3(2.5, -2.2071, 1.0));
  EXPECT_NEAR(t.obstacles[0].shape(0, 0), 1 / 0.2, 1e-12);
  EXPECT_TRUE(t.obstacles[0].shape.isDiagonal(0.0));
  EXPECT_EQ(t.x_des, (VecX(4) << 5, -2.2071, 0.9071, pi / 2).finished());
  const double q0[3][4] = {{0.5, 0, pi / 4, pi / 4}, {0, -4.4142, -pi / 4, -pi / 4}, {-0.5, -4.4142, -pi / 4, -pi / 4}};
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(c.initial[i].q[k], q0[i][k]) << i << " " << k;
    EXPECT_TRUE(c.initial[i].qdot.isZero(0.0));
  }
  // α boxes: ε < α_11 < π/2 − ε, −π/2 + ε < α_21 < −ε, |α_i2| < π/2 − ε
  const double eps = t.agents[0].limits.joint_lower[2];
  EXPECT_GT(eps, 0.0);
  EXPECT_DOUBLE_EQ(t.agents[0].limits.joint_upper[2], pi / 2 - eps);
  EXPECT_DOUBLE_EQ(t.agents[1].limits.joint_lower[2], -pi / 2 + eps);
  EXPECT_DOUBLE_EQ(t.agents[1].limits.joint_upper[2], -eps);
  for (const auto& p : t.agents) {
    EXPECT_DOUBLE_EQ(p.limits.joint_lower[3], -pi / 2 + eps);
    EXPECT_DOUBLE_EQ(p.limits.joint_upper[3], pi / 2 - eps);
    EXPECT_EQ(p.limits.arm_velocity_norm, 1.0);
  }
  EXPECT_EQ(t.priority, (std::vector<int>{1, 2, 3}));
}

TEST(Scenario, LoadSharesMustSumToOne) {
  auto j = bundled_json("paper_sec5");
  j["agents"][2]["load_share"] = 0.1;
  std::string what;
  EXPECT_EQ(error_kind(j, &what), ScenarioError::Kind::Validation);
  EXPECT_NE(what.find("load-share invariant"), std::string::npos) << what;
}

TEST(Scenario, ObstaclesAreOptional) {
  auto j = bundled_json("paper_sec5");
  j.erase("obstacles");
  const auto c = parse_scenario_text(j.dump());
  EXPECT_TRUE(c.team.obstacles.empty());
}

TEST(Scenario, ObstacleOutsideWorkspaceIsRejected) {
  auto j = bundled_json("paper_sec5");
  j["obstacles"][0]["center_m"] = {9.8, 0.0, 0.0};
  std::string what;
  EXPECT_EQ(error_kind(j, &what), ScenarioError::Kind::Validation);
  EXPECT_NE(what.find("obstacle inside workspace"), std::string::npos) << what;
}

TEST(Scenario, NonPositiveBoundIsRejected) {
  auto j = bundled_json("paper_sec5");
  j["agents"][1]["limits"]["input_bound_N_Nm"] = -1.0;
  std::string what;
  EXPECT_EQ(error_kind(j, &what), ScenarioError::Kind::Validation);
  EXPECT_NE(what.find("bounds positive"), std::string::npos) << what;
}

TEST(Scenario, HorizonShorterThanSamplingIsRejected) {
  auto j = bundled_json("paper_sec5");
  j["grid"]["horizon_s"] = 0.05;
  std::string what;
  EXPECT_EQ(error_kind(j, &what), ScenarioError::Kind::Validation);
  EXPECT_NE(what.find("horizon grid"), std::string::npos) << what;
}

TEST(Scenario, UnknownKeyIsReportedWithItsPath) {
  auto j = bundled_json("paper_sec5");
  j["agents"][1]["limits"]["torque_bound"] = 3.0;
  std::string what;
  EXPECT_EQ(error_kind(j, &what), ScenarioError::Kind::Parse);
  EXPECT_NE(what.find("agents[1].limits.torque_bound"), std::string::npos) << what;
}

TEST(Scenario, WrongTypeIsReportedWithItsPath) {
  auto j = bundled_json("paper_sec5");
  j["grid"]["sampling_period_s"] = "fast";
  std::string what;
  EXPECT_EQ(error_kind(j, &what), ScenarioError::Kind::Parse);
  EXPECT_NE(what.find("grid.sampling_period_s"), std::string::npos) << what;
}

TEST(Scenario, SyntaxErrorReportsLine) {
  const std::string text = "{\n  \"name\": \"x\",\n  \"seed\": 1,,\n}\n";
  try {
    parse_scenario_text(text);
    FAIL() << "expected a parse error";
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.kind(), ScenarioError::Kind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Scenario, MissingFileIsAParseError) {
  try {
    parse_scenario("/nonexistent/scenario.json");
    FAIL();
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.kind(), ScenarioError::Kind::Parse);
  }
}

TEST(Scenario, BundledScenariosRoundTrip) {
  for (const char* name : {"paper_sec5", "single_agent_smoke", "two_agent_no_obstacle"}) {
    const auto c = parse_scenario(bundled(name));
    const auto text = serialize_scenario(c);
    const auto back = parse_scenario_text(text);
    EXPECT_TRUE(same_scenario(c, back)) << name;
    EXPECT_EQ(serialize_scenario(back), text) << name;
  }
}

TEST(Scenario, GeneralMatricesAndEllipsoidsRoundTrip) {
  auto c = parse_scenario(bundled("paper_sec5"));
  MatX Q = MatX::Identity(8, 8) * 0.5;
  Q(0, 1) = Q(1, 0) = 0.1;
  c.team.leader_gains.Q = Q;
  Ellipsoid e;
  e.center = Vec3(1.0, 1.0, 3.0);
  const Mat3 R = Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  e.shape = R * Vec3(1 / 0.09, 1 / 0.16, 1 / 0.49).asDiagonal() * R.transpose();
  c.team.obstacles.push_back(e);
  Ellipsoid s;
  s.center = Vec3(-2.0, 1.0, 1.0);
  s.shape = Mat3::Identity() / (0.3 * 0.3);
  c.team.obstacles.push_back(s);
  c.team.workspace_radius = kInf;
  c.team.agents[1].limits.torque_norm = 12.0;
  validate_scenario(c);
  const auto back = parse_scenario_text(serialize_scenario(c));
  EXPECT_TRUE(same_scenario(c, back));
  EXPECT_EQ(back.team.obstacles[1].shape, e.shape);
  EXPECT_EQ(back.team.obstacles[2].shape, s.shape);
  EXPECT_FALSE(std::isfinite(back.team.workspace_radius));
}

TEST(Scenario, OverridesReplaceAndRevalidate) {
  auto c = parse_scenario(bundled("paper_sec5"));
  ScenarioOverrides o;
  o.horizon = 0.3;
  o.total_time = 2.0;
  o.seed = 9;
  o.q_weight = 2.0;
  apply_overrides(c, o);
  EXPECT_EQ(c.team.grid.T_p, 0.3);
  EXPECT_EQ(c.team.grid.K(), 3);
  EXPECT_EQ(c.total_time, 2.0);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_TRUE(c.team.leader_gains.Q.isApprox(MatX::Identity(8, 8) * 2.0, 0.0));
  EXPECT_TRUE(c.team.leader_gains.R.isApprox(MatX::Identity(4, 4) * 0.5, 0.0));

  std::ostringstream os;
  write_trace_csv(os, c, {});
  EXPECT_NE(os.str().find("# T_p_s 0.3\n"), std::string::npos) << os.str();

  ScenarioOverrides bad;
  bad.r_weight = -1.0;
  EXPECT_THROW(apply_overrides(c, bad), ScenarioError);
}

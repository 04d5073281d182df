#include <gtest/gtest.h>

#include <sstream>

#include "vipnav/metrics.hpp"
#include "vipnav/sim.hpp"

using namespace vipnav;

namespace {

// 10 Hz log with constant v and no events.
EvalLog steady(int n, double v = 0.5) {
  EvalLog log;
  log.route = "r";
  for (int i = 0; i < n; ++i) {
    EvalStep s;
    s.time = 0.1 * (i + 1);
    s.pose = {0.05 * i, 0.0, 0.0};
    s.v = v;
    log.steps.push_back(s);
  }
  log.route_time = 0.1 * n;
  return log;
}

void flag_collision(EvalLog& log, double t) {
  for (auto& s : log.steps) {
    if (std::abs(s.time - t) < 1e-9) s.collision = true;
  }
}

void put_pedestrian(EvalLog& log, int from, int to, double dist, bool fov, double v) {
  for (int i = from; i < to; ++i) {
    log.steps[static_cast<std::size_t>(i)].pedestrian_distance = dist;
    log.steps[static_cast<std::size_t>(i)].pedestrian_in_fov = fov;
    log.steps[static_cast<std::size_t>(i)].v = v;
  }
}

}  // namespace

TEST(Interventions, CleanRunIsZero) { EXPECT_EQ(intervention_count(steady(100)), 0); }

TEST(Interventions, SpacedCollisionsCountSeparately) {
  EvalLog log = steady(200);
  flag_collision(log, 1.0);
  flag_collision(log, 4.0);
  flag_collision(log, 7.5);
  EXPECT_EQ(intervention_count(log), 3);
}

TEST(Interventions, CloseEventsMergeInRefractoryWindow) {
  EvalLog log = steady(100);
  flag_collision(log, 1.0);
  flag_collision(log, 1.5);
  EXPECT_EQ(intervention_count(log), 1);
  // exactly 2 s later is a new event
  flag_collision(log, 3.0);
  EXPECT_EQ(intervention_count(log), 2);
}

TEST(Interventions, StuckAndCollisionShareWindow) {
  EvalLog log = steady(100);
  flag_collision(log, 2.0);
  log.steps[20].stuck = true;  // t = 2.1
  EXPECT_EQ(intervention_count(log), 1);
  log.steps[60].stuck = true;  // t = 6.1
  EXPECT_EQ(intervention_count(log), 2);
}

TEST(Interventions, FinerResamplingKeepsCount) {
  EvalLog coarse = steady(100);
  flag_collision(coarse, 1.0);
  flag_collision(coarse, 5.0);
  EvalLog fine;
  for (int i = 0; i < 1000; ++i) {
    EvalStep s;
    s.time = 0.01 * (i + 1);
    s.collision = i + 1 == 100 || i + 1 == 500;
    fine.steps.push_back(s);
  }
  EXPECT_EQ(intervention_count(coarse), intervention_count(fine));
}

TEST(VelocityDecrease, ConstantSpeedIsZero) {
  EvalLog log = steady(100);
  put_pedestrian(log, 40, 60, 2.0, true, 0.5);
  EXPECT_DOUBLE_EQ(velocity_decrease(log), 0.0);
}

TEST(VelocityDecrease, HalfSpeedIsFiftyPercent) {
  EvalLog log = steady(100, 0.6);
  put_pedestrian(log, 40, 60, 2.0, true, 0.3);
  EXPECT_NEAR(velocity_decrease(log), 50.0, 1e-12);
}

TEST(VelocityDecrease, StrataRules) {
  EvalLog log = steady(100, 0.6);
  put_pedestrian(log, 40, 60, 2.0, true, 0.3);
  // out of view but near: in neither stratum
  put_pedestrian(log, 60, 70, 2.0, false, 0.0);
  // far pedestrian counts as pedestrian-free
  put_pedestrian(log, 70, 80, 5.0, true, 0.6);
  // Stop commands are excluded
  for (int i = 80; i < 90; ++i) {
    log.steps[static_cast<std::size_t>(i)].command = DirectionCommand::Stop;
    log.steps[static_cast<std::size_t>(i)].v = 0.0;
  }
  EXPECT_NEAR(velocity_decrease(log), 50.0, 1e-12);
  // custom threshold moves the 2 m pedestrian out of the near stratum
  EXPECT_THROW(velocity_decrease(log, 1.5), InsufficientData);
}

TEST(VelocityDecrease, ScaleInvariant) {
  EvalLog log = steady(100, 0.6);
  put_pedestrian(log, 40, 60, 2.0, true, 0.25);
  EvalLog scaled = log;
  for (auto& s : scaled.steps) s.v *= 0.37;
  EXPECT_NEAR(velocity_decrease(log), velocity_decrease(scaled), 1e-9);
}

TEST(VelocityDecrease, EmptyStratumIsInsufficient) {
  EXPECT_THROW(velocity_decrease(steady(50)), InsufficientData);
  EvalLog all_near = steady(10);
  put_pedestrian(all_near, 0, 10, 1.0, true, 0.2);
  EXPECT_THROW(velocity_decrease(all_near), InsufficientData);
  try {
    velocity_decrease(steady(5));
  } catch (const std::exception& e) {
    EXPECT_STREQ(e.what(), "insufficient data");
  }
}

TEST(VelocityDecrease, ExpertSlowsForPedestrians) {
  const Scene s = load_scene(std::string(VIPNAV_DATA_DIR) + "/scenes/test_corridor.json");
  EvalConfig cfg;
  cfg.camera.width = 32;
  cfg.camera.height = 24;
  const EvalLog log = evaluate(make_expert_policy(s), s, s.route("r1_middle"), cfg, RngStream(3));
  EXPECT_GT(velocity_decrease(log), 0.0);
}

TEST(Summary, SingleRunEqualsItsValues) {
  EvalLog log = steady(600, 0.6);
  log.route = "a";
  log.seed = 4;
  flag_collision(log, 10.0);
  put_pedestrian(log, 100, 200, 2.0, true, 0.3);
  const Report r = summarize({log}, "DepthNoiseDet");
  EXPECT_EQ(r.model, "DepthNoiseDet");
  EXPECT_DOUBLE_EQ(r.mean_interventions, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_time_min, 1.0);
  ASSERT_TRUE(r.mean_velocity_decrease);
  EXPECT_NEAR(*r.mean_velocity_decrease, 50.0, 1e-12);
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_EQ(r.runs[0].seed, 4u);
}

TEST(Summary, MeansOverRuns) {
  EvalLog a = steady(100), b = steady(100);
  flag_collision(a, 1.0);
  flag_collision(b, 1.0);
  flag_collision(b, 4.0);
  flag_collision(b, 7.0);
  const Report r = summarize({a, b});
  EXPECT_DOUBLE_EQ(r.mean_interventions, 2.0);
  EXPECT_FALSE(r.mean_velocity_decrease);
  EXPECT_THROW(summarize({}), std::invalid_argument);
}

TEST(Summary, TableColumnsInOrder) {
  const Report r = summarize({steady(10)}, "Depth");
  const std::string text = to_text(r);
  const auto header = text.substr(0, text.find('\n'));
  const auto a = header.find("Model"), b = header.find("Interventions"), c = header.find("Time (min)"),
             d = header.find("Vel. decrease");
  ASSERT_NE(d, std::string::npos);
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
  EXPECT_LT(c, d);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("model"), "Depth");
  EXPECT_TRUE(j.at("velocity_decrease").is_null());
  EXPECT_EQ(j.at("runs").size(), 1u);
}

TEST(EvalLogFile, RoundTrip) {
  EvalLog a = steady(30);
  a.model = "m";
  a.scene = "test_corridor";
  a.route = "r1";
  a.seed = 9;
  a.completed = true;
  flag_collision(a, 1.2);
  put_pedestrian(a, 5, 10, 2.25, true, 0.125);
  a.steps[3].command = DirectionCommand::TurnLeft;
  EvalLog b = steady(5);
  b.route = "r2";
  std::stringstream buf;
  write_eval_log(buf, a);
  write_eval_log(buf, b);
  const auto logs = read_eval_logs(buf);
  ASSERT_EQ(logs.size(), 2u);
  EXPECT_EQ(logs[0].route, "r1");
  EXPECT_EQ(logs[0].seed, 9u);
  EXPECT_TRUE(logs[0].completed);
  ASSERT_EQ(logs[0].steps.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) {
    const auto &x = a.steps[i], &y = logs[0].steps[i];
    EXPECT_EQ(x.time, y.time);
    EXPECT_EQ(x.pose.x, y.pose.x);
    EXPECT_EQ(x.v, y.v);
    EXPECT_EQ(x.command, y.command);
    EXPECT_EQ(x.pedestrian_distance, y.pedestrian_distance);
    EXPECT_EQ(x.pedestrian_in_fov, y.pedestrian_in_fov);
    EXPECT_EQ(x.collision, y.collision);
  }
  EXPECT_EQ(intervention_count(logs[0]), intervention_count(a));
  EXPECT_EQ(logs[1].steps.size(), 5u);
}

TEST(EvalLogFile, MalformedRejected) {
  std::stringstream buf;
  write_eval_log(buf, steady(4));
  const std::string good = buf.str();
  auto read = [](const std::string& text) {
    std::stringstream in(text);
    return read_eval_logs(in);
  };
  // drop the last step
  const std::string truncated = good.substr(0, good.rfind('\n', good.size() - 2) + 1);
  EXPECT_THROW(read(truncated), std::runtime_error);
  EXPECT_THROW(read("{\"t\": 1}\n"), std::runtime_error);
  EXPECT_THROW(read("{\"type\":\"eval\",\"version\":7}\n"), std::runtime_error);
  EXPECT_THROW(read(good + "{not json\n"), std::runtime_error);
  EvalLog rev = steady(3);
  std::swap(rev.steps[0].time, rev.steps[2].time);
  std::stringstream rbuf;
  write_eval_log(rbuf, rev);
  EXPECT_THROW(read(rbuf.str()), std::invalid_argument);
  EXPECT_NO_THROW(read(good));
}

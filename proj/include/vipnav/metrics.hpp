#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vipnav/command.hpp"
#include "vipnav/scene.hpp"

namespace vipnav {

/// Stuck rule shared by the evaluator and the metrics: less than
/// kStuckDisplacement of travel over the last kStuckWindow seconds.
inline constexpr double kStuckWindow = 5.0;        // s
inline constexpr double kStuckDisplacement = 0.05; // m
inline constexpr double kRefractoryWindow = 2.0;   // s
inline constexpr double kNearPedestrian = 3.0;     // m

struct EvalStep {
  double time = 0.0;
  Pose pose;
  double v = 0.0;      // commanded, m/s
  double omega = 0.0;  // commanded, rad/s
  DirectionCommand command = DirectionCommand::MoveForward;
  std::optional<double> pedestrian_distance;
  bool pedestrian_in_fov = false;
  bool collision = false;
  bool stuck = false;

  [[nodiscard]] bool intervention() const noexcept { return collision || stuck; }
};

struct EvalLog {
  std::string model;
  std::string scene;
  std::string route;
  std::uint64_t seed = 0;
  std::vector<EvalStep> steps;
  double route_time = 0.0;  // s
  bool completed = false;

  void validate() const {
    for (std::size_t i = 1; i < steps.size(); ++i) {
      if (!(steps[i].time > steps[i - 1].time)) throw std::invalid_argument("EvalLog: time must be strictly increasing");
    }
  }
};

class InsufficientData : public std::runtime_error {
 public:
  InsufficientData() : std::runtime_error("insufficient data") {}
};

/// Collision and stuck flags, merged when they fall within the refractory
/// window of the previously counted event.
inline int intervention_count(const EvalLog& log, double refractory = kRefractoryWindow) {
  int count = 0;
  std::optional<double> last;
  for (const EvalStep& s : log.steps) {
    if (!s.intervention()) continue;
    if (last && s.time - *last < refractory) continue;
    ++count;
    last = s.time;
  }
  return count;
}

/// 100 * (1 - mean v near a visible pedestrian / mean v with no pedestrian
/// nearby). Stop-commanded steps are excluded from both strata.
inline double velocity_decrease(const EvalLog& log, double near_dist = kNearPedestrian) {
  double near_sum = 0.0, far_sum = 0.0;
  long near_n = 0, far_n = 0;
  for (const EvalStep& s : log.steps) {
    if (s.command == DirectionCommand::Stop) continue;
    const bool nearby = s.pedestrian_distance && *s.pedestrian_distance < near_dist;
    if (nearby && s.pedestrian_in_fov) {
      near_sum += s.v;
      ++near_n;
    } else if (!nearby) {
      far_sum += s.v;
      ++far_n;
    }
  }
  if (near_n == 0 || far_n == 0 || far_sum <= 0.0) throw InsufficientData();
  return 100.0 * (1.0 - (near_sum / near_n) / (far_sum / far_n));
}

struct RunSummary {
  std::string route;
  std::uint64_t seed = 0;
  int interventions = 0;
  double time_min = 0.0;
  std::optional<double> velocity_decrease;
  bool completed = false;
};

struct Report {
  std::string model;
  double mean_interventions = 0.0;
  double mean_time_min = 0.0;
  std::optional<double> mean_velocity_decrease;  // over runs where it is defined
  std::vector<RunSummary> runs;
};

inline Report summarize(const std::vector<EvalLog>& logs, const std::string& model = "") {
  if (logs.empty()) throw std::invalid_argument("summarize: need at least one run");
  Report r;
  r.model = model.empty() ? logs.front().model : model;
  double vd_sum = 0.0;
  int vd_n = 0;
  for (const EvalLog& log : logs) {
    RunSummary s;
    s.route = log.route;
    s.seed = log.seed;
    s.interventions = intervention_count(log);
    s.time_min = log.route_time / 60.0;
    s.completed = log.completed;
    try {
      s.velocity_decrease = velocity_decrease(log);
      vd_sum += *s.velocity_decrease;
      ++vd_n;
    } catch (const InsufficientData&) {
    }
    r.mean_interventions += s.interventions;
    r.mean_time_min += s.time_min;
    r.runs.push_back(std::move(s));
  }
  r.mean_interventions /= static_cast<double>(logs.size());
  r.mean_time_min /= static_cast<double>(logs.size());
  if (vd_n > 0) r.mean_velocity_decrease = vd_sum / vd_n;
  return r;
}

/// Human-readable table using the column layout
/// `Model | Interventions | Time (min) | Vel. decrease`.
inline std::string to_text(const Report& r) {
  std::ostringstream o;
  o << std::fixed;
  auto vd = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << *v << "%";
    return s.str();
  };
  o << std::left << std::setw(24) << "Model" << std::setw(15) << "Interventions" << std::setw(12) << "Time (min)"
    << "Vel. decrease\n";
  o << std::setw(24) << r.model << std::setw(15) << std::setprecision(1) << r.mean_interventions << std::setw(12)
    << std::setprecision(1) << r.mean_time_min << vd(r.mean_velocity_decrease) << "\n\n";
  o << std::setw(16) << "Route" << std::setw(8) << "Seed" << std::setw(15) << "Interventions" << std::setw(12)
    << "Time (min)" << std::setw(15) << "Vel. decrease" << "Completed\n";
  for (const auto& s : r.runs) {
    o << std::setw(16) << s.route << std::setw(8) << s.seed << std::setw(15) << s.interventions << std::setw(12)
      << std::setprecision(2) << s.time_min << std::setw(15) << vd(s.velocity_decrease) << (s.completed ? "yes" : "no")
      << "\n";
  }
  return o.str();
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& s : r.runs) {
    runs.push_back({{"route", s.route},
                    {"seed", s.seed},
                    {"interventions", s.interventions},
                    {"time_min", s.time_min},
                    {"velocity_decrease", s.velocity_decrease ? nlohmann::json(*s.velocity_decrease) : nlohmann::json()},
                    {"completed", s.completed}});
  }
  return {{"model", r.model},
          {"interventions", r.mean_interventions},
          {"time_min", r.mean_time_min},
          {"velocity_decrease",
           r.mean_velocity_decrease ? nlohmann::json(*r.mean_velocity_decrease) : nlohmann::json()},
          {"runs", runs}};
}

// ---------------------------------------------------------------------------
// Line-delimited persistence: one header object, then one object per step.

inline void write_eval_log(std::ostream& out, const EvalLog& log) {
  nlohmann::json head = {{"type", "eval"},        {"version", 1},          {"model", log.model},
                         {"scene", log.scene},    {"route", log.route},    {"seed", log.seed},
                         {"route_time", log.route_time}, {"completed", log.completed}, {"steps", log.steps.size()}};
  out << head.dump() << '\n';
  for (const EvalStep& s : log.steps) {
    nlohmann::json j = {{"t", s.time},
                        {"pose", {s.pose.x, s.pose.y, s.pose.heading}},
                        {"v", s.v},
                        {"omega", s.omega},
                        {"cmd", to_string(s.command)},
                        {"ped", s.pedestrian_distance ? nlohmann::json(*s.pedestrian_distance) : nlohmann::json()},
                        {"ped_fov", s.pedestrian_in_fov},
                        {"collision", s.collision},
                        {"stuck", s.stuck}};
    out << j.dump() << '\n';
  }
}

/// Reads every log in a stream (logs may be concatenated).
inline std::vector<EvalLog> read_eval_logs(std::istream& in) {
  std::vector<EvalLog> logs;
  std::vector<std::size_t> expected;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("eval log: malformed JSON at line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("type")) {
      if (j.at("type") != "eval") continue;
      if (j.value("version", 0) != 1) throw std::runtime_error("eval log: unsupported version at line " + std::to_string(lineno));
      EvalLog log;
      log.model = j.value("model", "");
      log.scene = j.value("scene", "");
      log.route = j.value("route", "");
      log.seed = j.value("seed", std::uint64_t{0});
      log.route_time = j.value("route_time", 0.0);
      log.completed = j.value("completed", false);
      expected.push_back(j.value("steps", std::size_t{0}));
      logs.push_back(std::move(log));
      continue;
    }
    if (logs.empty()) throw std::runtime_error("eval log: step before header at line " + std::to_string(lineno));
    EvalStep s;
    s.time = j.at("t").get<double>();
    const auto& p = j.at("pose");
    s.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
    s.v = j.at("v").get<double>();
    s.omega = j.at("omega").get<double>();
    const auto cmd = parse_command(j.at("cmd").get<std::string>());
    if (!cmd) throw std::runtime_error("eval log: bad command at line " + std::to_string(lineno));
    s.command = *cmd;
    if (!j.at("ped").is_null()) s.pedestrian_distance = j.at("ped").get<double>();
    s.pedestrian_in_fov = j.value("ped_fov", false);
    s.collision = j.value("collision", false);
    s.stuck = j.value("stuck", false);
    logs.back().steps.push_back(s);
  }
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (logs[i].steps.size() != expected[i]) {
      throw std::runtime_error("eval log: route '" + logs[i].route + "' declares " + std::to_string(expected[i]) +
                               " steps but has " + std::to_string(logs[i].steps.size()));
    }
    logs[i].validate();
  }
  return logs;
}

}  // namespace vipnav

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "terrawalk/ddpg.hpp"
#include "terrawalk/env.hpp"
#include "terrawalk/error.hpp"
#include "terrawalk/text.hpp"

namespace terrawalk {

/// One control step: mean foot forces over the step, CoM after it, reward.
struct TraceRow {
  double t = 0.0;
  double fz_left = 0.0;
  double fz_right = 0.0;
  double fx_left = 0.0;
  double fx_right = 0.0;
  double com_x = 0.0;
  double com_z = 0.0;
  double reward = 0.0;
  bool operator==(const TraceRow&) const = default;
};

struct EpisodeTrace {
  std::vector<TraceRow> rows;

  /// Appends a row; t must exceed the previous row's t.
  void push(const TraceRow& r) {
    if (!std::isfinite(r.t)) throw ParameterError("trace: non-finite time");
    if (!rows.empty() && !(r.t > rows.back().t))
      throw ParameterError("trace: time must be strictly increasing");
    rows.push_back(r);
  }

  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }
  bool operator==(const EpisodeTrace&) const = default;
};

inline constexpr const char* kTraceHeader = "t,fz_left,fz_right,fx_left,fx_right,com_x,com_z,reward";

inline void write_trace(std::ostream& out, const EpisodeTrace& trace) {
  out << kTraceHeader << '\n';
  for (const TraceRow& r : trace.rows) {
    out << format_double(r.t) << ',' << format_double(r.fz_left) << ','
        << format_double(r.fz_right) << ',' << format_double(r.fx_left) << ','
        << format_double(r.fx_right) << ',' << format_double(r.com_x) << ','
        << format_double(r.com_z) << ',' << format_double(r.reward) << '\n';
  }
}

inline void write_trace(const std::string& path, const EpisodeTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_trace(out, trace);
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

/// Errors carry the 1-based file line (the header is line 1).
inline EpisodeTrace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  if (trim(line) != kTraceHeader)
    throw ParseError(1, "expected header '" + std::string(kTraceHeader) + "'");
  EpisodeTrace trace;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line), ',');
    if (fields.size() != 8)
      throw ParseError(lineno, "expected 8 fields, got " + std::to_string(fields.size()));
    static constexpr const char* names[] = {"t",        "fz_left", "fz_right", "fx_left",
                                            "fx_right", "com_x",   "com_z",    "reward"};
    double v[8];
    for (std::size_t k = 0; k < 8; ++k) {
      v[k] = parse_double(fields[k], lineno, names[k]);
      if (!std::isfinite(v[k])) throw ParseError(lineno, std::string(names[k]) + ": non-finite");
    }
    const TraceRow row{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
    if (!trace.rows.empty() && !(row.t > trace.rows.back().t))
      throw ParseError(lineno, "t must be strictly increasing");
    trace.rows.push_back(row);
  }
  return trace;
}

inline EpisodeTrace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace '" + path + "'");
  return read_trace(in);
}

inline TraceRow trace_row(const StepResult& r) {
  return {r.info.t,        r.info.fz_left, r.info.fz_right, r.info.fx_left,
          r.info.fx_right, r.info.com_x,   r.info.com_z,    r.reward};
}

/// One greedy episode, reset with `seed`.
inline EpisodeTrace trace_episode(Agent& agent, BipedEnv& env, std::uint64_t seed) {
  EpisodeTrace trace;
  std::vector<double> obs = env.reset(seed).to_vector();
  for (;;) {
    const StepResult r = env.step(agent.act(obs, false));
    trace.push(trace_row(r));
    if (r.done) break;
    obs = r.obs.to_vector();
  }
  return trace;
}

struct StandingOptions {
  double duration = 2.0;  // simulated seconds
  double kp = 300.0;      // joint PD hold [N m / rad]
  double kd = 1.0;        // [N m s / rad]
};

/**
 * Nominal pose set down on the terrain and held by joint PD at the physics
 * rate. Rows are control steps with forces averaged over their substeps.
 */
inline EpisodeTrace record_standing(const RobotModel& model, const SoilParams& soil,
                                    const TerrainConfig& terrain, const EnvConfig& env,
                                    const StandingOptions& opt = {}) {
  env.validate();
  World world(model, soil, terrain, env.physics_dt());
  const JointVector pose{};
  world.reset(grounded_state(model, pose, 0.0, terrain.rest_height));
  const auto steps = static_cast<long>(std::lround(opt.duration / env.control_dt));
  EpisodeTrace trace;
  for (long k = 0; k < steps; ++k) {
    FootForces mean;
    for (int s = 0; s < env.physics_substeps; ++s)
      mean += world.substep(pd_torques(model, world.state(), pose, opt.kp, opt.kd));
    mean *= 1.0 / env.physics_substeps;
    const Eigen::Vector2d c = com(model, world.state().q);
    trace.push({world.state().t, mean.fz_left, mean.fz_right, mean.fx_left, mean.fx_right, c.x(),
                c.y(), 0.0});
  }
  return trace;
}

/// Statistics printed by `replay`.
struct TraceSummary {
  std::size_t rows = 0;
  double duration = 0.0;
  double mean_fz_total = 0.0;
  double max_fz_total = 0.0;
  double com_dx = 0.0;
  double total_reward = 0.0;
};

inline TraceSummary summarize(const EpisodeTrace& trace) {
  TraceSummary s;
  s.rows = trace.size();
  if (trace.empty()) return s;
  s.duration = trace.rows.back().t;
  for (const TraceRow& r : trace.rows) {
    const double fz = r.fz_left + r.fz_right;
    s.mean_fz_total += fz;
    s.max_fz_total = std::max(s.max_fz_total, fz);
    s.total_reward += r.reward;
  }
  s.mean_fz_total /= static_cast<double>(trace.size());
  s.com_dx = trace.rows.back().com_x - trace.rows.front().com_x;
  return s;
}

}  // namespace terrawalk

#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "terrawalk/biped.hpp"
#include "terrawalk/ddpg.hpp"
#include "terrawalk/env.hpp"
#include "terrawalk/error.hpp"
#include "terrawalk/soil.hpp"
#include "terrawalk/text.hpp"

namespace terrawalk {

/// Which environment `train`/`eval` drive.
enum class TaskKind { Biped, PointMass };

inline const char* task_name(TaskKind t) noexcept {
  return t == TaskKind::PointMass ? "point-mass" : "biped";
}

inline std::optional<TaskKind> task_from_name(std::string_view s) {
  if (s == "biped") return TaskKind::Biped;
  if (s == "point-mass") return TaskKind::PointMass;
  return std::nullopt;
}

struct Config {
  SoilParams soil;
  TerrainConfig terrain;
  RobotParams robot;
  EnvConfig env;
  RewardConfig reward;
  DdpgConfig ddpg;
  TaskKind task = TaskKind::Biped;
  std::string output_dir = "runs";

  void validate() const {
    soil.validate();
    terrain.validate();
    build_model(robot).validate();
    env.validate();
    reward.validate();
    ddpg.validate();
  }

  bool operator==(const Config&) const = default;
};

// ---------------------------------------------------------------------------
// INI layer
// ---------------------------------------------------------------------------

struct IniEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct IniSection {
  std::string name;
  std::size_t line = 0;
  std::vector<IniEntry> entries;
};

/**
 * `[section]` headers and `key = value` lines. `#` and `;` start comments
 * when they begin a line. Keys before any header, duplicate sections and
 * duplicate keys are errors.
 */
inline std::vector<IniSection> parse_ini(std::string_view text) {
  std::vector<IniSection> sections;
  std::size_t lineno = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ParseError(lineno, "malformed section header '" + std::string(line) + "'");
      const std::string name(trim(line.substr(1, line.size() - 2)));
      for (const auto& s : sections)
        if (s.name == name) throw ParseError(lineno, "duplicate section [" + name + "]");
      sections.push_back({name, lineno, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(lineno, "expected 'key = value', got '" + std::string(line) + "'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError(lineno, "missing key before '='");
    if (sections.empty()) throw ParseError(lineno, "key '" + key + "' outside any [section]");
    for (const auto& e : sections.back().entries)
      if (e.key == key) throw ParseError(lineno, "duplicate key '" + key + "'");
    sections.back().entries.push_back({key, value, lineno});
  }
  return sections;
}

// ---------------------------------------------------------------------------
// Config <-> INI
// ---------------------------------------------------------------------------

namespace detail {

struct Binding {
  std::string key;
  std::function<void(std::string_view, std::size_t)> set;
  std::function<std::string()> get;
};

inline Binding real(std::string key, double& field) {
  return {key,
          [&field, key](std::string_view v, std::size_t line) {
            const double x = parse_double(v, line, key);
            if (!std::isfinite(x)) throw ParseError(line, key + ": must be finite");
            field = x;
          },
          [&field] { return format_double(field); }};
}

template <class Int>
Binding count(std::string key, Int& field) {
  return {key,
          [&field, key](std::string_view v, std::size_t line) {
            const std::uint64_t n = parse_count(v, line, key);
            if (n > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))
              throw ParseError(line, key + ": value too large");
            field = static_cast<Int>(n);
          },
          [&field] { return std::to_string(field); }};
}

inline Binding seed(std::string key, std::uint64_t& field) {
  return {key,
          [&field, key](std::string_view v, std::size_t line) { field = parse_u64(v, line, key); },
          [&field] { return std::to_string(field); }};
}

using Section = std::vector<Binding>;

inline std::vector<std::pair<std::string, Section>> bindings(Config& c) {
  std::vector<std::pair<std::string, Section>> out;

  Section soil{real("k_c", c.soil.k_c),
               real("k_phi", c.soil.k_phi),
               real("n", c.soil.n),
               real("cohesion_c", c.soil.cohesion_c),
               real("friction_angle", c.soil.friction_angle),
               real("janosi_K", c.soil.janosi_K),
               real("elastic_k", c.soil.elastic_k),
               real("damping_R", c.soil.damping_R)};
  // Degrees for hand-written files; serialisation uses radians so it round-trips.
  soil.push_back({"friction_angle_deg",
                  [&c](std::string_view v, std::size_t line) {
                    const double deg = parse_double(v, line, "friction_angle_deg");
                    if (!std::isfinite(deg)) throw ParseError(line, "friction_angle_deg: must be finite");
                    c.soil.friction_angle = deg * std::numbers::pi / 180.0;
                  },
                  nullptr});
  out.emplace_back("soil", std::move(soil));

  out.emplace_back("terrain", Section{real("extent_x", c.terrain.extent_x),
                                     real("extent_y", c.terrain.extent_y),
                                     real("spacing", c.terrain.spacing),
                                     real("rest_height", c.terrain.rest_height),
                                     real("origin_x", c.terrain.origin_x)});

  out.emplace_back("robot", Section{real("torso_mass", c.robot.torso_mass),
                                   real("torso_length", c.robot.torso_length),
                                   real("hip_mass", c.robot.hip_mass),
                                   real("hip_length", c.robot.hip_length),
                                   real("thigh_mass", c.robot.thigh_mass),
                                   real("thigh_length", c.robot.thigh_length),
                                   real("shank_mass", c.robot.shank_mass),
                                   real("shank_length", c.robot.shank_length),
                                   real("foot_mass", c.robot.foot_mass),
                                   real("foot_length", c.robot.foot_length),
                                   real("foot_width", c.robot.foot_width),
                                   real("foot_height", c.robot.foot_height),
                                   real("torque_limit", c.robot.torque_limit)});

  out.emplace_back("env", Section{real("control_dt", c.env.control_dt),
                                 count("physics_substeps", c.env.physics_substeps),
                                 count("max_episode_steps", c.env.max_episode_steps),
                                 seed("seed", c.env.seed),
                                 real("initial_pose_noise", c.env.initial_pose_noise)});

  out.emplace_back("reward", Section{real("w_forward", c.reward.w_forward),
                                    real("w_lateral", c.reward.w_lateral),
                                    real("w_vertical", c.reward.w_vertical),
                                    real("fall_penalty", c.reward.fall_penalty)});

  Section ddpg{real("gamma", c.ddpg.gamma),
               real("tau", c.ddpg.tau),
               count("batch_size", c.ddpg.batch_size),
               count("buffer_capacity", c.ddpg.buffer_capacity),
               count("warmup_steps", c.ddpg.warmup_steps),
               real("noise_sigma", c.ddpg.noise_sigma),
               count("updates_per_step", c.ddpg.updates_per_step),
               seed("seed", c.ddpg.seed),
               real("actor_lr", c.ddpg.actor_lr),
               real("critic_lr", c.ddpg.critic_lr)};
  ddpg.push_back({"hidden",
                  [&c](std::string_view v, std::size_t line) {
                    std::vector<int> sizes;
                    for (std::string_view tok : split(v, ',')) {
                      const std::uint64_t n = parse_count(tok, line, "hidden");
                      if (n == 0 || n > 1u << 20) throw ParseError(line, "hidden: sizes must be in [1, 2^20]");
                      sizes.push_back(static_cast<int>(n));
                    }
                    c.ddpg.hidden = std::move(sizes);
                  },
                  [&c] {
                    std::string s;
                    for (std::size_t i = 0; i < c.ddpg.hidden.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.ddpg.hidden[i]);
                    return s;
                  }});
  out.emplace_back("ddpg", std::move(ddpg));

  out.emplace_back(
      "output",
      Section{{"dir",
               [&c](std::string_view v, std::size_t line) {
                 if (v.empty()) throw ParseError(line, "dir: must not be empty");
                 c.output_dir = std::string(v);
               },
               [&c] { return c.output_dir; }},
              {"task",
               [&c](std::string_view v, std::size_t line) {
                 const auto t = task_from_name(v);
                 if (!t) throw ParseError(line, "task: expected 'biped' or 'point-mass'");
                 c.task = *t;
               },
               [&c] { return std::string(task_name(c.task)); }}});
  return out;
}

/// Runs `check`; a ParameterError becomes a ParseError at `line`.
template <class F>
void at_line(std::size_t line, F&& check) {
  try {
    check();
  } catch (const ParameterError& e) {
    throw ParseError(line, e.what());
  }
}

}  // namespace detail

/// Build a Config from parsed sections. Sections named in `ignore` are skipped.
inline Config config_from_ini(const std::vector<IniSection>& sections,
                              const std::vector<std::string>& ignore = {}) {
  Config cfg;
  auto table = detail::bindings(cfg);
  std::map<std::string, std::size_t> last_line;  // per section, for invariant errors

  for (const IniSection& sec : sections) {
    if (std::find(ignore.begin(), ignore.end(), sec.name) != ignore.end()) continue;
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& entry) { return entry.first == sec.name; });
    if (it == table.end()) throw ParseError(sec.line, "unknown section [" + sec.name + "]");
    last_line[sec.name] = sec.line;
    for (const IniEntry& e : sec.entries) {
      auto b = std::find_if(it->second.begin(), it->second.end(),
                            [&](const detail::Binding& x) { return x.key == e.key; });
      if (b == it->second.end())
        throw ParseError(e.line, "unknown key '" + e.key + "' in [" + sec.name + "]");
      b->set(e.value, e.line);
      last_line[sec.name] = e.line;
    }
  }

  auto line_of = [&](const char* s) { return last_line.count(s) ? last_line[s] : 0; };
  detail::at_line(line_of("soil"), [&] { cfg.soil.validate(); });
  detail::at_line(line_of("terrain"), [&] { cfg.terrain.validate(); });
  detail::at_line(line_of("robot"), [&] { build_model(cfg.robot).validate(); });
  detail::at_line(line_of("env"), [&] { cfg.env.validate(); });
  detail::at_line(line_of("reward"), [&] { cfg.reward.validate(); });
  detail::at_line(line_of("ddpg"), [&] { cfg.ddpg.validate(); });
  return cfg;
}

/// Missing keys keep their defaults; unknown sections or keys are errors.
inline Config parse_config(std::string_view text) { return config_from_ini(parse_ini(text)); }

inline Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Every key, in a form parse_config reads back to an equal Config.
inline std::string serialize_config(const Config& cfg) {
  Config copy = cfg;
  std::ostringstream out;
  bool first = true;
  for (const auto& [name, section] : detail::bindings(copy)) {
    out << (first ? "" : "\n") << '[' << name << "]\n";
    first = false;
    for (const auto& b : section)
      if (b.get) out << b.key << " = " << b.get() << '\n';
  }
  return out.str();
}

/// TERRA_SEED, when set, replaces both the environment and agent seeds.
inline void apply_env_overrides(Config& cfg) {
  const char* s = std::getenv("TERRA_SEED");
  if (!s) return;
  const std::uint64_t seed = parse_u64(s, 0, "TERRA_SEED");
  cfg.env.seed = seed;
  cfg.ddpg.seed = seed;
}

inline BipedEnv make_biped_env(const Config& cfg) {
  return BipedEnv(build_model(cfg.robot), cfg.soil, cfg.terrain, cfg.env, cfg.reward);
}

}  // namespace terrawalk

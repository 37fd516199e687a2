#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "terrawalk/config.hpp"
#include "terrawalk/ddpg.hpp"
#include "terrawalk/nn.hpp"
#include "terrawalk/text.hpp"

namespace terrawalk {

/**
 * A checkpoint is a directory:
 *
 *   actor.twk, critic.twk, target_actor.twk, target_critic.twk
 *   manifest.ini   the full Config plus a [checkpoint] section with the
 *                  agent RNG state, step/episode counters and network sizes
 *
 * Adam moments and the replay buffer are not stored, so a reloaded agent
 * evaluates identically but does not resume training bit-for-bit.
 */
struct Checkpoint {
  Config config;
  std::size_t observation_size = 0;
  std::size_t action_size = 0;
  std::uint64_t total_steps = 0;
  std::uint64_t episodes_done = 0;
  Xoshiro256::State rng_state{};
};

namespace detail {

inline void write_network(const std::filesystem::path& path, const Mlp& net, const char* role) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_mlp(out, net, role);
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

inline Mlp read_network(const std::filesystem::path& path, const char* role, Activation out_act,
                        const Mlp& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  LoadedMlp loaded;
  try {
    loaded = read_mlp(in, out_act);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.filename().string() + ": " + e.what());
  }
  if (loaded.role != role)
    throw ParseError(1, path.filename().string() + ": role '" + loaded.role + "', expected '" +
                            role + "'");
  if (!loaded.net.same_architecture(expected))
    throw ParseError(1, path.filename().string() + ": layer sizes do not match the manifest");
  return std::move(loaded.net);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Agent& agent,
                            const Config& config) {
  std::filesystem::create_directories(dir);
  detail::write_network(dir / "actor.twk", agent.actor(), "actor");
  detail::write_network(dir / "critic.twk", agent.critic(), "critic");
  detail::write_network(dir / "target_actor.twk", agent.target_actor(), "target_actor");
  detail::write_network(dir / "target_critic.twk", agent.target_critic(), "target_critic");

  std::ofstream out(dir / "manifest.ini", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  out << serialize_config(config) << "\n[checkpoint]\n"
      << "observation_size = " << agent.observation_size() << '\n'
      << "action_size = " << agent.action_size() << '\n'
      << "total_steps = " << agent.total_steps() << '\n'
      << "episodes_done = " << agent.episodes_done() << '\n';
  const auto& s = agent.rng().state();
  for (std::size_t k = 0; k < s.size(); ++k) out << "rng" << k << " = " << s[k] << '\n';
  if (!out) throw std::runtime_error("write to manifest in '" + dir.string() + "' failed");
}

inline Checkpoint read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.ini";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  const auto sections = parse_ini(text.str());

  Checkpoint ck;
  ck.config = config_from_ini(sections, {"checkpoint"});
  const IniSection* meta = nullptr;
  for (const auto& s : sections)
    if (s.name == "checkpoint") meta = &s;
  if (!meta) throw ParseError(0, "manifest has no [checkpoint] section");

  bool seen_obs = false, seen_act = false;
  std::array<bool, 4> seen_rng{};
  for (const IniEntry& e : meta->entries) {
    if (e.key == "observation_size") {
      ck.observation_size = parse_u64(e.value, e.line, e.key);
      seen_obs = true;
    } else if (e.key == "action_size") {
      ck.action_size = parse_u64(e.value, e.line, e.key);
      seen_act = true;
    } else if (e.key == "total_steps") {
      ck.total_steps = parse_u64(e.value, e.line, e.key);
    } else if (e.key == "episodes_done") {
      ck.episodes_done = parse_u64(e.value, e.line, e.key);
    } else if (e.key.size() == 4 && e.key.starts_with("rng") && e.key[3] >= '0' && e.key[3] <= '3') {
      const auto k = static_cast<std::size_t>(e.key[3] - '0');
      ck.rng_state[k] = parse_u64(e.value, e.line, e.key);
      seen_rng[k] = true;
    } else {
      throw ParseError(e.line, "unknown key '" + e.key + "' in [checkpoint]");
    }
  }
  if (!seen_obs || !seen_act || ck.observation_size == 0 || ck.action_size == 0)
    throw ParseError(meta->line, "[checkpoint] needs positive observation_size and action_size");
  for (bool b : seen_rng)
    if (!b) throw ParseError(meta->line, "[checkpoint] needs rng0..rng3");
  return ck;
}

struct LoadedCheckpoint {
  Checkpoint meta;
  Agent agent;
};

/// Rebuilds the agent from the manifest config, then overwrites its networks.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint meta = read_manifest(dir);
  Agent agent(meta.observation_size, meta.action_size, meta.config.ddpg);
  agent.actor() = detail::read_network(dir / "actor.twk", "actor", Activation::Tanh, agent.actor());
  agent.critic() =
      detail::read_network(dir / "critic.twk", "critic", Activation::Identity, agent.critic());
  agent.target_actor() = detail::read_network(dir / "target_actor.twk", "target_actor",
                                              Activation::Tanh, agent.target_actor());
  agent.target_critic() = detail::read_network(dir / "target_critic.twk", "target_critic",
                                               Activation::Identity, agent.target_critic());
  agent.rng().set_state(meta.rng_state);
  agent.set_total_steps(meta.total_steps);
  agent.set_episodes_done(meta.episodes_done);
  return {std::move(meta), std::move(agent)};
}

}  // namespace terrawalk

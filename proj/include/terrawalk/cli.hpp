#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "terrawalk/checkpoint.hpp"
#include "terrawalk/config.hpp"
#include "terrawalk/ddpg.hpp"
#include "terrawalk/env.hpp"
#include "terrawalk/point_mass.hpp"
#include "terrawalk/soil.hpp"
#include "terrawalk/text.hpp"
#include "terrawalk/trace.hpp"

namespace terrawalk {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace cli {

/// Config file (or defaults), then TERRA_SEED, then an explicit --seed.
inline Config resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
  Config cfg = path.empty() ? Config{} : load_config(path);
  apply_env_overrides(cfg);
  if (seed) {
    cfg.env.seed = *seed;
    cfg.ddpg.seed = *seed;
  }
  return cfg;
}

/// Calls f(env) with the environment named by cfg.task.
template <class F>
decltype(auto) with_env(const Config& cfg, F&& f) {
  if (cfg.task == TaskKind::PointMass) {
    PointMassEnv env;
    return f(env);
  }
  BipedEnv env = make_biped_env(cfg);
  return f(env);
}

struct TrainArgs {
  std::string config;
  std::size_t episodes = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string env;
};

inline int train(const TrainArgs& a, std::ostream& out) {
  Config cfg = resolve_config(a.config, a.seed);
  if (!a.env.empty()) cfg.task = *task_from_name(a.env);
  if (!a.out.empty()) cfg.output_dir = a.out;
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write '" + (dir / "metrics.csv").string() + "'");
  write_metrics_header(metrics);
  metrics.flush();

  return with_env(cfg, [&](auto& env) {
    Agent agent(env.observation_size(), env.action_size(), cfg.ddpg);
    std::size_t non_finite = 0;
    TrainHooks hooks;
    hooks.on_episode = [&](const EpisodeMetrics& m) {
      write_metrics_row(metrics, m);
      metrics.flush();
      non_finite += m.non_finite ? 1 : 0;
    };
    hooks.on_abort = [&](const Agent& failed, const TrainingError&) {
      save_checkpoint(dir / "abort_checkpoint", failed, cfg);
    };
    const TrainingMetrics result = train(agent, env, a.episodes, hooks);
    save_checkpoint(dir / "checkpoint", agent, cfg);

    double tail = 0.0;
    const std::size_t n = std::min<std::size_t>(10, result.episodes.size());
    for (std::size_t k = result.episodes.size() - n; k < result.episodes.size(); ++k)
      tail += result.episodes[k].ret;
    out << "episodes " << result.episodes.size() << ", steps " << agent.total_steps()
        << ", updates " << result.updates << ", non-finite episodes " << non_finite << '\n';
    if (n > 0) out << "mean return (last " << n << ") " << format_double(tail / n) << '\n';
    out << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "checkpoint").string()
        << '\n';
    return kExitOk;
  });
}

struct EvalArgs {
  std::string checkpoint;
  std::size_t episodes = 1;
  std::optional<std::uint64_t> seed;
};

inline int eval(const EvalArgs& a, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const Config& cfg = ck.meta.config;
  const std::uint64_t seed = a.seed.value_or(cfg.env.seed);
  return with_env(cfg, [&](auto& env) {
    if (env.observation_size() != ck.agent.observation_size() ||
        env.action_size() != ck.agent.action_size())
      throw std::runtime_error("checkpoint network sizes do not match its environment");
    const EvalResult r = evaluate(ck.agent, env, a.episodes, seed);
    for (std::size_t k = 0; k < r.returns.size(); ++k)
      out << "episode " << k << " return " << format_double(r.returns[k]) << " progress "
          << format_double(r.progress[k]) << '\n';
    out << "mean return " << format_double(r.mean_return()) << '\n';
    return kExitOk;
  });
}

struct PlateArgs {
  std::string config;
  double weight = 10.0;
  double side = 0.1;
};

inline int plate_test(const PlateArgs& a, std::ostream& out) {
  const Config cfg = resolve_config(a.config, std::nullopt);
  const PlateIndentation r =
      simulate_plate_indentation(cfg.soil, a.weight, a.side, cfg.terrain.spacing);
  out << "analytic sinkage " << format_double(r.analytic_sinkage * 1e3) << " mm\n"
      << "simulated sinkage " << format_double(r.simulated_sinkage * 1e3) << " mm\n"
      << "relative error " << format_double(r.relative_error) << '\n';
  return kExitOk;
}

struct TraceArgs {
  std::string checkpoint;
  bool stand = false;
  std::string config;
  double duration = 2.0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline int trace_forces(const TraceArgs& a, std::ostream& out) {
  EpisodeTrace trace;
  if (a.stand) {
    const Config cfg = resolve_config(a.config, std::nullopt);
    StandingOptions opt;
    opt.duration = a.duration;
    trace = record_standing(build_model(cfg.robot), cfg.soil, cfg.terrain, cfg.env, opt);
  } else {
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    const Config& cfg = ck.meta.config;
    if (cfg.task != TaskKind::Biped)
      throw std::runtime_error("trace-forces needs a biped checkpoint");
    BipedEnv env = make_biped_env(cfg);
    trace = trace_episode(ck.agent, env, a.seed.value_or(cfg.env.seed));
  }
  write_trace(a.out, trace);
  out << "wrote " << trace.size() << " rows to " << a.out << '\n';
  return kExitOk;
}

inline int replay(const std::string& path, std::ostream& out) {
  const TraceSummary s = summarize(read_trace(path));
  out << "rows " << s.rows << '\n'
      << "duration " << format_double(s.duration) << " s\n"
      << "mean total fz " << format_double(s.mean_fz_total) << " N\n"
      << "max total fz " << format_double(s.max_fz_total) << " N\n"
      << "com dx " << format_double(s.com_dx) << " m\n"
      << "total reward " << format_double(s.total_reward) << '\n';
  return kExitOk;
}

}  // namespace cli

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Planar biped on deformable terrain: simulation and DDPG training", "terrawalk"};
  app.require_subcommand(1);

  cli::TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a DDPG agent; writes metrics.csv and a checkpoint");
  t->add_option("--config", train.config, "INI config file")->check(CLI::ExistingFile);
  t->add_option("--episodes", train.episodes, "Number of episodes")->required();
  t->add_option("--seed", train.seed, "Seed for the environment and agent");
  t->add_option("--out", train.out, "Output directory (default: [output] dir)");
  t->add_option("--env", train.env, "Environment")
      ->check(CLI::IsMember({"biped", "point-mass"}));

  cli::EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  e->add_option("--episodes", eval.episodes, "Number of episodes")->capture_default_str();
  e->add_option("--seed", eval.seed, "Evaluation seed (default: config env seed)");

  cli::PlateArgs plate;
  auto* p = app.add_subcommand("plate-test", "Static plate indentation against the closed form");
  p->add_option("--weight", plate.weight, "Plate weight [N]")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  p->add_option("--side", plate.side, "Plate side [m]")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  p->add_option("--config", plate.config, "INI config file")->check(CLI::ExistingFile);

  cli::TraceArgs trace;
  auto* f = app.add_subcommand("trace-forces", "Write a foot-force trace CSV");
  auto* ck = f->add_option("--checkpoint", trace.checkpoint, "Checkpoint directory (one greedy episode)")
                 ->check(CLI::ExistingDirectory);
  auto* st = f->add_flag("--stand", trace.stand, "Record the PD-held standing pose instead");
  ck->excludes(st);
  f->add_option("--config", trace.config, "INI config file (with --stand)")
      ->check(CLI::ExistingFile)
      ->needs(st);
  f->add_option("--duration", trace.duration, "Standing duration [s] (with --stand)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber)
      ->needs(st);
  f->add_option("--seed", trace.seed, "Episode seed (default: config env seed)")->needs(ck);
  f->add_option("--out", trace.out, "Output CSV path")->required();

  std::string trace_path;
  auto* r = app.add_subcommand("replay", "Summary statistics of a trace CSV");
  r->add_option("--trace", trace_path, "Trace CSV")->required()->check(CLI::ExistingFile);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands({});
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == name; })) {
      err << "error: unknown subcommand '" << name << "'\n\n" << app.help();
      return kExitUsage;
    }
  }

  try {
    app.parse(argc, argv);
    if (f->parsed() && trace.checkpoint.empty() && !trace.stand)
      throw CLI::RequiredError("trace-forces needs --checkpoint or --stand");
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (t->parsed()) return cli::train(train, out);
    if (e->parsed()) return cli::eval(eval, out);
    if (p->parsed()) return cli::plate_test(plate, out);
    if (f->parsed()) return cli::trace_forces(trace, out);
    return cli::replay(trace_path, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
}

inline int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"terrawalk"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_command(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace terrawalk

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "terrawalk/checkpoint.hpp"
#include "terrawalk/cli.hpp"
#include "terrawalk/point_mass.hpp"
#include "terrawalk/trace.hpp"

using namespace terrawalk;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Fresh scratch directory per test, removed afterwards.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("terrawalk_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::size_t trace_error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    read_trace(in);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

TEST(RunCommand, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitUsage);
  const Outcome unknown = run({"fly"});
  EXPECT_EQ(unknown.code, kExitUsage);
  EXPECT_NE(unknown.err.find("unknown subcommand 'fly'"), std::string::npos);
  EXPECT_NE(unknown.err.find("plate-test"), std::string::npos);
  EXPECT_EQ(run({"train"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--episodes", "x"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--episodes", "1", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--episodes", "1", "--env", "quadruped"}).code, kExitUsage);
  EXPECT_EQ(run({"plate-test", "--weight", "-3"}).code, kExitUsage);
  EXPECT_EQ(run({"trace-forces", "--out", "x.csv"}).code, kExitUsage);
  EXPECT_EQ(run({"replay", "--trace", "/nonexistent/trace.csv"}).code, kExitUsage);
}

TEST(RunCommand, HelpExitsZero) {
  const Outcome help = run({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("train"), std::string::npos);
  const Outcome sub = run({"plate-test", "--help"});
  EXPECT_EQ(sub.code, kExitOk);
  EXPECT_NE(sub.out.find("--weight"), std::string::npos);
}

TEST_F(CliTest, RuntimeFailureExitsOne) {
  const Outcome r = run({"eval", "--checkpoint", dir_.string()});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);

  write_file(path("bad.ini"), "[soil]\nn = -1\n");
  const Outcome p = run({"plate-test", "--config", path("bad.ini")});
  EXPECT_EQ(p.code, kExitRuntime);
  EXPECT_NE(p.err.find("line 2"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

TEST_F(CliTest, TrainZeroEpisodesWritesHeaderOnlyMetrics) {
  const Outcome r = run({"train", "--episodes", "0", "--out", path("run")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(dir_ / "run" / "metrics.csv"), "episode,steps,return,critic_loss,actor_obj\n");
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint" / "manifest.ini"));
}

TEST_F(CliTest, TrainWritesOneMetricsRowPerEpisode) {
  const Outcome r = run({"train", "--env", "point-mass", "--episodes", "7", "--seed", "3", "--out",
                     path("run")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream csv(slurp(dir_ / "run" / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, kMetricsHeader);
  int rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_EQ(split(line, ',').size(), 5u);
    EXPECT_EQ(line.rfind(std::to_string(rows) + ",20,", 0), 0u);
    ++rows;
  }
  EXPECT_EQ(rows, 7);
  EXPECT_NE(r.out.find("episodes 7, steps 140"), std::string::npos);
}

TEST_F(CliTest, IdenticalArgvGivesIdenticalFiles) {
  const std::vector<std::string> argv{"train", "--env", "point-mass", "--episodes", "40",
                                      "--seed", "11", "--out", path("run")};
  const std::vector<std::string> files{"metrics.csv", "checkpoint/manifest.ini",
                                       "checkpoint/actor.twk", "checkpoint/critic.twk",
                                       "checkpoint/target_actor.twk", "checkpoint/target_critic.twk"};
  ASSERT_EQ(run(argv).code, kExitOk);
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(dir_ / "run" / f));
  fs::remove_all(dir_ / "run");
  ASSERT_EQ(run(argv).code, kExitOk);
  for (std::size_t k = 0; k < files.size(); ++k)
    EXPECT_EQ(slurp(dir_ / "run" / files[k]), first[k]) << files[k];
}

TEST_F(CliTest, PlateTestPrintsAnalyticAndSimulatedSinkage) {
  const Outcome r = run({"plate-test", "--weight", "10", "--side", "0.1"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream lines(r.out);
  std::string a, s, e;
  std::getline(lines, a);
  std::getline(lines, s);
  std::getline(lines, e);
  EXPECT_EQ(a.rfind("analytic sinkage 8.09", 0), 0u) << a;
  EXPECT_EQ(s.rfind("simulated sinkage 8.09", 0), 0u) << s;
  ASSERT_EQ(e.rfind("relative error ", 0), 0u);
  EXPECT_LT(std::stod(e.substr(15)), 0.01);
}

TEST_F(CliTest, TraceForcesFromCheckpointAndReplay) {
  ASSERT_EQ(run({"train", "--episodes", "1", "--seed", "2", "--out", path("run")}).code, kExitOk);
  const std::string ck = (dir_ / "run" / "checkpoint").string();
  const Outcome t = run({"trace-forces", "--checkpoint", ck, "--out", path("trace.csv")});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const EpisodeTrace trace = read_trace(path("trace.csv"));
  ASSERT_FALSE(trace.empty());
  for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_GT(trace.rows[k].t, trace.rows[k - 1].t);
  EXPECT_NEAR(trace.rows[0].t, 0.02, 1e-12);

  // The greedy episode length matches a library-side rerun of the same checkpoint.
  LoadedCheckpoint loaded = load_checkpoint(ck);
  BipedEnv env = make_biped_env(loaded.meta.config);
  EXPECT_EQ(trace_episode(loaded.agent, env, 2), trace);

  const Outcome r = run({"replay", "--trace", path("trace.csv")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("rows " + std::to_string(trace.size()) + "\n", 0), 0u);
}

TEST_F(CliTest, StandingTraceSupportsBodyWeight) {
  const Outcome t = run({"trace-forces", "--stand", "--duration", "1", "--out", path("stand.csv")});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const TraceSummary s = summarize(read_trace(path("stand.csv")));
  EXPECT_EQ(s.rows, 50u);
  EXPECT_LT(std::abs(s.mean_fz_total - 17.5 * 9.81), 0.02 * 17.5 * 9.81);
  EXPECT_EQ(run({"trace-forces", "--stand", "--checkpoint", dir_.string(), "--out", path("x.csv")}).code,
            kExitUsage);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_F(CliTest, CheckpointEvalIsBitIdentical) {
  Config cfg;
  cfg.task = TaskKind::PointMass;
  cfg.ddpg.seed = 21;
  cfg.ddpg.warmup_steps = 100;
  cfg.ddpg.batch_size = 16;
  PointMassEnv env;
  Agent agent(1, 1, cfg.ddpg);
  train(agent, env, 20);
  const EvalResult before = evaluate(agent, env, 10, 5);
  save_checkpoint(dir_ / "ck", agent, cfg);

  LoadedCheckpoint loaded = load_checkpoint(dir_ / "ck");
  const EvalResult after = evaluate(loaded.agent, env, 10, 5);
  EXPECT_EQ(before.returns, after.returns);
  EXPECT_EQ(before.progress, after.progress);
  EXPECT_EQ(loaded.agent.actor(), agent.actor());
  EXPECT_EQ(loaded.agent.critic(), agent.critic());
  EXPECT_EQ(loaded.agent.target_actor(), agent.target_actor());
  EXPECT_EQ(loaded.agent.target_critic(), agent.target_critic());
  EXPECT_EQ(loaded.agent.rng().state(), agent.rng().state());
  EXPECT_EQ(loaded.agent.total_steps(), 400u);
  EXPECT_EQ(loaded.agent.episodes_done(), 20u);
  EXPECT_EQ(loaded.meta.config, cfg);

  const Outcome e1 = run({"eval", "--checkpoint", (dir_ / "ck").string(), "--episodes", "3"});
  const Outcome e2 = run({"eval", "--checkpoint", (dir_ / "ck").string(), "--episodes", "3"});
  ASSERT_EQ(e1.code, kExitOk) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_NE(e1.out.find("mean return "), std::string::npos);
}

TEST_F(CliTest, CorruptCheckpointsAreRejected) {
  Config cfg;
  Agent agent(23, 6, cfg.ddpg);
  save_checkpoint(dir_ / "ck", agent, cfg);
  ASSERT_NO_THROW(load_checkpoint(dir_ / "ck"));

  fs::copy_file(dir_ / "ck" / "critic.twk", dir_ / "ck" / "actor.twk",
                fs::copy_options::overwrite_existing);
  EXPECT_THROW(load_checkpoint(dir_ / "ck"), ParseError);

  save_checkpoint(dir_ / "ck", agent, cfg);
  const std::string manifest = slurp(dir_ / "ck" / "manifest.ini");
  write_file(dir_ / "ck" / "manifest.ini", manifest + "extra = 1\n");
  EXPECT_THROW(read_manifest(dir_ / "ck"), ParseError);

  std::string no_rng = manifest.substr(0, manifest.find("rng3"));
  write_file(dir_ / "ck" / "manifest.ini", no_rng);
  EXPECT_THROW(read_manifest(dir_ / "ck"), ParseError);

  std::string resized = manifest;
  resized.replace(resized.find("observation_size = 23"), 21, "observation_size = 22");
  write_file(dir_ / "ck" / "manifest.ini", resized);
  EXPECT_THROW(load_checkpoint(dir_ / "ck"), ParseError);
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

TEST(TraceCsv, RoundTripPreservesFullPrecision) {
  EpisodeTrace trace;
  for (int k = 1; k <= 25; ++k)
    trace.push({0.02 * k, 85.0 + 1.0 / k, 86.0 / 3.0, -1e-300, 4.9e-324, 0.1 * k, 0.7, -1.0 / 7.0});
  std::stringstream s;
  write_trace(s, trace);
  EXPECT_EQ(read_trace(s), trace);
}

TEST(TraceCsv, EmptyTraceIsHeaderOnly) {
  std::stringstream s;
  write_trace(s, EpisodeTrace{});
  EXPECT_EQ(s.str(), "t,fz_left,fz_right,fx_left,fx_right,com_x,com_z,reward\n");
  EXPECT_TRUE(read_trace(s).empty());
}

TEST(TraceCsv, MalformedRowsReportFileLine) {
  const std::string h = std::string(kTraceHeader) + "\n";
  EXPECT_EQ(trace_error_line(""), 1u);
  EXPECT_EQ(trace_error_line("t,fz\n"), 1u);
  EXPECT_EQ(trace_error_line(h + "0.02,1,2,3,4,5,6,7\n0.04,1,2,3\n"), 3u);
  EXPECT_EQ(trace_error_line(h + "0.02,1,2,3,4,5,6,7\n0.04,1,2,3,4,5,6,x\n"), 3u);
  EXPECT_EQ(trace_error_line(h + "0.02,1,2,3,4,5,6,7\n0.02,1,2,3,4,5,6,7\n"), 3u);
  EXPECT_EQ(trace_error_line(h + "0.02,1,2,3,4,5,6,nan\n"), 2u);
  EXPECT_EQ(trace_error_line(h + "0.02,1,2,3,4,5,6,7\n"), 0u);
}

TEST(TraceCsv, PushRequiresIncreasingTime) {
  EpisodeTrace trace;
  trace.push({0.1});
  EXPECT_THROW(trace.push({0.1}), ParameterError);
  EXPECT_THROW(trace.push({0.05}), ParameterError);
  EXPECT_THROW(trace.push({std::nan("")}), ParameterError);
  EXPECT_EQ(trace.size(), 1u);
}

TEST(TraceSummary, Statistics) {
  EpisodeTrace trace;
  trace.push({0.02, 80, 90, 0, 0, 0.10, 0.7, 0.5});
  trace.push({0.04, 100, 60, 0, 0, 0.13, 0.7, -0.25});
  const TraceSummary s = summarize(trace);
  EXPECT_EQ(s.rows, 2u);
  EXPECT_EQ(s.duration, 0.04);
  EXPECT_EQ(s.mean_fz_total, 165.0);
  EXPECT_EQ(s.max_fz_total, 170.0);
  EXPECT_NEAR(s.com_dx, 0.03, 1e-15);
  EXPECT_EQ(s.total_reward, 0.25);
  EXPECT_EQ(summarize(EpisodeTrace{}).rows, 0u);
}

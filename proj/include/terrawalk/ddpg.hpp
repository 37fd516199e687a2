#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "terrawalk/env.hpp"
#include "terrawalk/error.hpp"
#include "terrawalk/nn.hpp"
#include "terrawalk/rng.hpp"

namespace terrawalk {

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

/// Column-per-sample view of a sampled batch.
struct Minibatch {
  Eigen::MatrixXd s;       // obs x N
  Eigen::MatrixXd a;       // act x N
  Eigen::VectorXd r;       // N
  Eigen::MatrixXd s_next;  // obs x N
  Eigen::VectorXd done;    // N, 1.0 for terminal transitions

  Eigen::Index size() const { return r.size(); }

  static Minibatch from(std::span<const Transition> items) {
    if (items.empty()) throw ParameterError("minibatch: empty");
    const auto n = static_cast<Eigen::Index>(items.size());
    const auto obs = static_cast<Eigen::Index>(items[0].s.size());
    const auto act = static_cast<Eigen::Index>(items[0].a.size());
    Minibatch b{Eigen::MatrixXd(obs, n), Eigen::MatrixXd(act, n), Eigen::VectorXd(n),
                Eigen::MatrixXd(obs, n), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const Transition& t = items[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(t.s.size()) != obs ||
          static_cast<Eigen::Index>(t.s_next.size()) != obs ||
          static_cast<Eigen::Index>(t.a.size()) != act)
        throw ParameterError("minibatch: inconsistent transition sizes");
      b.s.col(i) = Eigen::Map<const Eigen::VectorXd>(t.s.data(), obs);
      b.a.col(i) = Eigen::Map<const Eigen::VectorXd>(t.a.data(), act);
      b.s_next.col(i) = Eigen::Map<const Eigen::VectorXd>(t.s_next.data(), obs);
      b.r(i) = t.r;
      b.done(i) = t.done ? 1.0 : 0.0;
    }
    return b;
  }
};

/// Bounded FIFO of transitions. Pushing at capacity evicts the oldest.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ParameterError("replay buffer: capacity must be > 0");
    storage_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const noexcept { return storage_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= storage_.size()) throw ParameterError("replay buffer: index out of range");
    const std::size_t start = storage_.size() < capacity_ ? 0 : cursor_;
    return storage_[(start + i) % capacity_];
  }

  /// Uniform with replacement.
  std::vector<Transition> sample(std::size_t batch_size, Xoshiro256& rng) const {
    if (batch_size == 0) throw ParameterError("replay buffer: batch size must be > 0");
    if (storage_.size() < batch_size)
      throw NotReadyError("replay buffer: holds " + std::to_string(storage_.size()) +
                          " transitions, batch needs " + std::to_string(batch_size));
    std::vector<Transition> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) out.push_back(storage_[rng.below(storage_.size())]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t cursor_ = 0;
};

struct DdpgConfig {
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 100000;
  std::size_t warmup_steps = 1000;
  double noise_sigma = 0.1;
  std::size_t updates_per_step = 1;
  std::uint64_t seed = 0;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::vector<int> hidden{64, 64};

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ParameterError("ddpg: gamma must lie in [0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ParameterError("ddpg: tau must lie in (0, 1]");
    if (batch_size == 0) throw ParameterError("ddpg: batch_size must be > 0");
    if (batch_size > buffer_capacity)
      throw ParameterError("ddpg: batch_size must not exceed buffer_capacity");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw ParameterError("ddpg: noise_sigma must be >= 0");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0))
      throw ParameterError("ddpg: learning rates must be > 0");
    if (hidden.empty()) throw ParameterError("ddpg: need at least one hidden layer");
    for (int h : hidden)
      if (h <= 0) throw ParameterError("ddpg: hidden sizes must be > 0");
  }

  bool operator==(const DdpgConfig&) const = default;
};

/**
 * Actor, critic and their targets. The critic takes [s; a] stacked at the
 * input layer.
 */
class Agent {
 public:
  Agent(std::size_t obs_size, std::size_t action_size, DdpgConfig cfg)
      : cfg_(std::move(cfg)), buffer_((cfg_.validate(), cfg_.buffer_capacity)) {
    if (obs_size == 0 || action_size == 0)
      throw ParameterError("agent: observation and action sizes must be > 0");
    obs_ = static_cast<int>(obs_size);
    act_ = static_cast<int>(action_size);

    std::vector<int> actor_sizes{obs_};
    std::vector<int> critic_sizes{obs_ + act_};
    for (int h : cfg_.hidden) {
      actor_sizes.push_back(h);
      critic_sizes.push_back(h);
    }
    actor_sizes.push_back(act_);
    critic_sizes.push_back(1);

    actor_ = Mlp(actor_sizes, Activation::Tanh, derive_seed(cfg_.seed, 1));
    critic_ = Mlp(critic_sizes, Activation::Identity, derive_seed(cfg_.seed, 2));
    target_actor_ = actor_;
    target_critic_ = critic_;
    actor_opt_ = AdamState(cfg_.actor_lr);
    critic_opt_ = AdamState(cfg_.critic_lr);
    rng_.reseed(derive_seed(cfg_.seed, 3));
  }

  std::size_t observation_size() const noexcept { return static_cast<std::size_t>(obs_); }
  std::size_t action_size() const noexcept { return static_cast<std::size_t>(act_); }

  /// Policy output plus optional Gaussian noise, clamped to the unit box.
  std::vector<double> act(std::span<const double> obs, bool explore) {
    if (static_cast<int>(obs.size()) != obs_)
      throw ParameterError("agent act: observation has " + std::to_string(obs.size()) +
                           " entries, expected " + std::to_string(obs_));
    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(obs.data(), obs_);
    const Eigen::VectorXd mu = actor_.forward(x);
    std::vector<double> a(static_cast<std::size_t>(act_));
    for (int i = 0; i < act_; ++i) {
      double v = mu(i);
      if (explore && cfg_.noise_sigma > 0.0) v += cfg_.noise_sigma * rng_.normal();
      a[static_cast<std::size_t>(i)] = std::clamp(v, -1.0, 1.0);
    }
    return a;
  }

  /// Uniform random action in the unit box.
  std::vector<double> random_action() {
    std::vector<double> a(static_cast<std::size_t>(act_));
    for (double& v : a) v = rng_.uniform(-1.0, 1.0);
    return a;
  }

  /// y = r + gamma (1 - done) Q'(s', mu'(s')).
  Eigen::VectorXd critic_targets(const Minibatch& b) const {
    check_batch(b);
    const Eigen::MatrixXd a_next = target_actor_.forward(b.s_next);
    Eigen::MatrixXd sa(obs_ + act_, b.size());
    sa << b.s_next, a_next;
    const Eigen::VectorXd q_next = target_critic_.forward(sa).row(0).transpose();
    Eigen::VectorXd y = b.r;
    for (Eigen::Index i = 0; i < b.size(); ++i)
      if (b.done(i) == 0.0) y(i) += cfg_.gamma * q_next(i);
    return y;
  }

  struct CriticGradient {
    double loss = 0.0;
    Gradients grads;
  };

  /// Mean squared TD error and its gradient w.r.t. critic parameters.
  CriticGradient critic_gradient(const Minibatch& b) const {
    const Eigen::VectorXd y = critic_targets(b);
    Eigen::MatrixXd sa(obs_ + act_, b.size());
    sa << b.s, b.a;
    Mlp::Cache cache;
    const Eigen::RowVectorXd q = critic_.forward(sa, cache).row(0);
    const Eigen::RowVectorXd diff = q - y.transpose();
    const double n = static_cast<double>(b.size());
    CriticGradient out;
    out.loss = diff.squaredNorm() / n;
    out.grads = critic_.backward(cache, (2.0 / n) * diff);
    return out;
  }

  struct ActorGradient {
    double objective = 0.0;  // mean Q(s, mu(s))
    Gradients grads;         // d objective / d actor params
  };

  /// Deterministic policy gradient through the critic's action input.
  ActorGradient actor_gradient(const Minibatch& b) const {
    check_batch(b);
    Mlp::Cache actor_cache;
    const Eigen::MatrixXd a = actor_.forward(b.s, actor_cache);
    Eigen::MatrixXd sa(obs_ + act_, b.size());
    sa << b.s, a;
    Mlp::Cache critic_cache;
    const Eigen::RowVectorXd q = critic_.forward(sa, critic_cache).row(0);
    const double n = static_cast<double>(b.size());
    Eigen::MatrixXd d_input;
    critic_.backward(critic_cache, Eigen::RowVectorXd::Constant(b.size(), 1.0 / n), &d_input);
    ActorGradient out;
    out.objective = q.mean();
    out.grads = actor_.backward(actor_cache, d_input.bottomRows(act_));
    return out;
  }

  /// One Adam descent step on the critic; returns the pre-step loss.
  double update_critic(const Minibatch& b) {
    CriticGradient g = critic_gradient(b);
    if (!std::isfinite(g.loss) || !g.grads.all_finite())
      throw TrainingError("update_critic: non-finite loss or gradient (loss " +
                          format_double(g.loss) + ")");
    adam_step(critic_opt_, critic_, g.grads);
    return g.loss;
  }

  /// One Adam ascent step on mean Q; returns the pre-step objective.
  double update_actor(const Minibatch& b) {
    ActorGradient g = actor_gradient(b);
    if (!std::isfinite(g.objective) || !g.grads.all_finite())
      throw TrainingError("update_actor: non-finite objective or gradient (objective " +
                          format_double(g.objective) + ")");
    g.grads *= -1.0;
    adam_step(actor_opt_, actor_, g.grads);
    return g.objective;
  }

  void update_targets() {
    soft_update(target_actor_, actor_, cfg_.tau);
    soft_update(target_critic_, critic_, cfg_.tau);
  }

  const DdpgConfig& config() const noexcept { return cfg_; }
  Mlp& actor() noexcept { return actor_; }
  Mlp& critic() noexcept { return critic_; }
  Mlp& target_actor() noexcept { return target_actor_; }
  Mlp& target_critic() noexcept { return target_critic_; }
  const Mlp& actor() const noexcept { return actor_; }
  const Mlp& critic() const noexcept { return critic_; }
  const Mlp& target_actor() const noexcept { return target_actor_; }
  const Mlp& target_critic() const noexcept { return target_critic_; }
  ReplayBuffer& buffer() noexcept { return buffer_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  Xoshiro256& rng() noexcept { return rng_; }
  const Xoshiro256& rng() const noexcept { return rng_; }
  std::uint64_t total_steps() const noexcept { return total_steps_; }
  void set_total_steps(std::uint64_t n) noexcept { total_steps_ = n; }
  std::uint64_t episodes_done() const noexcept { return episodes_done_; }
  void set_episodes_done(std::uint64_t n) noexcept { episodes_done_ = n; }

 private:
  void check_batch(const Minibatch& b) const {
    if (b.size() == 0) throw ParameterError("agent: empty minibatch");
    if (b.s.rows() != obs_ || b.s_next.rows() != obs_ || b.a.rows() != act_)
      throw ParameterError("agent: minibatch dimensions do not match the networks");
  }

  DdpgConfig cfg_;
  int obs_ = 0;
  int act_ = 0;
  Mlp actor_, critic_, target_actor_, target_critic_;
  AdamState actor_opt_, critic_opt_;
  ReplayBuffer buffer_;
  Xoshiro256 rng_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t episodes_done_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpisodeMetrics {
  std::uint64_t episode = 0;
  std::uint64_t steps = 0;
  double ret = 0.0;
  double critic_loss = 0.0;  // mean over the episode's updates, 0 if none
  double actor_obj = 0.0;    // mean over the episode's updates, 0 if none
  double progress = 0.0;     // env-reported forward progress at episode end
  bool non_finite = false;
};

struct TrainingMetrics {
  std::vector<EpisodeMetrics> episodes;
  std::uint64_t updates = 0;
};

struct TrainHooks {
  std::function<void(const EpisodeMetrics&)> on_episode;
  /// Called with the agent as it stood when training failed, before rethrow.
  std::function<void(const Agent&, const TrainingError&)> on_abort;
};

/// Seed used to reset the environment for a given episode number.
inline std::uint64_t episode_seed(std::uint64_t base, std::uint64_t episode) {
  return derive_seed(base, 0x1000 + episode);
}

/**
 * Runs `episodes` episodes. Before `warmup_steps` environment steps have been
 * taken the agent acts uniformly at random and does not update; afterwards it
 * acts with Gaussian exploration and performs `updates_per_step` updates per
 * step once the buffer can fill a batch.
 */
template <Environment Env>
TrainingMetrics train(Agent& agent, Env& env, std::size_t episodes, const TrainHooks& hooks = {}) {
  if (env.observation_size() != agent.observation_size() ||
      env.action_size() != agent.action_size())
    throw ParameterError("train: agent and environment dimensions differ");

  const DdpgConfig& cfg = agent.config();
  TrainingMetrics metrics;
  for (std::size_t e = 0; e < episodes; ++e) {
    EpisodeMetrics m;
    m.episode = agent.episodes_done();
    std::vector<double> obs = env.reset_observation(episode_seed(cfg.seed, m.episode));
    double loss_sum = 0.0, obj_sum = 0.0;
    std::uint64_t updates = 0;
    for (;;) {
      const bool warm = agent.total_steps() < cfg.warmup_steps;
      std::vector<double> action = warm ? agent.random_action() : agent.act(obs, true);
      EnvStep step = env.step_transition(action);
      agent.set_total_steps(agent.total_steps() + 1);
      ++m.steps;
      m.ret += step.reward;
      m.progress = step.progress;
      m.non_finite = m.non_finite || step.non_finite;
      agent.buffer().push({obs, action, step.reward, step.observation, step.terminated});
      obs = std::move(step.observation);

      if (!warm && agent.buffer().size() >= cfg.batch_size) {
        try {
          for (std::size_t u = 0; u < cfg.updates_per_step; ++u) {
            const Minibatch batch =
                Minibatch::from(agent.buffer().sample(cfg.batch_size, agent.rng()));
            loss_sum += agent.update_critic(batch);
            obj_sum += agent.update_actor(batch);
            agent.update_targets();
            ++updates;
          }
        } catch (const TrainingError& err) {
          if (hooks.on_abort) hooks.on_abort(agent, err);
          throw;
        }
      }
      if (step.terminated || step.truncated) break;
    }
    if (updates > 0) {
      m.critic_loss = loss_sum / static_cast<double>(updates);
      m.actor_obj = obj_sum / static_cast<double>(updates);
    }
    metrics.updates += updates;
    agent.set_episodes_done(agent.episodes_done() + 1);
    metrics.episodes.push_back(m);
    if (hooks.on_episode) hooks.on_episode(m);
  }
  return metrics;
}

struct EvalResult {
  std::vector<double> returns;
  std::vector<double> progress;
  double mean_return() const {
    if (returns.empty()) return 0.0;
    double s = 0.0;
    for (double r : returns) s += r;
    return s / static_cast<double>(returns.size());
  }
};

/// Greedy rollouts. Episode k resets with episode_seed(seed, k).
template <Environment Env>
EvalResult evaluate(Agent& agent, Env& env, std::size_t episodes, std::uint64_t seed) {
  EvalResult out;
  for (std::size_t k = 0; k < episodes; ++k) {
    std::vector<double> obs = env.reset_observation(episode_seed(seed, k));
    double ret = 0.0, progress = 0.0;
    for (;;) {
      EnvStep step = env.step_transition(agent.act(obs, false));
      ret += step.reward;
      progress = step.progress;
      obs = std::move(step.observation);
      if (step.terminated || step.truncated) break;
    }
    out.returns.push_back(ret);
    out.progress.push_back(progress);
  }
  return out;
}

inline constexpr const char* kMetricsHeader = "episode,steps,return,critic_loss,actor_obj";

inline void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

inline void write_metrics_row(std::ostream& out, const EpisodeMetrics& m) {
  out << m.episode << ',' << m.steps << ',' << format_double(m.ret) << ','
      << format_double(m.critic_loss) << ',' << format_double(m.actor_obj) << '\n';
}

}  // namespace terrawalk

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "terrawalk/env.hpp"
#include "terrawalk/error.hpp"
#include "terrawalk/rng.hpp"

namespace terrawalk {

/**
 * 1-D reach task. The state is a position x with x0 ~ U[-1, 1). An action
 * a in [-1, 1] moves it by step * a and the reward is 1 - |x'|. Episodes end
 * by truncation after `horizon` steps.
 *
 * Moving straight to the origin at full speed is optimal, so the best return
 * from distance d is sum_{k=1..H} (1 - max(0, d - step*k)).
 */
class PointMassEnv {
 public:
  explicit PointMassEnv(int horizon = 20, double step = 0.25) : horizon_(horizon), step_(step) {
    if (horizon <= 0) throw ParameterError("point mass: horizon must be > 0");
    if (!(step > 0.0)) throw ParameterError("point mass: step must be > 0");
  }

  std::size_t observation_size() const noexcept { return 1; }
  std::size_t action_size() const noexcept { return 1; }

  std::vector<double> reset_observation(std::uint64_t seed) {
    Xoshiro256 rng(seed);
    x_ = rng.uniform(-1.0, 1.0);
    x0_ = x_;
    t_ = 0;
    return {x_};
  }

  EnvStep step_transition(std::span<const double> action) {
    if (action.size() != 1) throw ParameterError("point mass: action must have one entry");
    if (t_ >= horizon_) throw UsageError("point mass: episode already finished");
    if (!std::isfinite(action[0])) throw ParameterError("point mass: non-finite action");
    x_ += step_ * std::clamp(action[0], -1.0, 1.0);
    ++t_;
    EnvStep out;
    out.observation = {x_};
    out.reward = 1.0 - std::abs(x_);
    out.truncated = t_ >= horizon_;
    out.progress = std::abs(x0_) - std::abs(x_);
    return out;
  }

  /// Best achievable return from the current episode's start.
  double optimal_return() const { return optimal_return(std::abs(x0_)); }

  double optimal_return(double distance) const {
    double total = 0.0;
    for (int k = 1; k <= horizon_; ++k) total += 1.0 - std::max(0.0, distance - step_ * k);
    return total;
  }

  double position() const noexcept { return x_; }
  double start() const noexcept { return x0_; }
  int horizon() const noexcept { return horizon_; }

 private:
  int horizon_;
  double step_;
  double x_ = 0.0;
  double x0_ = 0.0;
  int t_ = 0;
};

static_assert(Environment<PointMassEnv>);

}  // namespace terrawalk

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "terrawalk/biped.hpp"
#include "terrawalk/error.hpp"
#include "terrawalk/rng.hpp"
#include "terrawalk/soil.hpp"

namespace terrawalk {

// ---------------------------------------------------------------------------
// Generic episodic interface consumed by the training loop
// ---------------------------------------------------------------------------

struct EnvStep {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminated = false;  // failure state; no bootstrapping past it
  bool truncated = false;   // step budget exhausted
  double progress = 0.0;    // task-specific forward progress since reset
  bool non_finite = false;  // the simulation produced a non-finite state
};

template <class E>
concept Environment = requires(E& env, const E& cenv, std::uint64_t seed,
                               std::span<const double> action) {
  { cenv.observation_size() } -> std::convertible_to<std::size_t>;
  { cenv.action_size() } -> std::convertible_to<std::size_t>;
  { env.reset_observation(seed) } -> std::same_as<std::vector<double>>;
  { env.step_transition(action) } -> std::same_as<EnvStep>;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RewardConfig {
  double w_forward = 1.0;
  double w_lateral = 0.5;
  double w_vertical = 0.5;
  double fall_penalty = 10.0;

  void validate() const {
    if (!(w_forward >= 0.0 && w_lateral >= 0.0 && w_vertical >= 0.0 && fall_penalty >= 0.0))
      throw ParameterError("reward: weights and fall_penalty must be >= 0");
  }
  bool operator==(const RewardConfig&) const = default;
};

struct TerrainConfig {
  double extent_x = 14.0;
  double extent_y = 0.4;
  double spacing = 0.01;
  double rest_height = 0.0;
  double origin_x = -2.0;  // world x of the first grid column

  void validate() const {
    if (!(extent_x > 0.0 && extent_y > 0.0 && spacing > 0.0))
      throw ParameterError("terrain: extents and spacing must be > 0");
    if (!std::isfinite(rest_height) || !std::isfinite(origin_x))
      throw ParameterError("terrain: non-finite rest_height or origin_x");
  }
  TerrainGrid make_grid() const {
    return TerrainGrid(extent_x, extent_y, spacing, rest_height,
                       Eigen::Vector2d(origin_x, -0.5 * extent_y));
  }
  bool operator==(const TerrainConfig&) const = default;
};

struct EnvConfig {
  double control_dt = 0.02;
  int physics_substeps = 20;
  int max_episode_steps = 1000;
  std::uint64_t seed = 0;
  double initial_pose_noise = 0.02;  // uniform +- on each joint [rad]

  double physics_dt() const { return control_dt / physics_substeps; }

  void validate() const {
    if (!(control_dt > 0.0)) throw ParameterError("env: control_dt must be > 0");
    if (physics_substeps < 1) throw ParameterError("env: physics_substeps must be >= 1");
    if (!(physics_dt() <= kMaxPhysicsDt))
      throw ParameterError("env: control_dt / physics_substeps must be <= 5e-3");
    if (max_episode_steps < 1) throw ParameterError("env: max_episode_steps must be > 0");
    if (!(initial_pose_noise >= 0.0)) throw ParameterError("env: initial_pose_noise must be >= 0");
  }
  bool operator==(const EnvConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Physics world: robot + deformable terrain
// ---------------------------------------------------------------------------

/// Sums of foot contact forces [N] (z normal, x tangential).
struct FootForces {
  double fz_left = 0.0;
  double fz_right = 0.0;
  double fx_left = 0.0;
  double fx_right = 0.0;

  FootForces& operator+=(const FootForces& o) {
    fz_left += o.fz_left;
    fz_right += o.fz_right;
    fx_left += o.fx_left;
    fx_right += o.fx_right;
    return *this;
  }
  FootForces& operator*=(double s) {
    fz_left *= s;
    fz_right *= s;
    fx_left *= s;
    fx_right *= s;
    return *this;
  }
};

/**
 * One robot on one terrain grid, advanced at the physics rate. Each substep
 * samples both soles, resolves soil forces on the grid and integrates the
 * multibody dynamics with those forces applied at the sample points.
 *
 * Soles are sampled twice per grid step heel to toe and once per grid step
 * across the foot width, so a level foot loads a (foot_length/h) x
 * (foot_width/h) block of nodes with two samples per node.
 */
class World {
 public:
  World(RobotModel model, SoilParams soil, TerrainConfig terrain, double physics_dt)
      : model_(std::move(model)),
        soil_(soil),
        terrain_(terrain),
        dt_(physics_dt),
        grid_(terrain.make_grid()) {
    model_.validate();
    soil_.validate();
    terrain_.validate();
    if (!(dt_ > 0.0 && dt_ <= kMaxPhysicsDt))
      throw ParameterError("world: physics dt must lie in (0, 5e-3]");
    // Two samples per grid cell along the sole, so every node under the foot
    // keeps a sample as the foot slides or tilts.
    samples_per_foot_ =
        std::max(2, 2 * static_cast<int>(std::lround(model_.foot_length / terrain_.spacing)));
    lateral_rows_ = std::max(1, static_cast<int>(std::lround(model_.foot_width / terrain_.spacing)));
  }

  void reset(const RobotState& state) {
    grid_ = terrain_.make_grid();
    state_ = state;
  }

  /// Replace the robot state, keeping terrain memory.
  void set_state(const RobotState& state) { state_ = state; }

  FootForces substep(const JointVector& torques) {
    check_step_inputs(state_, dt_);
    const JointVector tau = clamp_torques(model_, torques);
    const auto samples = foot_contact_samples(model_, state_.q, state_.qd, samples_per_foot_,
                                              lateral_rows_, terrain_.spacing,
                                              SolePlacement::Midpoints);
    const auto contact = step_contact(grid_, samples, dt_, soil_);

    // Normal soil forces go straight into the dynamics. Tangential soil forces
    // are pooled per foot and applied at the foot's centre of pressure.
    FootForces sums;
    external_.clear();
    std::array<double, 2> traction_limit{};
    std::array<Eigen::Vector2d, 2> pressure_centre{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
    std::array<double, 2> normal{};
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const Eigen::Vector3d& f = contact.forces[s];
      if (f.isZero(0.0)) continue;
      const std::size_t side = samples[s].owner == BodyId::LeftFoot ? 0 : 1;
      external_.push_back({side == 0 ? Link::FootL : Link::FootR, samples[s].world_pos,
                           Eigen::Vector3d(0.0, 0.0, f.z())});
      traction_limit[side] += f.x();
      normal[side] += f.z();
      pressure_centre[side] +=
          f.z() * Eigen::Vector2d(samples[s].world_pos.x(), samples[s].world_pos.z());
    }
    sums.fz_left = normal[0];
    sums.fz_right = normal[1];

    const DynamicsTerms terms = dynamics_terms(model_, state_, tau, external_);
    const MassSolver solver(terms.M, false);
    VectorQ qdd = solver.solve(terms.rhs);

    // Velocity-level traction: each foot's tangential force may not exceed
    // the soil's Janosi/Mohr-Coulomb force and may not reverse the sole's
    // predicted slip within this step (projected Gauss-Seidel, two contacts).
    std::array<Eigen::Matrix<double, 1, kDof>, 2> jx;
    std::array<VectorQ, 2> response;
    std::array<double, 2> v_pred{};
    std::array<double, 2> lambda{};
    std::array<bool, 2> active{};
    for (std::size_t side = 0; side < 2; ++side) {
      traction_limit[side] = std::abs(traction_limit[side]);
      active[side] = normal[side] > 0.0 && traction_limit[side] > 0.0;
      if (!active[side]) continue;
      const Eigen::Vector2d centre = pressure_centre[side] / normal[side];
      jx[side] = point_jacobian(model_, state_.q, side == 0 ? Link::FootL : Link::FootR, centre)
                     .row(0);
      response[side] = solver.solve(jx[side].transpose());
      v_pred[side] = jx[side].dot(state_.qd + dt_ * qdd);
    }
    for (int sweep = 0; sweep < 16; ++sweep) {
      for (std::size_t a = 0; a < 2; ++a) {
        if (!active[a]) continue;
        double v = v_pred[a];
        for (std::size_t b = 0; b < 2; ++b)
          if (active[b]) v += dt_ * lambda[b] * jx[a].dot(response[b]);
        const double w = jx[a].dot(response[a]);
        lambda[a] = std::clamp(lambda[a] - v / (dt_ * w), -traction_limit[a], traction_limit[a]);
      }
    }
    for (std::size_t side = 0; side < 2; ++side)
      if (active[side]) qdd += lambda[side] * response[side];
    sums.fx_left = lambda[0];
    sums.fx_right = lambda[1];

    state_ = integrate(model_, state_, qdd, dt_);
    return sums;
  }

  const RobotModel& model() const noexcept { return model_; }
  const SoilParams& soil() const noexcept { return soil_; }
  const TerrainConfig& terrain() const noexcept { return terrain_; }
  const TerrainGrid& grid() const noexcept { return grid_; }
  const RobotState& state() const noexcept { return state_; }
  double physics_dt() const noexcept { return dt_; }
  int samples_per_foot() const noexcept { return samples_per_foot_; }
  int lateral_rows() const noexcept { return lateral_rows_; }

 private:
  RobotModel model_;
  SoilParams soil_;
  TerrainConfig terrain_;
  double dt_;
  TerrainGrid grid_;
  RobotState state_;
  int samples_per_foot_ = 18;
  int lateral_rows_ = 5;
  std::vector<ExternalForce> external_;
};

/// Nominal zero pose translated so the lowest sole point rests on the ground.
inline RobotState grounded_state(const RobotModel& model, const JointVector& joints,
                                 double base_x, double ground_height, double pitch = 0.0) {
  RobotState s;
  s.q(0) = base_x;
  s.q(2) = pitch;
  for (int j = 0; j < kJoints; ++j) s.q(3 + j) = joints[static_cast<std::size_t>(j)];
  const BodyPoses poses = forward_kinematics(model, s.q);
  double lowest = poses.feet[0].heel.y();
  for (const auto& f : poses.feet) lowest = std::min({lowest, f.heel.y(), f.toe.y()});
  s.q(1) = ground_height - lowest;
  return s;
}

// ---------------------------------------------------------------------------
// Biped MDP
// ---------------------------------------------------------------------------

/**
 * Observation layout (length 23):
 *
 *   0      com_lateral        (always 0, planar)
 *   1      com_vertical
 *   2..7   joint angles       hip_L knee_L ankle_L hip_R knee_R ankle_R
 *   8..13  joint velocities   same order
 *   14     vel_forward        whole-body CoM velocity x
 *   15     vel_lateral        (always 0, planar)
 *   16     vel_vertical       CoM velocity z
 *   17..22 previous action
 */
struct Observation {
  static constexpr std::size_t kSize = 23;
  static constexpr std::size_t kComLateral = 0;
  static constexpr std::size_t kComVertical = 1;
  static constexpr std::size_t kJointAngles = 2;
  static constexpr std::size_t kJointVelocities = 8;
  static constexpr std::size_t kVelForward = 14;
  static constexpr std::size_t kVelLateral = 15;
  static constexpr std::size_t kVelVertical = 16;
  static constexpr std::size_t kPrevAction = 17;

  double com_lateral = 0.0;
  double com_vertical = 0.0;
  JointVector joint_angles{};
  JointVector joint_velocities{};
  double vel_forward = 0.0;
  double vel_lateral = 0.0;
  double vel_vertical = 0.0;
  JointVector prev_action{};

  std::vector<double> to_vector() const {
    std::vector<double> v(kSize, 0.0);
    v[kComLateral] = com_lateral;
    v[kComVertical] = com_vertical;
    std::copy(joint_angles.begin(), joint_angles.end(), v.begin() + kJointAngles);
    std::copy(joint_velocities.begin(), joint_velocities.end(), v.begin() + kJointVelocities);
    v[kVelForward] = vel_forward;
    v[kVelLateral] = vel_lateral;
    v[kVelVertical] = vel_vertical;
    std::copy(prev_action.begin(), prev_action.end(), v.begin() + kPrevAction);
    return v;
  }
};

/// Per-step diagnostics. The first nine fields are the frozen tracing keys.
struct StepInfo {
  double fz_left = 0.0;
  double fz_right = 0.0;
  double fx_left = 0.0;
  double fx_right = 0.0;
  double com_x = 0.0;
  double com_z = 0.0;
  double reward_forward = 0.0;
  double reward_lateral = 0.0;   // signed contribution, <= 0
  double reward_vertical = 0.0;  // signed contribution, <= 0
  double fall_penalty = 0.0;     // subtracted, >= 0
  double t = 0.0;
  bool fell = false;
  bool truncated = false;
  bool non_finite = false;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class BipedEnv {
 public:
  BipedEnv(RobotModel model = build_model(), SoilParams soil = {}, TerrainConfig terrain = {},
           EnvConfig env = {}, RewardConfig reward = {})
      : cfg_(env),
        reward_(reward),
        world_(std::move(model), soil, terrain, (env.validate(), env.physics_dt())) {
    reward_.validate();
    reset(cfg_.seed);
  }

  static constexpr std::size_t kActionSize = kJoints;
  std::size_t observation_size() const { return Observation::kSize; }
  std::size_t action_size() const { return kActionSize; }

  Observation reset(std::uint64_t seed) {
    Xoshiro256 rng(seed);
    const RobotModel& model = world_.model();
    JointVector joints{};
    for (int j = 0; j < kJoints; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      double v = 0.0;
      if (cfg_.initial_pose_noise > 0.0)
        v = rng.uniform(-cfg_.initial_pose_noise, cfg_.initial_pose_noise);
      joints[ju] = std::clamp(v, model.joint_limits[ju].lo, model.joint_limits[ju].hi);
    }
    world_.reset(grounded_state(model, joints, 0.0, world_.terrain().rest_height));
    prev_action_.fill(0.0);
    steps_ = 0;
    done_ = false;
    const Eigen::Vector2d c = com(model, world_.state().q);
    start_com_x_ = c.x();
    return observe();
  }

  StepResult step(std::span<const double> action) {
    if (done_) throw UsageError("BipedEnv::step called on a terminated episode; call reset");
    if (action.size() != kActionSize)
      throw ParameterError("BipedEnv::step: action must have 6 components");

    const RobotModel& model = world_.model();
    JointVector u{};
    JointVector torques{};
    for (std::size_t j = 0; j < kActionSize; ++j) {
      const double a = std::isfinite(action[j]) ? action[j] : 0.0;
      u[j] = std::clamp(a, -1.0, 1.0);
      torques[j] = u[j] * model.torque_limit;
    }

    const Eigen::Vector2d com_before = com(model, world_.state().q);
    StepResult out;
    FootForces mean;
    int completed = 0;
    try {
      for (int k = 0; k < cfg_.physics_substeps; ++k) {
        mean += world_.substep(torques);
        ++completed;
      }
    } catch (const IntegrationError&) {
      out.info.non_finite = true;
    }
    if (completed > 0) mean *= 1.0 / completed;
    prev_action_ = u;
    ++steps_;

    const Eigen::Vector2d com_after = com(model, world_.state().q);
    const double dx = com_after.x() - com_before.x();
    const double dz = com_after.y() - com_before.y();
    const double dy = 0.0;  // planar

    StepInfo& info = out.info;
    info.fz_left = mean.fz_left;
    info.fz_right = mean.fz_right;
    info.fx_left = mean.fx_left;
    info.fx_right = mean.fx_right;
    info.com_x = com_after.x();
    info.com_z = com_after.y();
    info.t = world_.state().t;
    info.fell = info.non_finite ||
                detect_fall(model, world_.state(), world_.terrain().rest_height);
    info.truncated = !info.fell && steps_ >= cfg_.max_episode_steps;
    info.reward_forward = reward_.w_forward * dx;
    info.reward_lateral = -reward_.w_lateral * std::abs(dy);
    info.reward_vertical = -reward_.w_vertical * std::abs(dz);
    info.fall_penalty = info.fell ? reward_.fall_penalty : 0.0;

    out.reward = compose_reward(info);
    out.done = info.fell || info.truncated;
    done_ = out.done;
    out.obs = observe();
    return out;
  }

  /// Sum of the logged reward terms, in the order step() combines them.
  static double compose_reward(const StepInfo& info) {
    return info.reward_forward + info.reward_lateral + info.reward_vertical - info.fall_penalty;
  }

  Observation observe() const {
    const RobotModel& model = world_.model();
    const RobotState& s = world_.state();
    Observation o;
    const Eigen::Vector2d c = com(model, s.q);
    const Eigen::Vector2d v = com_velocity(model, s.q, s.qd);
    o.com_lateral = 0.0;
    o.com_vertical = c.y();
    for (int j = 0; j < kJoints; ++j) {
      o.joint_angles[static_cast<std::size_t>(j)] = s.q(3 + j);
      o.joint_velocities[static_cast<std::size_t>(j)] = s.qd(3 + j);
    }
    o.vel_forward = v.x();
    o.vel_lateral = 0.0;
    o.vel_vertical = v.y();
    o.prev_action = prev_action_;
    return o;
  }

  // Environment concept adapters.
  std::vector<double> reset_observation(std::uint64_t seed) { return reset(seed).to_vector(); }
  EnvStep step_transition(std::span<const double> action) {
    StepResult r = step(action);
    EnvStep e;
    e.observation = r.obs.to_vector();
    e.reward = r.reward;
    e.terminated = r.info.fell || r.info.non_finite;
    e.truncated = r.info.truncated;
    e.non_finite = r.info.non_finite;
    e.progress = r.info.com_x - start_com_x_;
    return e;
  }

  bool done() const noexcept { return done_; }
  int steps() const noexcept { return steps_; }
  double time() const noexcept { return world_.state().t; }
  const World& world() const noexcept { return world_; }
  const EnvConfig& config() const noexcept { return cfg_; }
  const RewardConfig& reward_config() const noexcept { return reward_; }

  /// Test hook: overwrite the robot state without touching terrain memory.
  void set_state_for_testing(const RobotState& s) { world_.set_state(s); }

 private:
  EnvConfig cfg_;
  RewardConfig reward_;
  World world_;
  JointVector prev_action_{};
  int steps_ = 0;
  bool done_ = false;
  double start_com_x_ = 0.0;
};

static_assert(Environment<BipedEnv>);

}  // namespace terrawalk

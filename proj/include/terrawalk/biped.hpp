#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "terrawalk/error.hpp"
#include "terrawalk/soil.hpp"

namespace terrawalk {

// Generalised coordinates of the planar biped:
//   q = [base_x, base_z, base_pitch, hip_L, knee_L, ankle_L, hip_R, knee_R, ankle_R]
// The floating base is the hip point; pitch is the torso angle.
//
// Angle conventions (x forward, z up, positive = counter-clockwise):
//   thigh  = pitch + hip       (0 hangs straight down)
//   shank  = thigh - knee      (knee > 0 folds the shank backwards)
//   foot   = shank + ankle     (0 keeps the sole horizontal)
inline constexpr int kDof = 9;
inline constexpr int kJoints = 6;
inline constexpr int kLinks = 7;

using VectorQ = Eigen::Matrix<double, kDof, 1>;
using MatrixQ = Eigen::Matrix<double, kDof, kDof>;
using JointVector = std::array<double, kJoints>;

enum class Link : int { Torso = 0, ThighL, ShankL, FootL, ThighR, ShankR, FootR };
enum class Side : int { Left = 0, Right = 1 };

/// q index of a leg joint; `joint` is 0 hip, 1 knee, 2 ankle.
constexpr int joint_q_index(Side side, int joint) { return 3 + 3 * static_cast<int>(side) + joint; }

struct LinkParams {
  double mass = 0.0;        ///< [kg]
  double length = 0.0;      ///< [m]
  double com_offset = 0.0;  ///< proximal joint to CoM along the link [m]
  double inertia = 0.0;     ///< planar, about the CoM [kg m^2]

  void validate(const char* name) const {
    auto fail = [name](const char* what) {
      throw ParameterError(std::string("link ") + name + ": " + what);
    };
    if (!(mass > 0.0)) fail("mass must be > 0");
    if (!(length >= 0.0)) fail("length must be >= 0");
    if (!(com_offset >= 0.0 && com_offset <= length)) fail("com_offset must lie on the link");
    if (!(inertia >= 0.0)) fail("inertia must be >= 0");
  }

  bool operator==(const LinkParams&) const = default;
};

/// Table of raw link masses and lengths, the input to build_model.
struct RobotParams {
  double torso_mass = 4.0;
  double torso_length = 0.23;
  double hip_mass = 1.5;  // hip block, lumped into the torso
  double hip_length = 0.13;
  double thigh_mass = 2.5;
  double thigh_length = 0.23;
  double shank_mass = 2.5;
  double shank_length = 0.23;
  double foot_mass = 1.0;
  double foot_length = 0.09;
  double foot_width = 0.05;
  double foot_height = 0.02;  // ankle above sole
  double torque_limit = 30.0;

  bool operator==(const RobotParams&) const = default;
};

struct JointRange {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const JointRange&) const = default;
};

struct RobotModel {
  std::array<LinkParams, kLinks> links{};
  double foot_length = 0.09;
  double foot_width = 0.05;
  double foot_height = 0.02;
  double hip_half_width = 0.065;  // lateral offset of each leg; bookkeeping only
  double torque_limit = 30.0;
  std::array<JointRange, kJoints> joint_limits{};
  double gravity = 9.81;

  const LinkParams& link(Link l) const { return links[static_cast<std::size_t>(l)]; }

  void validate() const {
    static constexpr const char* names[kLinks] = {"torso",  "thigh_L", "shank_L", "foot_L",
                                                  "thigh_R", "shank_R", "foot_R"};
    for (int k = 0; k < kLinks; ++k) links[static_cast<std::size_t>(k)].validate(names[k]);
    for (int k = 1; k <= 3; ++k)
      if (!(links[static_cast<std::size_t>(k)] == links[static_cast<std::size_t>(k + 3)]))
        throw ParameterError("robot: left/right link parameters must be symmetric");
    if (!(foot_length > 0.0)) throw ParameterError("robot: foot_length must be > 0");
    if (!(foot_width > 0.0)) throw ParameterError("robot: foot_width must be > 0");
    if (!(foot_height >= 0.0)) throw ParameterError("robot: foot_height must be >= 0");
    if (!(torque_limit > 0.0)) throw ParameterError("robot: torque_limit must be > 0");
    for (const auto& r : joint_limits)
      if (!(r.lo <= r.hi)) throw ParameterError("robot: joint limit lo > hi");
  }
};

/**
 * Build the seven-link model from a parameter table.
 *
 * Limbs are uniform slender rods (CoM mid-link, inertia m l^2 / 12). The hip
 * block is merged into the torso as a rod centred on the hip joint, so the
 * torso's CoM and inertia are the composite of both. Foot CoM sits half the
 * foot height below the ankle, above the sole centre.
 */
inline RobotModel build_model(const RobotParams& t = {}) {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ParameterError(std::string("robot params: ") + what + " must be > 0");
  };
  positive(t.torso_mass, "torso_mass");
  positive(t.torso_length, "torso_length");
  positive(t.hip_mass, "hip_mass");
  positive(t.hip_length, "hip_length");
  positive(t.thigh_mass, "thigh_mass");
  positive(t.thigh_length, "thigh_length");
  positive(t.shank_mass, "shank_mass");
  positive(t.shank_length, "shank_length");
  positive(t.foot_mass, "foot_mass");
  positive(t.foot_length, "foot_length");
  positive(t.foot_width, "foot_width");
  positive(t.torque_limit, "torque_limit");
  if (!(t.foot_height >= 0.0)) throw ParameterError("robot params: foot_height must be >= 0");

  auto rod = [](double m, double l) { return LinkParams{m, l, 0.5 * l, m * l * l / 12.0}; };

  RobotModel model;
  const double m_torso = t.torso_mass + t.hip_mass;
  const double c_torso = t.torso_mass * 0.5 * t.torso_length / m_torso;
  const double d_upper = 0.5 * t.torso_length - c_torso;
  const double inertia_torso = t.torso_mass * t.torso_length * t.torso_length / 12.0 +
                               t.torso_mass * d_upper * d_upper +
                               t.hip_mass * t.hip_length * t.hip_length / 12.0 +
                               t.hip_mass * c_torso * c_torso;
  model.links[0] = {m_torso, t.torso_length, c_torso, inertia_torso};

  const LinkParams thigh = rod(t.thigh_mass, t.thigh_length);
  const LinkParams shank = rod(t.shank_mass, t.shank_length);
  LinkParams foot = rod(t.foot_mass, t.foot_length);
  foot.com_offset = std::min(0.5 * t.foot_height, t.foot_length);
  for (int side = 0; side < 2; ++side) {
    model.links[static_cast<std::size_t>(1 + 3 * side)] = thigh;
    model.links[static_cast<std::size_t>(2 + 3 * side)] = shank;
    model.links[static_cast<std::size_t>(3 + 3 * side)] = foot;
  }
  model.foot_length = t.foot_length;
  model.foot_width = t.foot_width;
  model.foot_height = t.foot_height;
  model.hip_half_width = 0.5 * t.hip_length;
  model.torque_limit = t.torque_limit;
  const JointRange hip{-1.2, 1.2}, knee{0.0, 2.2}, ankle{-0.8, 0.8};
  model.joint_limits = {hip, knee, ankle, hip, knee, ankle};
  model.validate();
  return model;
}

inline double total_mass(const RobotModel& model) {
  double m = 0.0;
  for (const auto& l : model.links) m += l.mass;
  return m;
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::Vector2d rotate(double theta, const Eigen::Vector2d& v) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

// One rigid segment of a kinematic chain: its absolute angle is coeff . q and
// it contributes R(angle) * local to the point position.
struct Segment {
  VectorQ coeff = VectorQ::Zero();
  Eigen::Vector2d local = Eigen::Vector2d::Zero();
};

struct LinkChain {
  std::array<Segment, 3> prefix{};  // joints between the base and the link frame
  int prefix_len = 0;
  VectorQ coeff = VectorQ::Zero();  // absolute angle of the link itself
};

inline LinkChain chain_of(const RobotModel& model, Link link) {
  LinkChain c;
  VectorQ torso = VectorQ::Zero();
  torso(2) = 1.0;
  if (link == Link::Torso) {
    c.coeff = torso;
    return c;
  }
  const int side = static_cast<int>(link) <= 3 ? 0 : 1;
  const int part = (static_cast<int>(link) - 1) % 3;  // 0 thigh, 1 shank, 2 foot
  VectorQ thigh = torso;
  thigh(joint_q_index(Side(side), 0)) = 1.0;
  VectorQ shank = thigh;
  shank(joint_q_index(Side(side), 1)) = -1.0;
  VectorQ foot = shank;
  foot(joint_q_index(Side(side), 2)) = 1.0;

  const double l_thigh = model.links[static_cast<std::size_t>(1 + 3 * side)].length;
  const double l_shank = model.links[static_cast<std::size_t>(2 + 3 * side)].length;
  if (part >= 1) c.prefix[c.prefix_len++] = {thigh, {0.0, -l_thigh}};
  if (part >= 2) c.prefix[c.prefix_len++] = {shank, {0.0, -l_shank}};
  c.coeff = part == 0 ? thigh : part == 1 ? shank : foot;
  return c;
}

// CoM of a link expressed in its own frame.
inline Eigen::Vector2d com_local(const RobotModel& model, Link link) {
  const double c = model.link(link).com_offset;
  return link == Link::Torso ? Eigen::Vector2d(0.0, c) : Eigen::Vector2d(0.0, -c);
}

struct PointKinematics {
  Eigen::Vector2d position;
  Eigen::Matrix<double, 2, kDof> jacobian;
  Eigen::Vector2d bias;  // acceleration for qdd = 0
};

inline PointKinematics evaluate(const LinkChain& chain, const Eigen::Vector2d& local,
                                const VectorQ& q, const VectorQ* qd) {
  PointKinematics out;
  out.position = q.head<2>();
  out.jacobian.setZero();
  out.jacobian(0, 0) = 1.0;
  out.jacobian(1, 1) = 1.0;
  out.bias.setZero();
  auto add = [&](const VectorQ& coeff, const Eigen::Vector2d& v) {
    const double theta = coeff.dot(q);
    const Eigen::Vector2d rv = rotate(theta, v);
    const Eigen::Vector2d drv(-rv.y(), rv.x());
    out.position += rv;
    for (int j = 2; j < kDof; ++j)
      if (coeff(j) != 0.0) out.jacobian.col(j) += coeff(j) * drv;
    if (qd) {
      const double omega = coeff.dot(*qd);
      out.bias -= omega * omega * rv;
    }
  };
  for (int k = 0; k < chain.prefix_len; ++k) add(chain.prefix[static_cast<std::size_t>(k)].coeff,
                                                 chain.prefix[static_cast<std::size_t>(k)].local);
  add(chain.coeff, local);
  return out;
}

}  // namespace detail

struct Pose2 {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double angle = 0.0;
};

struct FootPose {
  Eigen::Vector2d ankle = Eigen::Vector2d::Zero();
  Eigen::Vector2d sole_center = Eigen::Vector2d::Zero();
  Eigen::Vector2d heel = Eigen::Vector2d::Zero();
  Eigen::Vector2d toe = Eigen::Vector2d::Zero();
  double angle = 0.0;
};

/// World-frame (x, z) poses. `frames` are link frames at each proximal joint;
/// `coms` are link centres of mass.
struct BodyPoses {
  std::array<Pose2, kLinks> frames{};
  std::array<Eigen::Vector2d, kLinks> coms{};
  Eigen::Vector2d hip = Eigen::Vector2d::Zero();
  std::array<Eigen::Vector2d, 2> knee{};
  std::array<Eigen::Vector2d, 2> ankle{};
  std::array<FootPose, 2> feet{};
};

/// World position of a point fixed to `link`, given in the link frame.
inline Eigen::Vector2d body_point(const RobotModel& model, const VectorQ& q, Link link,
                                  const Eigen::Vector2d& local) {
  return detail::evaluate(detail::chain_of(model, link), local, q, nullptr).position;
}

inline double link_angle(const RobotModel& model, const VectorQ& q, Link link) {
  return detail::chain_of(model, link).coeff.dot(q);
}

inline BodyPoses forward_kinematics(const RobotModel& model, const VectorQ& q) {
  BodyPoses out;
  out.hip = q.head<2>();
  for (int k = 0; k < kLinks; ++k) {
    const Link link = static_cast<Link>(k);
    const auto chain = detail::chain_of(model, link);
    Pose2& frame = out.frames[static_cast<std::size_t>(k)];
    frame.angle = chain.coeff.dot(q);
    frame.position = q.head<2>();
    for (int s = 0; s < chain.prefix_len; ++s)
      frame.position += detail::rotate(chain.prefix[static_cast<std::size_t>(s)].coeff.dot(q),
                                       chain.prefix[static_cast<std::size_t>(s)].local);
    out.coms[static_cast<std::size_t>(k)] =
        frame.position + detail::rotate(frame.angle, detail::com_local(model, link));
  }
  for (int side = 0; side < 2; ++side) {
    const auto shank = static_cast<std::size_t>(2 + 3 * side);
    const auto foot = static_cast<std::size_t>(3 + 3 * side);
    out.knee[static_cast<std::size_t>(side)] = out.frames[shank].position;
    out.ankle[static_cast<std::size_t>(side)] = out.frames[foot].position;
    FootPose& fp = out.feet[static_cast<std::size_t>(side)];
    fp.ankle = out.frames[foot].position;
    fp.angle = out.frames[foot].angle;
    fp.sole_center = fp.ankle + detail::rotate(fp.angle, {0.0, -model.foot_height});
    fp.heel = fp.sole_center + detail::rotate(fp.angle, {-0.5 * model.foot_length, 0.0});
    fp.toe = fp.sole_center + detail::rotate(fp.angle, {0.5 * model.foot_length, 0.0});
  }
  return out;
}

/// Whole-body centre of mass (x, z).
inline Eigen::Vector2d com(const RobotModel& model, const VectorQ& q) {
  const BodyPoses poses = forward_kinematics(model, q);
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  double m = 0.0;
  for (int k = 0; k < kLinks; ++k) {
    acc += model.links[static_cast<std::size_t>(k)].mass * poses.coms[static_cast<std::size_t>(k)];
    m += model.links[static_cast<std::size_t>(k)].mass;
  }
  return acc / m;
}

inline Eigen::Vector2d com_velocity(const RobotModel& model, const VectorQ& q, const VectorQ& qd) {
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  double m = 0.0;
  for (int k = 0; k < kLinks; ++k) {
    const Link link = static_cast<Link>(k);
    const auto pk =
        detail::evaluate(detail::chain_of(model, link), detail::com_local(model, link), q, nullptr);
    acc += model.link(link).mass * (pk.jacobian * qd);
    m += model.link(link).mass;
  }
  return acc / m;
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

struct RobotState {
  VectorQ q = VectorQ::Zero();
  VectorQ qd = VectorQ::Zero();
  double t = 0.0;

  bool finite() const { return q.allFinite() && qd.allFinite() && std::isfinite(t); }
};

inline double nominal_hip_height(const RobotModel& model) {
  return model.foot_height + model.link(Link::ShankL).length + model.link(Link::ThighL).length;
}

/// Torso CoM height above the ground in the straight-legged zero pose.
inline double nominal_standing_height(const RobotModel& model) {
  return nominal_hip_height(model) + model.link(Link::Torso).com_offset;
}

/// All joints at zero, soles flat on the ground.
inline RobotState nominal_standing_state(const RobotModel& model, double base_x = 0.0,
                                         double ground_height = 0.0) {
  RobotState s;
  s.q(0) = base_x;
  s.q(1) = ground_height + nominal_hip_height(model);
  return s;
}

/// Swap left and right leg coordinates.
inline RobotState mirror_legs(const RobotState& s) {
  RobotState m = s;
  for (int j = 0; j < 3; ++j) {
    std::swap(m.q(3 + j), m.q(6 + j));
    std::swap(m.qd(3 + j), m.qd(6 + j));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Contact sampling
// ---------------------------------------------------------------------------

/**
 * Points along each sole, heel to toe, with rigid-body velocities. With
 * `lateral_rows == 1` every point sits on the foot's centreline; more rows
 * spread the samples across the foot width at `lateral_spacing` so the sole
 * covers a 2-D patch of the terrain grid.
 *
 * `SolePlacement::Endpoints` puts the first and last points on heel and toe.
 * `SolePlacement::Midpoints` splits the sole into `n_per_foot` equal segments
 * and samples their centres, which keeps a level foot off nearest-node ties.
 */
enum class SolePlacement { Endpoints, Midpoints };

inline std::vector<ContactSample> foot_contact_samples(const RobotModel& model, const VectorQ& q,
                                                       const VectorQ& qd, int n_per_foot,
                                                       int lateral_rows = 1,
                                                       double lateral_spacing = 0.0,
                                                       SolePlacement placement = SolePlacement::Endpoints) {
  if (n_per_foot < 2) throw ParameterError("foot_contact_samples: n_per_foot must be >= 2");
  if (lateral_rows < 1) throw ParameterError("foot_contact_samples: lateral_rows must be >= 1");
  std::vector<ContactSample> out;
  out.reserve(static_cast<std::size_t>(2 * n_per_foot * lateral_rows));
  for (int side = 0; side < 2; ++side) {
    const Link foot = side == 0 ? Link::FootL : Link::FootR;
    const auto chain = detail::chain_of(model, foot);
    const double centre_y = side == 0 ? model.hip_half_width : -model.hip_half_width;
    for (int k = 0; k < n_per_foot; ++k) {
      const double s =
          placement == SolePlacement::Endpoints
              ? -0.5 * model.foot_length + model.foot_length * k / static_cast<double>(n_per_foot - 1)
              : -0.5 * model.foot_length + model.foot_length * (k + 0.5) / static_cast<double>(n_per_foot);
      const auto pk = detail::evaluate(chain, {s, -model.foot_height}, q, nullptr);
      const Eigen::Vector2d v = pk.jacobian * qd;
      for (int r = 0; r < lateral_rows; ++r) {
        const double y = centre_y + (r - 0.5 * (lateral_rows - 1)) * lateral_spacing;
        ContactSample cs;
        cs.world_pos = {pk.position.x(), y, pk.position.y()};
        cs.velocity = {v.x(), 0.0, v.y()};
        cs.owner = side == 0 ? BodyId::LeftFoot : BodyId::RightFoot;
        out.push_back(cs);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

/// A world-frame force applied at a point fixed to a link. y is ignored.
struct ExternalForce {
  Link link = Link::Torso;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d force = Eigen::Vector3d::Zero();
};

struct DynamicsOptions {
  bool fixed_base = false;          // test harness: pin the floating base
  bool enforce_joint_limits = true;
};

inline constexpr double kMaxPhysicsDt = 5e-3;

inline MatrixQ mass_matrix(const RobotModel& model, const VectorQ& q) {
  MatrixQ M = MatrixQ::Zero();
  for (int k = 0; k < kLinks; ++k) {
    const Link link = static_cast<Link>(k);
    const auto chain = detail::chain_of(model, link);
    const auto pk = detail::evaluate(chain, detail::com_local(model, link), q, nullptr);
    const LinkParams& lp = model.link(link);
    M.noalias() += lp.mass * pk.jacobian.transpose() * pk.jacobian;
    M.noalias() += lp.inertia * chain.coeff * chain.coeff.transpose();
  }
  return M;
}

inline double kinetic_energy(const RobotModel& model, const VectorQ& q, const VectorQ& qd) {
  return 0.5 * qd.dot(mass_matrix(model, q) * qd);
}

inline double potential_energy(const RobotModel& model, const VectorQ& q) {
  const BodyPoses poses = forward_kinematics(model, q);
  double v = 0.0;
  for (int k = 0; k < kLinks; ++k)
    v += model.links[static_cast<std::size_t>(k)].mass * model.gravity *
         poses.coms[static_cast<std::size_t>(k)].y();
  return v;
}

/// Total linear momentum (x, z).
inline Eigen::Vector2d linear_momentum(const RobotModel& model, const VectorQ& q,
                                       const VectorQ& qd) {
  return total_mass(model) * com_velocity(model, q, qd);
}

/// d/dt of linear_momentum for given accelerations: sum m (J qdd + Jdot qd).
inline Eigen::Vector2d linear_momentum_rate(const RobotModel& model, const RobotState& state,
                                            const VectorQ& qdd) {
  Eigen::Vector2d rate = Eigen::Vector2d::Zero();
  for (int k = 0; k < kLinks; ++k) {
    const Link link = static_cast<Link>(k);
    const auto pk = detail::evaluate(detail::chain_of(model, link), detail::com_local(model, link),
                                     state.q, &state.qd);
    rate += model.link(link).mass * (pk.jacobian * qdd + pk.bias);
  }
  return rate;
}

/// Jacobian (rows x, z) of a world point rigidly attached to `link`.
inline Eigen::Matrix<double, 2, kDof> point_jacobian(const RobotModel& model, const VectorQ& q,
                                                     Link link, const Eigen::Vector2d& world_xz) {
  const auto chain = detail::chain_of(model, link);
  const auto origin = detail::evaluate(chain, Eigen::Vector2d::Zero(), q, nullptr);
  const double theta = chain.coeff.dot(q);
  const Eigen::Vector2d local = detail::rotate(-theta, world_xz - origin.position);
  return detail::evaluate(chain, local, q, nullptr).jacobian;
}

/// Equations of motion M(q) qdd = rhs at the current state, where
/// rhs = tau - C(q, qd) qd - g(q) + sum J^T f.
struct DynamicsTerms {
  MatrixQ M = MatrixQ::Zero();
  VectorQ rhs = VectorQ::Zero();
};

inline DynamicsTerms dynamics_terms(const RobotModel& model, const RobotState& state,
                                    const JointVector& torques,
                                    std::span<const ExternalForce> external) {
  DynamicsTerms out;
  for (int j = 0; j < kJoints; ++j) out.rhs(3 + j) = torques[static_cast<std::size_t>(j)];

  const Eigen::Vector2d gravity(0.0, -model.gravity);
  for (int k = 0; k < kLinks; ++k) {
    const Link link = static_cast<Link>(k);
    const auto chain = detail::chain_of(model, link);
    const auto pk = detail::evaluate(chain, detail::com_local(model, link), state.q, &state.qd);
    const LinkParams& lp = model.link(link);
    out.M.noalias() += lp.mass * pk.jacobian.transpose() * pk.jacobian;
    out.M.noalias() += lp.inertia * chain.coeff * chain.coeff.transpose();
    out.rhs.noalias() += lp.mass * pk.jacobian.transpose() * (gravity - pk.bias);
  }

  for (const auto& ef : external) {
    const Eigen::Vector2d world(ef.position.x(), ef.position.z());
    out.rhs.noalias() += point_jacobian(model, state.q, ef.link, world).transpose() *
                         Eigen::Vector2d(ef.force.x(), ef.force.z());
  }
  return out;
}

/// Factorised mass matrix; a pinned base restricts the solve to the joint block.
class MassSolver {
 public:
  MassSolver(const MatrixQ& M, bool fixed_base) : fixed_base_(fixed_base) {
    if (fixed_base_)
      joint_llt_.compute(M.bottomRightCorner<kJoints, kJoints>());
    else
      llt_.compute(M);
  }

  VectorQ solve(const VectorQ& rhs) const {
    VectorQ x = VectorQ::Zero();
    if (fixed_base_)
      x.tail<kJoints>() = joint_llt_.solve(rhs.tail<kJoints>());
    else
      x = llt_.solve(rhs);
    return x;
  }

 private:
  bool fixed_base_;
  Eigen::LLT<MatrixQ> llt_;
  Eigen::LLT<Eigen::Matrix<double, kJoints, kJoints>> joint_llt_;
};

/// Generalised accelerations M(q)^-1 (tau - C - g + J^T f).
inline VectorQ forward_dynamics(const RobotModel& model, const RobotState& state,
                                const JointVector& torques,
                                std::span<const ExternalForce> external,
                                const DynamicsOptions& options = {}) {
  const DynamicsTerms terms = dynamics_terms(model, state, torques, external);
  return MassSolver(terms.M, options.fixed_base).solve(terms.rhs);
}

inline JointVector clamp_torques(const RobotModel& model, const JointVector& torques) {
  JointVector tau{};
  for (int j = 0; j < kJoints; ++j) {
    const double t = torques[static_cast<std::size_t>(j)];
    if (!std::isfinite(t)) throw IntegrationError("dynamics_step: non-finite torque");
    tau[static_cast<std::size_t>(j)] = std::clamp(t, -model.torque_limit, model.torque_limit);
  }
  return tau;
}

/**
 * Semi-implicit Euler update from known accelerations: qd += dt qdd, then
 * q += dt qd. Joints pushed past a limit are clamped and their velocity zeroed.
 *
 * The zeroing is an inelastic impulse through M(q), so the rest of the body
 * takes up the joint's momentum. Zeroing the joint rate alone would change the
 * floating base's momentum out of nothing.
 *
 * A free base's translational velocity is then corrected so total linear
 * momentum advances by exactly dt times its rate at the start of the step;
 * plain semi-implicit Euler on M(q) qdd lets it drift at O(dt).
 */
inline RobotState integrate(const RobotModel& model, const RobotState& state, const VectorQ& qdd,
                            double dt, const DynamicsOptions& options = {}) {
  Eigen::Vector2d momentum_target = Eigen::Vector2d::Zero();
  if (!options.fixed_base)
    momentum_target = linear_momentum(model, state.q, state.qd) +
                      dt * linear_momentum_rate(model, state, qdd);

  RobotState next = state;
  next.qd = state.qd + dt * qdd;
  if (options.fixed_base) next.qd.head<3>().setZero();
  next.q = state.q + dt * next.qd;
  next.t = state.t + dt;

  if (options.enforce_joint_limits) {
    std::vector<int> hit;
    for (int j = 0; j < kJoints; ++j) {
      const auto& r = model.joint_limits[static_cast<std::size_t>(j)];
      double& qj = next.q(3 + j);
      if (qj < r.lo || qj > r.hi) {
        qj = std::clamp(qj, r.lo, r.hi);
        hit.push_back(3 + j);
      }
    }
    if (!hit.empty() && next.finite()) {
      const MassSolver solver(mass_matrix(model, next.q), options.fixed_base);
      const auto k = static_cast<Eigen::Index>(hit.size());
      Eigen::MatrixXd response(kDof, k);  // M^-1 E
      Eigen::MatrixXd coupling(k, k);     // E^T M^-1 E
      Eigen::VectorXd rate(k);
      for (Eigen::Index a = 0; a < k; ++a) {
        response.col(a) = solver.solve(VectorQ::Unit(hit[static_cast<std::size_t>(a)]));
        rate(a) = next.qd(hit[static_cast<std::size_t>(a)]);
      }
      for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b)
          coupling(a, b) = response(hit[static_cast<std::size_t>(a)], b);
      const Eigen::VectorXd impulse = coupling.ldlt().solve(-rate);
      next.qd += response * impulse;
      for (int idx : hit) next.qd(idx) = 0.0;
      if (options.fixed_base) next.qd.head<3>().setZero();
    }
  }
  if (!options.fixed_base && next.finite()) {
    const Eigen::Vector2d delta =
        (momentum_target - linear_momentum(model, next.q, next.qd)) / total_mass(model);
    next.qd.head<2>() += delta;
    next.q.head<2>() += dt * delta;
  }
  if (!next.finite()) throw IntegrationError("dynamics_step: non-finite output state");
  return next;
}

inline void check_step_inputs(const RobotState& state, double dt) {
  if (!(dt > 0.0 && dt <= kMaxPhysicsDt))
    throw ParameterError("dynamics_step: dt must lie in (0, 5e-3]");
  if (!state.finite()) throw IntegrationError("dynamics_step: non-finite input state");
}

/// One semi-implicit Euler step of the reduced-coordinate equations of motion.
/// Torques are clamped to the model's torque limit.
inline RobotState dynamics_step(const RobotModel& model, const RobotState& state,
                                const JointVector& torques,
                                std::span<const ExternalForce> external, double dt,
                                const DynamicsOptions& options = {}) {
  check_step_inputs(state, dt);
  const JointVector tau = clamp_torques(model, torques);
  const VectorQ qdd = forward_dynamics(model, state, tau, external, options);
  return integrate(model, state, qdd, dt, options);
}

inline bool detect_fall(const RobotModel& model, const RobotState& state,
                        double ground_height = 0.0) {
  const BodyPoses poses = forward_kinematics(model, state.q);
  const double torso_height = poses.coms[static_cast<std::size_t>(Link::Torso)].y() - ground_height;
  return torso_height < 0.6 * nominal_standing_height(model) || std::abs(state.q(2)) > 1.0;
}

/// Joint-space PD with torque clamping. Used for stance holding.
inline JointVector pd_torques(const RobotModel& model, const RobotState& state,
                              const JointVector& target, double kp, double kd) {
  JointVector tau{};
  for (int j = 0; j < kJoints; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const double t = kp * (target[ju] - state.q(3 + j)) - kd * state.qd(3 + j);
    tau[ju] = std::clamp(t, -model.torque_limit, model.torque_limit);
  }
  return tau;
}

// ---------------------------------------------------------------------------
// Reference trajectories and inverse kinematics
// ---------------------------------------------------------------------------

struct GaitReference {
  double step_length = 0.1;
  double step_height = 0.04;
  double period = 0.8;

  void validate() const {
    if (!(step_length > 0.0 && step_height > 0.0 && period > 0.0))
      throw ParameterError("gait reference: step_length, step_height and period must be > 0");
  }
};

/// Cycloidal swing-ankle target relative to lift-off, zero velocity at both ends.
inline Eigen::Vector2d cycloid_reference(const GaitReference& gait, double t) {
  gait.validate();
  if (!(t >= 0.0)) throw ParameterError("cycloid_reference: t must be >= 0");
  double phase_t = std::fmod(t, gait.period);
  // t an exact multiple of the period is the end of a swing, not the start.
  if (phase_t == 0.0 && t > 0.0) phase_t = gait.period;
  const double phi = 2.0 * std::numbers::pi * phase_t / gait.period;
  return {gait.step_length * (phi - std::sin(phi)) / (2.0 * std::numbers::pi),
          gait.step_height * (1.0 - std::cos(phi)) / 2.0};
}

struct LegAngles {
  double hip = 0.0;
  double knee = 0.0;
};

/// Closed-form two-link IK on the knee-backward branch (knee >= 0).
/// Angles are relative to a torso pitched at `torso_pitch`.
inline LegAngles leg_ik(const RobotModel& model, const Eigen::Vector2d& hip_pos,
                        const Eigen::Vector2d& ankle_target, double torso_pitch = 0.0) {
  const double l1 = model.link(Link::ThighL).length;
  const double l2 = model.link(Link::ShankL).length;
  const Eigen::Vector2d v = ankle_target - hip_pos;
  const double d = v.norm();
  constexpr double slack = 1e-12;
  if (d > l1 + l2 + slack || d < std::abs(l1 - l2) - slack)
    throw ReachabilityError("leg_ik: ankle target out of reach (d = " + std::to_string(d) + ")");
  const double cos_knee = std::clamp((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double knee = std::acos(cos_knee);
  const double alpha = std::atan2(v.x(), -v.y());
  const double thigh = alpha + std::atan2(l2 * std::sin(knee), l1 + l2 * std::cos(knee));
  return {thigh - torso_pitch, knee};
}

// ---------------------------------------------------------------------------
// Trace rows
// ---------------------------------------------------------------------------

inline void write_state_header(std::ostream& os) {
  os << 't';
  for (int k = 0; k < kDof; ++k) os << ",q" << k;
  for (int k = 0; k < kDof; ++k) os << ",qd" << k;
  os << '\n';
}

inline void write_state_row(std::ostream& os, const RobotState& s) {
  os << format_double(s.t);
  for (int k = 0; k < kDof; ++k) os << ',' << format_double(s.q(k));
  for (int k = 0; k < kDof; ++k) os << ',' << format_double(s.qd(k));
  os << '\n';
}

}  // namespace terrawalk

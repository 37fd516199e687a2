#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "terrawalk/error.hpp"
#include "terrawalk/text.hpp"

namespace terrawalk {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Soil Contact Model coefficients, SI units. Defaults are the loose-soil set
/// used throughout the project (k_phi = 0.2e6, n = 1.1, 30 deg friction).
struct SoilParams {
  double k_c = 0.0;                                 ///< cohesive modulus [Pa m^(1-n)]
  double k_phi = 0.2e6;                             ///< frictional modulus [Pa m^-n]
  double n = 1.1;                                   ///< sinkage exponent
  double cohesion_c = 0.0;                          ///< Mohr cohesion [Pa]
  double friction_angle = std::numbers::pi / 6.0;   ///< internal friction angle [rad]
  double janosi_K = 0.01;                           ///< Janosi shear parameter [m]
  double elastic_k = 4e7;                           ///< unload/reload stiffness [Pa/m]
  double damping_R = 3e4;                           ///< vertical damping [Pa s/m]

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ParameterError(std::string("soil: ") + what);
    };
    require(std::isfinite(k_phi) && k_phi > 0.0, "k_phi must be > 0");
    require(std::isfinite(n) && n > 0.0, "n must be > 0");
    require(std::isfinite(janosi_K) && janosi_K > 0.0, "janosi_K must be > 0");
    require(std::isfinite(elastic_k) && elastic_k > 0.0, "elastic_k must be > 0");
    require(std::isfinite(damping_R) && damping_R >= 0.0, "damping_R must be >= 0");
    require(std::isfinite(friction_angle) && friction_angle >= 0.0 &&
                friction_angle < std::numbers::pi / 2.0,
            "friction_angle must be in [0, pi/2)");
    require(std::isfinite(k_c) && k_c >= 0.0, "k_c must be >= 0");
    require(std::isfinite(cohesion_c) && cohesion_c >= 0.0, "cohesion_c must be >= 0");
  }

  bool operator==(const SoilParams&) const = default;
};

// ---------------------------------------------------------------------------
// Force laws (pure, reentrant)
// ---------------------------------------------------------------------------

/// Bekker-Wong plate pressure (k_c/b + k_phi) y^n.
inline double bekker_pressure(const SoilParams& p, double b, double y) {
  if (!(b > 0.0)) throw ParameterError("bekker_pressure: width b must be > 0");
  if (!(y >= 0.0)) throw ParameterError("bekker_pressure: sinkage y must be >= 0");
  if (y == 0.0) return 0.0;
  return (p.k_c / b + p.k_phi) * std::pow(y, p.n);
}

/// Per-node memory. Absent from the grid map means all fields are zero.
struct NodeState {
  double plastic_sinkage = 0.0;  ///< deepest historical penetration [m]
  double shear_j = 0.0;          ///< accumulated slip while in contact [m]
  bool in_contact = false;

  bool operator==(const NodeState&) const = default;
};

/// Static part of the nodal pressure (no damping). On the virgin loading
/// curve this is the Bekker pressure; below the plastic memory the node
/// unloads elastically along slope elastic_k and cannot go tensile.
inline double static_node_pressure(const SoilParams& p, const NodeState& node, double y_total,
                                   double b) {
  if (!(y_total >= 0.0)) throw ParameterError("node_pressure: y_total must be >= 0");
  if (y_total >= node.plastic_sinkage) return bekker_pressure(p, b, y_total);
  const double peak = bekker_pressure(p, b, node.plastic_sinkage);
  return std::max(0.0, peak - p.elastic_k * (node.plastic_sinkage - y_total));
}

/// Nodal normal pressure including damping R v_n (v_n > 0 compressing).
/// Clamped at zero; soil never pulls.
inline double node_pressure(const SoilParams& p, const NodeState& node, double y_total, double v_n,
                            double b) {
  const double sigma = static_node_pressure(p, node, y_total, b) + p.damping_R * v_n;
  return std::max(0.0, sigma);
}

/// Mohr-Coulomb shear strength sigma tan(phi) + c.
inline double shear_limit(double sigma_normal, const SoilParams& p) {
  if (!(sigma_normal >= 0.0)) throw ParameterError("shear_limit: normal stress must be >= 0");
  return sigma_normal * std::tan(p.friction_angle) + p.cohesion_c;
}

/// Janosi-Hanamoto mobilised shear tau_max (1 - exp(-j/K)).
inline double janosi_shear(double tau_max, double shear_j, double K) {
  if (!(K > 0.0)) throw ParameterError("janosi_shear: K must be > 0");
  if (!(tau_max >= 0.0)) throw ParameterError("janosi_shear: tau_max must be >= 0");
  if (!(shear_j >= 0.0)) throw ParameterError("janosi_shear: shear_j must be >= 0");
  return tau_max * -std::expm1(-shear_j / K);
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

struct GridIndex {
  std::int32_t i = 0;
  std::int32_t j = 0;

  friend constexpr bool operator==(GridIndex, GridIndex) = default;
  friend constexpr auto operator<=>(GridIndex, GridIndex) = default;
};

struct GridIndexHash {
  std::size_t operator()(GridIndex g) const noexcept {
    const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(g.i)) << 32) |
                     static_cast<std::uint32_t>(g.j);
    return std::hash<std::uint64_t>{}(key * 0x9e3779b97f4a7c15ULL);
  }
};

/**
 * Sparse height field. Only nodes that have ever been penetrated are stored;
 * everything else sits at rest_height with no memory.
 *
 * Node (i, j) lives at origin + (i h, j h). Valid indices are
 * i in [0, round(extent_x/h)], j in [0, round(extent_y/h)]; samples that map
 * outside the extent see no soil.
 */
class TerrainGrid {
 public:
  TerrainGrid(double extent_x, double extent_y, double spacing, double rest_height,
              Eigen::Vector2d origin)
      : spacing_(spacing), rest_height_(rest_height), origin_(origin) {
    if (!(extent_x > 0.0) || !(extent_y > 0.0) || !(spacing > 0.0))
      throw ParameterError("terrain grid: extents and spacing must be > 0");
    if (!std::isfinite(rest_height) || !origin.allFinite())
      throw ParameterError("terrain grid: non-finite rest height or origin");
    nx_ = static_cast<std::int32_t>(std::llround(extent_x / spacing));
    ny_ = static_cast<std::int32_t>(std::llround(extent_y / spacing));
  }

  double spacing() const noexcept { return spacing_; }
  double rest_height() const noexcept { return rest_height_; }
  const Eigen::Vector2d& origin() const noexcept { return origin_; }
  double cell_area() const noexcept { return spacing_ * spacing_; }
  std::int32_t max_i() const noexcept { return nx_; }
  std::int32_t max_j() const noexcept { return ny_; }

  /// Nearest node; exact half-way ties resolve to the lower index.
  GridIndex nearest(double x, double y) const noexcept {
    return {round_half_down((x - origin_.x()) / spacing_),
            round_half_down((y - origin_.y()) / spacing_)};
  }

  Eigen::Vector2d node_position(GridIndex g) const noexcept {
    return origin_ + spacing_ * Eigen::Vector2d(g.i, g.j);
  }

  bool contains(GridIndex g) const noexcept {
    return g.i >= 0 && g.j >= 0 && g.i <= nx_ && g.j <= ny_;
  }

  double height_at(double x, double y) const {
    const NodeState* node = find(nearest(x, y));
    return node ? rest_height_ - node->plastic_sinkage : rest_height_;
  }

  const NodeState* find(GridIndex g) const {
    auto it = nodes_.find(g);
    return it == nodes_.end() ? nullptr : &it->second;
  }

  /// Insert-or-get. Callers only touch nodes they are about to penetrate.
  NodeState& touch(GridIndex g) { return nodes_[g]; }

  std::size_t stored_nodes() const noexcept { return nodes_.size(); }

  /// Stored nodes in (i, j) order.
  std::vector<std::pair<GridIndex, NodeState>> sorted_nodes() const {
    std::vector<std::pair<GridIndex, NodeState>> out(nodes_.begin(), nodes_.end());
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  /// CSV dump `i,j,plastic_sinkage,shear_j`.
  void write_csv(std::ostream& os) const {
    os << "i,j,plastic_sinkage,shear_j\n";
    for (const auto& [g, node] : sorted_nodes())
      os << g.i << ',' << g.j << ',' << format_double(node.plastic_sinkage) << ','
         << format_double(node.shear_j) << '\n';
  }

  /// Nodes flagged in contact after the last step_contact call.
  const std::vector<GridIndex>& contact_nodes() const noexcept { return in_contact_; }

 private:
  friend struct ContactStepper;

  static std::int32_t round_half_down(double u) noexcept {
    return static_cast<std::int32_t>(std::ceil(u - 0.5));
  }

  double spacing_;
  double rest_height_;
  Eigen::Vector2d origin_;
  std::int32_t nx_ = 0;
  std::int32_t ny_ = 0;
  std::unordered_map<GridIndex, NodeState, GridIndexHash> nodes_;
  std::vector<GridIndex> in_contact_;
};

/// Empty grid whose y-range is centred on the world x axis.
inline TerrainGrid new_grid(double extent_x, double extent_y, double spacing,
                            double rest_height) {
  return TerrainGrid(extent_x, extent_y, spacing, rest_height,
                     Eigen::Vector2d(0.0, -0.5 * extent_y));
}

inline TerrainGrid new_grid(double extent_x, double extent_y, double spacing, double rest_height,
                            Eigen::Vector2d origin) {
  return TerrainGrid(extent_x, extent_y, spacing, rest_height, origin);
}

// ---------------------------------------------------------------------------
// Contact patches
// ---------------------------------------------------------------------------

/// 4-connected set of contact nodes with its Bekker characteristic width.
struct ContactPatch {
  std::vector<GridIndex> node_indices;  // sorted
  double area_A = 0.0;
  double perimeter_L = 0.0;
  double width_b = 0.0;
};

/// Partition `contact_nodes` into 4-connected components. Area counts h^2 per
/// node, perimeter counts cell edges not shared with another contact node.
/// Patches come out ordered by their smallest index.
inline std::vector<ContactPatch> detect_patches(double spacing,
                                                std::span<const GridIndex> contact_nodes) {
  std::vector<ContactPatch> patches;
  if (contact_nodes.empty()) return patches;

  std::vector<GridIndex> sorted(contact_nodes.begin(), contact_nodes.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  const std::unordered_set<GridIndex, GridIndexHash> member(sorted.begin(), sorted.end());
  std::unordered_set<GridIndex, GridIndexHash> visited;
  visited.reserve(sorted.size());

  constexpr std::int32_t di[4] = {1, -1, 0, 0};
  constexpr std::int32_t dj[4] = {0, 0, 1, -1};

  std::vector<GridIndex> stack;
  for (GridIndex seed : sorted) {
    if (visited.contains(seed)) continue;
    ContactPatch patch;
    std::size_t exposed_edges = 0;
    stack.assign(1, seed);
    visited.insert(seed);
    while (!stack.empty()) {
      const GridIndex g = stack.back();
      stack.pop_back();
      patch.node_indices.push_back(g);
      for (int k = 0; k < 4; ++k) {
        const GridIndex nb{g.i + di[k], g.j + dj[k]};
        if (!member.contains(nb)) {
          ++exposed_edges;
        } else if (visited.insert(nb).second) {
          stack.push_back(nb);
        }
      }
    }
    std::sort(patch.node_indices.begin(), patch.node_indices.end());
    patch.area_A = static_cast<double>(patch.node_indices.size()) * spacing * spacing;
    patch.perimeter_L = static_cast<double>(exposed_edges) * spacing;
    patch.width_b = 2.0 * patch.area_A / patch.perimeter_L;
    patches.push_back(std::move(patch));
  }
  return patches;
}

inline std::vector<ContactPatch> detect_patches(const TerrainGrid& grid,
                                                std::span<const GridIndex> contact_nodes) {
  return detect_patches(grid.spacing(), contact_nodes);
}

// ---------------------------------------------------------------------------
// Contact stepping
// ---------------------------------------------------------------------------

enum class BodyId : std::uint8_t { LeftFoot, RightFoot, Other };

/// A point on a rigid body that can touch the soil.
struct ContactSample {
  Eigen::Vector3d world_pos = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  BodyId owner = BodyId::Other;
};

/// Per-step diagnostics alongside the per-sample forces.
struct ContactStepResult {
  std::vector<Eigen::Vector3d> forces;  // one per input sample, world frame
  std::vector<ContactPatch> patches;
  std::size_t nodes_in_contact = 0;
};

struct ContactStepper {
  static ContactStepResult step(TerrainGrid& grid, std::span<const ContactSample> samples,
                                double dt, const SoilParams& p) {
    if (!(dt > 0.0)) throw ParameterError("step_contact: dt must be > 0");

    ContactStepResult result;
    result.forces.assign(samples.size(), Eigen::Vector3d::Zero());

    // (1) nearest-node mapping. The deepest sample sets a node's depth and
    // velocity; the node's force is shared by every penetrating sample on it.
    struct Candidate {
      GridIndex node;
      std::size_t sample;
      double y_total;
      std::vector<std::size_t> members;
    };
    std::unordered_map<GridIndex, std::size_t, GridIndexHash> slot_of;
    std::vector<Candidate> candidates;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const auto& pos = samples[s].world_pos;
      if (!pos.allFinite() || !samples[s].velocity.allFinite())
        throw ParameterError("step_contact: non-finite contact sample");
      const GridIndex g = grid.nearest(pos.x(), pos.y());
      if (!grid.contains(g)) continue;
      const double y_total = grid.rest_height() - pos.z();
      if (!(y_total > 0.0)) continue;
      auto [it, inserted] = slot_of.try_emplace(g, candidates.size());
      if (inserted) {
        candidates.push_back({g, s, y_total, {s}});
        continue;
      }
      Candidate& c = candidates[it->second];
      c.members.push_back(s);
      if (y_total > c.y_total) {
        c.sample = s;
        c.y_total = y_total;
      }
    }

    // (2) patches over penetrating nodes; each node inherits its patch's b.
    std::vector<GridIndex> penetrating;
    penetrating.reserve(candidates.size());
    for (const auto& c : candidates) penetrating.push_back(c.node);
    result.patches = detect_patches(grid.spacing(), penetrating);
    std::unordered_map<GridIndex, double, GridIndexHash> width_of;
    width_of.reserve(penetrating.size());
    for (const auto& patch : result.patches)
      for (GridIndex g : patch.node_indices) width_of[g] = patch.width_b;

    const double area = grid.cell_area();
    std::vector<GridIndex> now_in_contact;
    now_in_contact.reserve(candidates.size());

    for (const auto& c : candidates) {
      const ContactSample& sample = samples[c.sample];
      NodeState& node = grid.touch(c.node);
      const double b = width_of.at(c.node);

      // (3) normal pressure; a node above its own plastic crater carries nothing.
      const double sigma_static = static_node_pressure(p, node, c.y_total, b);
      const bool touching = sigma_static > 0.0;
      double sigma = 0.0;
      if (touching) {
        const double v_n = -sample.velocity.z();
        sigma = std::max(0.0, sigma_static + p.damping_R * v_n);
      }

      // (4) Janosi slip memory.
      const Eigen::Vector2d v_t(sample.velocity.x(), sample.velocity.y());
      const double slip_speed = v_t.norm();
      if (touching) {
        node.shear_j += slip_speed * dt;
        node.in_contact = true;
        now_in_contact.push_back(c.node);
      } else {
        node.shear_j = 0.0;
        node.in_contact = false;
      }

      // (5) tangential force opposing slip, capped by Mohr-Coulomb.
      Eigen::Vector3d f(0.0, 0.0, sigma * area);
      if (touching && slip_speed > 0.0) {
        const double tau_max = shear_limit(sigma, p);
        const double tau = std::min(janosi_shear(tau_max, node.shear_j, p.janosi_K), tau_max);
        const Eigen::Vector2d ft = -(tau * area / slip_speed) * v_t;
        f.x() = ft.x();
        f.y() = ft.y();
      }
      const double share = 1.0 / static_cast<double>(c.members.size());
      for (std::size_t m : c.members) result.forces[m] = share * f;

      // (6) plastic memory.
      node.plastic_sinkage = std::max(node.plastic_sinkage, c.y_total);
    }

    // Separation resets shear memory.
    std::sort(now_in_contact.begin(), now_in_contact.end());
    for (GridIndex g : grid.in_contact_) {
      if (std::binary_search(now_in_contact.begin(), now_in_contact.end(), g)) continue;
      auto it = grid.nodes_.find(g);
      if (it != grid.nodes_.end()) {
        it->second.shear_j = 0.0;
        it->second.in_contact = false;
      }
    }
    grid.in_contact_ = std::move(now_in_contact);
    result.nodes_in_contact = grid.in_contact_.size();
    return result;
  }
};

/// Advance soil contact by one step: returns a world-frame force per sample
/// and mutates the grid's plastic and shear memory.
inline ContactStepResult step_contact(TerrainGrid& grid, std::span<const ContactSample> samples,
                                      double dt, const SoilParams& params) {
  return ContactStepper::step(grid, samples, dt, params);
}

// ---------------------------------------------------------------------------
// Wrench aggregation
// ---------------------------------------------------------------------------

struct Wrench {
  Eigen::Vector3d force = Eigen::Vector3d::Zero();
  Eigen::Vector3d torque = Eigen::Vector3d::Zero();
  Eigen::Vector3d ref_point = Eigen::Vector3d::Zero();
};

struct PointForce {
  Eigen::Vector3d position;
  Eigen::Vector3d force;
};

inline Wrench resultant_wrench(std::span<const PointForce> forces,
                               const Eigen::Vector3d& ref_point) {
  Wrench w;
  w.ref_point = ref_point;
  for (const auto& pf : forces) {
    w.force += pf.force;
    w.torque += (pf.position - ref_point).cross(pf.force);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Static plate indentation
// ---------------------------------------------------------------------------

struct PlateIndentation {
  double analytic_sinkage = 0.0;   ///< (W / (A k_phi))^(1/n)
  double simulated_sinkage = 0.0;  ///< rest_height - plate_z after settling
  double relative_error = 0.0;
  double simulated_time = 0.0;
  double final_speed = 0.0;
};

/// Closed-form equilibrium depth of a square plate of area A under weight W
/// on virgin soil. The plate's b = 2A/L is half its side; with k_c = 0 this
/// is (W / (A k_phi))^(1/n).
inline double plate_equilibrium_sinkage(const SoilParams& p, double weight, double area) {
  if (!(weight > 0.0) || !(area > 0.0))
    throw ParameterError("plate: weight and area must be > 0");
  const double b = 0.5 * std::sqrt(area);
  return std::pow(weight / (area * (p.k_c / b + p.k_phi)), 1.0 / p.n);
}

/**
 * Drop a rigid square plate (mass W/g, one vertical DOF) onto fresh soil and
 * integrate with semi-implicit Euler until it settles. Samples sit exactly on
 * grid nodes so the loaded area is (side/h)^2 h^2.
 */
inline PlateIndentation simulate_plate_indentation(const SoilParams& p, double weight, double side,
                                                   double spacing = 0.01, double dt = 1e-3,
                                                   double duration = 5.0, double gravity = 9.81) {
  p.validate();
  if (!(side > 0.0)) throw ParameterError("plate: side must be > 0");
  const auto per_side = static_cast<int>(std::llround(side / spacing));
  if (per_side < 1) throw ParameterError("plate: side smaller than grid spacing");
  const double area = per_side * per_side * spacing * spacing;

  const double margin = 0.1;
  TerrainGrid grid(side + 2 * margin, side + 2 * margin, spacing, 0.0,
                   Eigen::Vector2d(-margin, -margin));

  std::vector<ContactSample> samples(static_cast<std::size_t>(per_side * per_side));
  for (int a = 0; a < per_side; ++a)
    for (int b = 0; b < per_side; ++b) {
      const Eigen::Vector2d xy = grid.node_position(grid.nearest(a * spacing, b * spacing));
      samples[static_cast<std::size_t>(a * per_side + b)].world_pos = {xy.x(), xy.y(), 0.0};
    }

  const double mass = weight / gravity;
  double z = grid.rest_height();
  double vz = 0.0;
  const auto steps = static_cast<long>(std::llround(duration / dt));
  for (long k = 0; k < steps; ++k) {
    for (auto& s : samples) {
      s.world_pos.z() = z;
      s.velocity = {0.0, 0.0, vz};
    }
    const auto contact = step_contact(grid, samples, dt, p);
    double fz = 0.0;
    for (const auto& f : contact.forces) fz += f.z();
    vz += dt * (fz / mass - gravity);
    z += dt * vz;
  }

  PlateIndentation out;
  out.analytic_sinkage = plate_equilibrium_sinkage(p, weight, area);
  out.simulated_sinkage = grid.rest_height() - z;
  out.relative_error =
      std::abs(out.simulated_sinkage - out.analytic_sinkage) / out.analytic_sinkage;
  out.simulated_time = static_cast<double>(steps) * dt;
  out.final_speed = std::abs(vz);
  return out;
}

}  // namespace terrawalk

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <vector>

#include "terrawalk/rng.hpp"
#include "terrawalk/soil.hpp"

using namespace terrawalk;

namespace {

// Independent high-precision evaluations (30 significant digits).
constexpr double kBekker10mm = 1261.91468896038649886872027325;      // 2e5 * 0.01^1.1
constexpr double kBekker10mmKc = 1388.10615785642514875559230057;    // 2.2e5 * 0.01^1.1
constexpr double kNodeForce8p1mm = 0.100083737791920730754753507363;  // 2e5 * 0.0081^1.1 * 1e-4
constexpr double kPlateSinkage = 0.00809383877820033006238417423555;  // (10 / (0.01 * 2e5))^(1/1.1)
constexpr double kShear30deg = 577.350269189625764509148780502;       // 1000 tan(pi/6)
constexpr double kOneMinusInvE = 0.632120558828557678404476229839;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

ContactSample sample_at(double x, double y, double z, Eigen::Vector3d v = Eigen::Vector3d::Zero()) {
  ContactSample s;
  s.world_pos = {x, y, z};
  s.velocity = v;
  return s;
}

std::vector<GridIndex> block(int i0, int j0, int ni, int nj) {
  std::vector<GridIndex> out;
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < nj; ++j) out.push_back({i0 + i, j0 + j});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

TEST(TerrainGrid, FreshGridIsFlatAndEmpty) {
  const TerrainGrid g = new_grid(4.0, 1.0, 0.01, 0.0);
  EXPECT_EQ(g.spacing(), 0.01);
  EXPECT_EQ(g.stored_nodes(), 0u);
  EXPECT_EQ(g.height_at(0.0, 0.0), 0.0);
  EXPECT_EQ(g.height_at(1.2345, -0.3), 0.0);
}

TEST(TerrainGrid, RejectsNonPositiveDimensions) {
  EXPECT_THROW(new_grid(4.0, 1.0, 0.0, 0.0), ParameterError);
  EXPECT_THROW(new_grid(0.0, 1.0, 0.01, 0.0), ParameterError);
  EXPECT_THROW(new_grid(4.0, -1.0, 0.01, 0.0), ParameterError);
}

TEST(TerrainGrid, HeightReflectsPlasticSinkage) {
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.25, Eigen::Vector2d(0.0, 0.0));
  g.touch({0, 0}).plastic_sinkage = 0.008;
  EXPECT_DOUBLE_EQ(g.height_at(0.0, 0.0), 0.25 - 0.008);
  EXPECT_EQ(g.height_at(0.02, 0.0), 0.25);
}

TEST(TerrainGrid, NearestNodeTieGoesToLowerIndex) {
  const TerrainGrid g = new_grid(1.0, 1.0, 0.5, 0.0, Eigen::Vector2d(0.0, 0.0));
  EXPECT_EQ(g.nearest(0.25, 0.25), (GridIndex{0, 0}));
  EXPECT_EQ(g.nearest(0.75, 0.25), (GridIndex{1, 0}));
  EXPECT_EQ(g.nearest(0.26, 0.74), (GridIndex{1, 1}));
}

TEST(TerrainGrid, CsvDumpIsSortedAndExact) {
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0, Eigen::Vector2d(0.0, 0.0));
  g.touch({2, 1}).plastic_sinkage = 0.1;
  g.touch({1, 5}).shear_j = 0.25;
  std::ostringstream out;
  g.write_csv(out);
  EXPECT_EQ(out.str(), "i,j,plastic_sinkage,shear_j\n1,5,0,0.25\n2,1,0.1,0\n");
}

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

TEST(DetectPatches, ThreeByThreeBlock) {
  const auto nodes = block(4, 7, 3, 3);
  const auto patches = detect_patches(0.01, nodes);
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_NEAR(patches[0].area_A, 9e-4, 1e-18);
  EXPECT_NEAR(patches[0].perimeter_L, 0.12, 1e-15);
  EXPECT_NEAR(patches[0].width_b, 0.015, 1e-15);
}

TEST(DetectPatches, SingleNode) {
  const std::vector<GridIndex> nodes{{3, 3}};
  const auto patches = detect_patches(0.01, nodes);
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_NEAR(patches[0].area_A, 1e-4, 1e-19);
  EXPECT_NEAR(patches[0].perimeter_L, 0.04, 1e-16);
  EXPECT_NEAR(patches[0].width_b, 0.005, 1e-16);
}

TEST(DetectPatches, DiagonalNeighboursAreSeparate) {
  const std::vector<GridIndex> nodes{{0, 0}, {1, 1}};
  EXPECT_EQ(detect_patches(0.01, nodes).size(), 2u);
}

TEST(DetectPatches, EmptyInput) { EXPECT_TRUE(detect_patches(0.01, {}).empty()); }

TEST(DetectPatches, RandomSetsPartitionAndSatisfyWidthIdentity) {
  Xoshiro256 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::set<GridIndex> chosen;
    const auto count = 1 + rng.below(60);
    for (std::uint64_t k = 0; k < count; ++k)
      chosen.insert({static_cast<std::int32_t>(rng.below(12)), static_cast<std::int32_t>(rng.below(12))});
    const std::vector<GridIndex> nodes(chosen.begin(), chosen.end());
    const auto patches = detect_patches(0.01, nodes);

    std::set<GridIndex> covered;
    for (const auto& p : patches) {
      for (GridIndex g : p.node_indices) EXPECT_TRUE(covered.insert(g).second);
      EXPECT_LE(std::abs(p.width_b * p.perimeter_L - 2.0 * p.area_A), 1e-12 * 2.0 * p.area_A);
      // 4-connected: every node except in singletons has a neighbour in the patch.
      const std::set<GridIndex> members(p.node_indices.begin(), p.node_indices.end());
      if (members.size() > 1)
        for (GridIndex g : members) {
          const bool linked = members.count({g.i + 1, g.j}) || members.count({g.i - 1, g.j}) ||
                              members.count({g.i, g.j + 1}) || members.count({g.i, g.j - 1});
          EXPECT_TRUE(linked);
        }
    }
    EXPECT_EQ(covered, chosen);
    // Distinct patches never touch along an edge.
    for (std::size_t a = 0; a < patches.size(); ++a)
      for (std::size_t b = a + 1; b < patches.size(); ++b)
        for (GridIndex g : patches[a].node_indices)
          for (GridIndex h : patches[b].node_indices)
            EXPECT_NE(std::abs(g.i - h.i) + std::abs(g.j - h.j), 1);
  }
}

// ---------------------------------------------------------------------------
// Force laws
// ---------------------------------------------------------------------------

TEST(BekkerPressure, MatchesIndependentEvaluation) {
  SoilParams p;
  EXPECT_LT(rel(bekker_pressure(p, 0.05, 0.01), kBekker10mm), 1e-14);
  EXPECT_LT(rel(bekker_pressure(p, 123.0, 0.01), kBekker10mm), 1e-14);
  EXPECT_EQ(bekker_pressure(p, 0.05, 0.0), 0.0);
  p.k_c = 1000.0;
  EXPECT_LT(rel(bekker_pressure(p, 0.05, 0.01), kBekker10mmKc), 1e-14);
}

TEST(BekkerPressure, RejectsBadArguments) {
  const SoilParams p;
  EXPECT_THROW(bekker_pressure(p, 0.05, -1e-6), ParameterError);
  EXPECT_THROW(bekker_pressure(p, 0.0, 0.01), ParameterError);
}

TEST(BekkerPressure, IncreasingInSinkageNonIncreasingInWidth) {
  SoilParams p;
  p.k_c = 500.0;
  Xoshiro256 rng(3);
  for (int k = 0; k < 1000; ++k) {
    const double y = rng.uniform(1e-5, 0.05), dy = rng.uniform(1e-6, 0.01);
    const double b = rng.uniform(1e-3, 0.2), db = rng.uniform(1e-4, 0.1);
    EXPECT_LT(bekker_pressure(p, b, y), bekker_pressure(p, b, y + dy));
    EXPECT_GE(bekker_pressure(p, b, y), bekker_pressure(p, b + db, y));
  }
}

TEST(NodePressure, LoadingCurveAndDamping) {
  const SoilParams p;
  const NodeState fresh;
  EXPECT_LT(rel(node_pressure(p, fresh, 0.01, 0.0, 0.05), kBekker10mm), 1e-14);
  EXPECT_LT(rel(node_pressure(p, fresh, 0.01, 0.1, 0.05), kBekker10mm + 3000.0), 1e-14);
}

TEST(NodePressure, SeparationClampsToZero) {
  const SoilParams p;
  NodeState node;
  node.plastic_sinkage = 0.01;
  EXPECT_EQ(node_pressure(p, node, 0.01, -1.0, 0.05), 0.0);
}

TEST(NodePressure, ElasticUnloadBranch) {
  const SoilParams p;
  NodeState node;
  node.plastic_sinkage = 0.01;
  const double dy = 1e-5;
  EXPECT_NEAR(node_pressure(p, node, 0.01 - dy, 0.0, 0.05), kBekker10mm - p.elastic_k * dy, 1e-9);
  EXPECT_EQ(node_pressure(p, node, 0.0, 0.0, 0.05), 0.0);
  EXPECT_THROW(node_pressure(p, node, -1e-3, 0.0, 0.05), ParameterError);
}

TEST(ShearLimit, MohrCoulomb) {
  SoilParams p;
  EXPECT_LT(rel(shear_limit(1000.0, p), kShear30deg), 1e-15);
  EXPECT_EQ(shear_limit(0.0, p), 0.0);
  p.cohesion_c = 500.0;
  EXPECT_EQ(shear_limit(0.0, p), 500.0);
  EXPECT_THROW(shear_limit(-1.0, p), ParameterError);
}

TEST(JanosiShear, ClosedFormPoints) {
  EXPECT_EQ(janosi_shear(800.0, 0.0, 0.01), 0.0);
  EXPECT_LT(rel(janosi_shear(800.0, 0.01, 0.01), 800.0 * kOneMinusInvE), 1e-15);
  EXPECT_LT(rel(janosi_shear(800.0, 1.0, 0.01), 800.0), 1e-9);
  EXPECT_THROW(janosi_shear(800.0, 0.0, 0.0), ParameterError);
}

TEST(JanosiShear, MonotoneAndBounded) {
  Xoshiro256 rng(5);
  for (int k = 0; k < 1000; ++k) {
    const double tau = rng.uniform(0.0, 1e4), j = rng.uniform(0.0, 0.1), K = rng.uniform(1e-3, 0.05);
    const double a = janosi_shear(tau, j, K), b = janosi_shear(tau, j + rng.uniform(0.0, 0.01), K);
    EXPECT_LE(a, b);
    EXPECT_LE(b, tau);
  }
}

// ---------------------------------------------------------------------------
// step_contact
// ---------------------------------------------------------------------------

TEST(StepContact, RestingSampleCarriesNothing) {
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0);
  const std::vector<ContactSample> s{sample_at(0.5, 0.0, 0.0)};
  const auto r = step_contact(g, s, 1e-3, SoilParams{});
  EXPECT_TRUE(r.forces[0].isZero(0.0));
  EXPECT_EQ(g.stored_nodes(), 0u);
}

TEST(StepContact, StaticSingleNodeForce) {
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0);
  const std::vector<ContactSample> s{sample_at(0.5, 0.0, -0.0081)};
  const auto r = step_contact(g, s, 1e-3, SoilParams{});
  EXPECT_LT(rel(r.forces[0].z(), kNodeForce8p1mm), 1e-13);
  EXPECT_EQ(r.forces[0].x(), 0.0);
  EXPECT_EQ(r.forces[0].y(), 0.0);
  ASSERT_EQ(r.patches.size(), 1u);
  EXPECT_NEAR(r.patches[0].width_b, 0.005, 1e-16);
}

TEST(StepContact, RejectsNonPositiveDt) {
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0);
  EXPECT_THROW(step_contact(g, {}, 0.0, SoilParams{}), ParameterError);
}

TEST(StepContact, SlidingSaturatesToShearStrength) {
  const SoilParams p;
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0);
  const double depth = 0.005, v = 0.5, dt = 1e-3;
  const std::vector<ContactSample> s{sample_at(0.5, 0.0, -depth, {v, 0.0, 0.0})};
  ContactStepResult r;
  for (int k = 0; k < 2000; ++k) r = step_contact(g, s, dt, p);
  const double sigma = bekker_pressure(p, 0.005, depth);
  const double tau_max = shear_limit(sigma, p);
  EXPECT_LT(rel(-r.forces[0].x(), tau_max * g.cell_area()), 1e-9);
  EXPECT_GE(r.forces[0].z(), 0.0);
}

TEST(StepContact, ShearMemoryFollowsJanosiRecursion) {
  const SoilParams p;
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0);
  const double depth = 0.005, v = 0.003, dt = 1e-3;
  const std::vector<ContactSample> s{sample_at(0.5, 0.0, -depth, {v, 0.0, 0.0})};
  const int steps = 3;
  ContactStepResult r;
  for (int k = 0; k < steps; ++k) r = step_contact(g, s, dt, p);
  const NodeState* node = g.find(g.nearest(0.5, 0.0));
  ASSERT_NE(node, nullptr);
  double j = 0.0;
  for (int k = 0; k < steps; ++k) j += v * dt;
  EXPECT_EQ(node->shear_j, j);
  const double tau_max = shear_limit(bekker_pressure(p, 0.005, depth), p);
  EXPECT_LT(rel(-r.forces[0].x(), janosi_shear(tau_max, j, p.janosi_K) * g.cell_area()), 1e-12);
}

TEST(StepContact, SeparationResetsShearMemory) {
  const SoilParams p;
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.0);
  std::vector<ContactSample> s{sample_at(0.5, 0.0, -0.004, {0.1, 0.0, 0.0})};
  for (int k = 0; k < 10; ++k) step_contact(g, s, 1e-3, p);
  const GridIndex idx = g.nearest(0.5, 0.0);
  EXPECT_GT(g.find(idx)->shear_j, 0.0);
  s[0].world_pos.z() = 0.01;
  step_contact(g, s, 1e-3, p);
  EXPECT_EQ(g.find(idx)->shear_j, 0.0);
  EXPECT_FALSE(g.find(idx)->in_contact);
  EXPECT_DOUBLE_EQ(g.find(idx)->plastic_sinkage, 0.004);
}

TEST(StepContact, LoadUnloadLeavesFootprint) {
  const SoilParams p;
  TerrainGrid g = new_grid(1.0, 1.0, 0.01, 0.1);
  std::vector<ContactSample> s{sample_at(0.3, 0.02, 0.1)};
  double peak = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double y = 0.012 * std::sin(std::numbers::pi * k / 100.0);
    peak = std::max(peak, y);
    s[0].world_pos.z() = 0.1 - y;
    step_contact(g, s, 1e-3, p);
  }
  EXPECT_NEAR(g.height_at(0.3, 0.02), 0.1 - peak, 1e-15);
}

TEST(StepContact, PlasticSinkageNeverDecreasesAndNoTension) {
  const SoilParams p;
  TerrainGrid g = new_grid(0.2, 0.2, 0.01, 0.0);
  Xoshiro256 rng(17);
  std::vector<ContactSample> s(12);
  std::map<std::pair<int, int>, double> last;
  for (int step = 0; step < 10000; ++step) {
    for (auto& c : s)
      c = sample_at(rng.uniform(0.0, 0.2), rng.uniform(-0.1, 0.1), rng.uniform(-0.02, 0.005),
                    {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
    const auto r = step_contact(g, s, 1e-3, p);
    for (std::size_t k = 0; k < s.size(); ++k) {
      EXPECT_GE(r.forces[k].z(), 0.0);
      const double tangential = r.forces[k].head<2>().norm();
      EXPECT_LE(tangential, shear_limit(r.forces[k].z() / g.cell_area(), p) * g.cell_area() * (1 + 1e-12));
    }
    for (const auto& [idx, node] : g.sorted_nodes()) {
      EXPECT_GE(node.shear_j, 0.0);
      if (!node.in_contact) {
        EXPECT_EQ(node.shear_j, 0.0);
      }
      double& prev = last[{idx.i, idx.j}];
      ASSERT_GE(node.plastic_sinkage, prev);
      prev = node.plastic_sinkage;
    }
  }
}

TEST(StepContact, SamplesSharingANodeSplitItsForce) {
  const SoilParams p;
  TerrainGrid a = new_grid(1.0, 1.0, 0.01, 0.0);
  TerrainGrid b = new_grid(1.0, 1.0, 0.01, 0.0);
  const std::vector<ContactSample> one{sample_at(0.5, 0.0, -0.006)};
  const std::vector<ContactSample> two{sample_at(0.5, 0.0, -0.006), sample_at(0.501, 0.0, -0.004)};
  const auto ra = step_contact(a, one, 1e-3, p);
  const auto rb = step_contact(b, two, 1e-3, p);
  EXPECT_DOUBLE_EQ(rb.forces[0].z() + rb.forces[1].z(), ra.forces[0].z());
  EXPECT_DOUBLE_EQ(rb.forces[0].z(), rb.forces[1].z());
}

// ---------------------------------------------------------------------------
// Wrench and plate
// ---------------------------------------------------------------------------

TEST(ResultantWrench, Identities) {
  const Eigen::Vector3d ref(1.0, 2.0, 3.0);
  EXPECT_TRUE(resultant_wrench({}, ref).force.isZero(0.0));
  EXPECT_TRUE(resultant_wrench({}, ref).torque.isZero(0.0));

  const Eigen::Vector3d f(0.0, 0.0, 5.0);
  const std::vector<PointForce> couple{{ref + Eigen::Vector3d(0.1, 0, 0), f},
                                       {ref - Eigen::Vector3d(0.1, 0, 0), -f}};
  const Wrench w = resultant_wrench(couple, ref);
  EXPECT_TRUE(w.force.isZero(0.0));
  EXPECT_NEAR(w.torque.y(), -1.0, 1e-15);

  const std::vector<PointForce> single{{ref, f}};
  const Wrench s = resultant_wrench(single, ref);
  EXPECT_EQ(s.force, f);
  EXPECT_TRUE(s.torque.isZero(0.0));
}

TEST(PlateIndentation, SettlesAtClosedFormDepth) {
  const auto r = simulate_plate_indentation(SoilParams{}, 10.0, 0.1);
  EXPECT_LT(rel(r.analytic_sinkage, kPlateSinkage), 1e-14);
  EXPECT_LT(r.relative_error, 0.01);
}

TEST(SoilParams, Validation) {
  SoilParams p;
  EXPECT_NO_THROW(p.validate());
  p.n = -1.0;
  EXPECT_THROW(p.validate(), ParameterError);
  p = {};
  p.friction_angle = std::numbers::pi / 2;
  EXPECT_THROW(p.validate(), ParameterError);
}

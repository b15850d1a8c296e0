#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "contopt/misocp.hpp"

using namespace contopt;

namespace {

// 2x2-node ground structure (6 members), left nodes pinned.
GroundStructure square_cell() {
  GroundStructure gs = generate_ground_structure(1, 1, 1.0);
  gs.set_fixed_dofs({2 * 0, 2 * 0 + 1, 2 * 2, 2 * 2 + 1});  // nodes (0,0) and (0,1)
  return gs;
}

// Independent oracle: solve the SOCP of one fixed existence pattern,
// built from scratch (bounded areas on active members only).
double fixed_pattern_value(const GroundStructure& gs, const ContactSpec& contact, const Vector& f,
                           double v, double xmin, double xmax, unsigned pattern) {
  ProgramBuilder pb;
  const Index n = gs.num_dofs();
  std::vector<Index> triple(static_cast<size_t>(gs.num_members()), -1);
  for (int e = 0; e < gs.num_members(); ++e)
    if (pattern & (1u << e)) triple[static_cast<size_t>(e)] = pb.add_rotated_soc(3);
  const Index ir = contact.size() > 0 ? pb.add_orthant(contact.size()) : -1;
  const Index isv = pb.add_orthant(1);
  std::vector<Index> lo, hi;
  for (int e = 0; e < gs.num_members(); ++e)
    if (triple[static_cast<size_t>(e)] >= 0) {
      lo.push_back(pb.add_orthant(1));
      hi.push_back(pb.add_orthant(1));
    }
  std::vector<Index> fb(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) fb[static_cast<size_t>(i)] = pb.begin_row(f[i]);
  Index volrow = pb.begin_row(v);
  pb.row_entry(volrow, isv, 1.0);
  size_t bidx = 0;
  for (int e = 0; e < gs.num_members(); ++e) {
    const Index tb = triple[static_cast<size_t>(e)];
    if (tb < 0) continue;
    pb.set_objective(tb + 1, 1.0);
    const double s = std::sqrt(gs.young_modulus / gs.members[static_cast<size_t>(e)].length);
    for (const auto& [d, val] : gs.geometry_vector(e)) pb.row_entry(fb[static_cast<size_t>(d)], tb + 0, s * val);
    pb.row_entry(volrow, tb + 2, gs.members[static_cast<size_t>(e)].length);
    pb.add_row({{tb + 2, 1.0}, {lo[bidx], -1.0}}, xmin);   // x - s_lo = xmin
    pb.add_row({{tb + 2, 1.0}, {hi[bidx], 1.0}}, xmax);    // x + s_hi = xmax
    ++bidx;
  }
  if (contact.size() > 0) {
    for (Index k = 0; k < contact.normal_matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(contact.normal_matrix, k); it; ++it)
        pb.row_entry(fb[static_cast<size_t>(it.col())], ir + it.row(), it.value());
    for (Index j = 0; j < contact.size(); ++j) pb.set_objective(ir + j, 2.0 * contact.gaps[j]);
  }
  ConicSolution sol = solve_conic(pb.build());
  if (sol.status == SolveStatus::Optimal) return sol.objective;
  return std::numeric_limits<double>::infinity();
}

double enumerate_optimum(const GroundStructure& gs, const ContactSpec& contact, const Vector& f,
                         double v, double xmin, double xmax) {
  double best = std::numeric_limits<double>::infinity();
  for (unsigned pattern = 0; pattern < (1u << gs.num_members()); ++pattern)
    best = std::min(best, fixed_pattern_value(gs, contact, f, v, xmin, xmax, pattern));
  return best;
}

}  // namespace

TEST_CASE("single member: two-leaf tree picks the loaded branch") {
  GroundStructure gs = generate_ground_structure(1, 0, 1.0);
  gs.set_fixed_dofs({0, 1, 3});
  ContactSpec nc = ContactSpec::empty(gs);
  Vector f(1);
  f << 1.0;
  TopologySocp base = build_topology_socp(gs, nc, f, 1.0);
  BinaryAugmentedModel model = attach_existence_bounds(gs, base, 0.25, 0.8);
  auto [res, st] = branch_and_bound(model, gs, nc, f, 1.0);
  REQUIRE(st.status == BnBStatus::Optimal);
  REQUIRE(st.incumbent_pattern == std::vector<int>{1});
  CHECK(res.x[0] >= 0.25 - 1e-7);
  CHECK(res.x[0] <= 0.8 + 1e-7);
  // all volume fits: x = xmax is optimal, objective f^2 l/(E xmax)
  CHECK(res.objective == Catch::Approx(1.0 / 0.8).epsilon(1e-6));
}

TEST_CASE("root-integral model solves in one node") {
  GroundStructure gs = generate_ground_structure(1, 0, 1.0);
  gs.set_fixed_dofs({0, 1, 3});
  ContactSpec nc = ContactSpec::empty(gs);
  Vector f(1);
  f << 1.0;
  TopologySocp base = build_topology_socp(gs, nc, f, 2.0);
  // volume allows x up to 2 > xmax: relaxation pins z = 1 exactly
  BinaryAugmentedModel model = attach_existence_bounds(gs, base, 0.5, 1.0);
  auto [res, st] = branch_and_bound(model, gs, nc, f, 2.0);
  REQUIRE(st.status == BnBStatus::Optimal);
  CHECK(st.node_count == 1);
  CHECK(res.objective == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("linking constraints act through the binaries") {
  GroundStructure gs = square_cell();
  ContactSpec nc = ContactSpec::empty(gs);
  LoadCase lc = LoadCase::zero(gs);
  lc.add_point_load(gs, 3, {0.0, -1.0});  // node (1,1)
  const double v = 1.0, xmin = 0.2, xmax = 2.0;
  TopologySocp base = build_topology_socp(gs, nc, lc.f, v);
  BinaryAugmentedModel model = attach_existence_bounds(gs, base, xmin, xmax);

  SECTION("relaxation is a valid lower bound for the integer optimum") {
    ConicSolution relax = solve_conic(model.program);
    REQUIRE(relax.status == SolveStatus::Optimal);
    const double exact = enumerate_optimum(gs, nc, lc.f, v, xmin, xmax);
    CHECK(relax.objective <= exact + 1e-6 * (1.0 + std::abs(exact)));
  }
  SECTION("incumbent respects the existence bounds exactly") {
    auto [res, st] = branch_and_bound(model, gs, nc, lc.f, v);
    REQUIRE(st.status == BnBStatus::Optimal);
    for (int e = 0; e < gs.num_members(); ++e) {
      if (st.incumbent_pattern[static_cast<size_t>(e)] == 0)
        CHECK(std::abs(res.x[e]) <= 1e-6);
      else {
        CHECK(res.x[e] >= xmin - 1e-6);
        CHECK(res.x[e] <= xmax + 1e-6);
      }
    }
  }
}

TEST_CASE("branch and bound matches exhaustive enumeration") {
  std::mt19937 rng(777);
  std::uniform_real_distribution<double> xr(0.1, 0.5);
  std::uniform_real_distribution<double> fr(-1.0, 1.0);
  GroundStructure gs = square_cell();
  std::vector<ContactSurface> floor = {{{1}, {0.0, 1.0}, 0.2}};  // node (1,0)
  ContactSpec cs = make_contact(gs, floor);
  for (int draw = 0; draw < 3; ++draw) {
    const double xmin = xr(rng);
    const double xmax = xmin + 1.0 + xr(rng);
    Vector f(gs.num_dofs());
    for (Index i = 0; i < f.size(); ++i) f[i] = fr(rng);
    const double v = 1.5;
    TopologySocp base = build_topology_socp(gs, cs, f, v);
    BinaryAugmentedModel model = attach_existence_bounds(gs, base, xmin, xmax);
    auto [res, st] = branch_and_bound(model, gs, cs, f, v);
    const double exact = enumerate_optimum(gs, cs, f, v, xmin, xmax);
    if (!std::isfinite(exact)) {
      CHECK(st.status != BnBStatus::Optimal);
      continue;
    }
    REQUIRE(st.status == BnBStatus::Optimal);
    CHECK(std::abs(st.incumbent_objective - exact) <= 1e-6 * (1.0 + std::abs(exact)));
    CHECK(st.relative_gap() <= 1e-6);
    (void)res;
  }
}

TEST_CASE("degree limits form a nested restriction hierarchy") {
  GroundStructure gs = generate_ground_structure(2, 1, 1.0);
  gs.set_fixed_dofs({2 * grid_node(gs, 2, 0, 0), 2 * grid_node(gs, 2, 0, 0) + 1,
                     2 * grid_node(gs, 2, 0, 1), 2 * grid_node(gs, 2, 0, 1) + 1});
  ContactSpec nc = ContactSpec::empty(gs);
  LoadCase lc = LoadCase::zero(gs);
  lc.add_point_load(gs, grid_node(gs, 2, 2, 0), {0.0, -1.0});
  const double v = 1.0, xmin = 0.05, xmax = 3.0;
  TopologySocp base = build_topology_socp(gs, nc, lc.f, v);
  BinaryAugmentedModel m0 = attach_existence_bounds(gs, base, xmin, xmax);
  auto [r0, s0] = branch_and_bound(m0, gs, nc, lc.f, v);
  REQUIRE(s0.status == BnBStatus::Optimal);

  BinaryAugmentedModel m3 = attach_degree_limits(m0, gs, 3);
  auto [r3, s3] = branch_and_bound(m3, gs, nc, lc.f, v);
  REQUIRE(s3.status == BnBStatus::Optimal);

  BinaryAugmentedModel m2 = attach_degree_limits(m0, gs, 2);
  auto [r2, s2] = branch_and_bound(m2, gs, nc, lc.f, v);
  REQUIRE(s2.status == BnBStatus::Optimal);

  CHECK(s2.incumbent_objective >= s3.incumbent_objective - 1e-8 * (1 + std::abs(s3.incumbent_objective)));
  CHECK(s3.incumbent_objective >= s0.incumbent_objective - 1e-8 * (1 + std::abs(s0.incumbent_objective)));

  SECTION("slack bound is inactive when wider than the max valence") {
    BinaryAugmentedModel m9 = attach_degree_limits(m0, gs, 9);
    auto [r9, s9] = branch_and_bound(m9, gs, nc, lc.f, v);
    REQUIRE(s9.status == BnBStatus::Optimal);
    CHECK(s9.incumbent_objective ==
          Catch::Approx(s0.incumbent_objective).epsilon(1e-6));
  }
}

TEST_CASE("crossing prohibition") {
  GroundStructure gs = square_cell();
  ContactSpec nc = ContactSpec::empty(gs);
  LoadCase lc = LoadCase::zero(gs);
  lc.add_point_load(gs, 1, {0.4, -1.0});
  lc.add_point_load(gs, 3, {-0.4, -0.7});
  const double v = 1.0, xmin = 0.05, xmax = 3.0;
  auto pairs = crossing_pairs(gs);
  REQUIRE(pairs.size() == 1);  // the two cell diagonals
  TopologySocp base = build_topology_socp(gs, nc, lc.f, v);
  BinaryAugmentedModel plain = attach_existence_bounds(gs, base, xmin, xmax);
  BinaryAugmentedModel nocross = attach_no_crossing(plain, pairs);

  auto [rp, sp] = branch_and_bound(plain, gs, nc, lc.f, v);
  auto [rn, sn] = branch_and_bound(nocross, gs, nc, lc.f, v);
  REQUIRE(sp.status == BnBStatus::Optimal);
  REQUIRE(sn.status == BnBStatus::Optimal);

  SECTION("at most one diagonal is active") {
    int active = sn.incumbent_pattern[static_cast<size_t>(pairs[0].first)] +
                 sn.incumbent_pattern[static_cast<size_t>(pairs[0].second)];
    CHECK(active <= 1);
  }
  SECTION("restriction never improves the objective") {
    CHECK(sn.incumbent_objective >=
          sp.incumbent_objective - 1e-8 * (1 + std::abs(sp.incumbent_objective)));
  }
  SECTION("inactive when the unconstrained optimum does not cross") {
    if (sp.incumbent_pattern[static_cast<size_t>(pairs[0].first)] +
            sp.incumbent_pattern[static_cast<size_t>(pairs[0].second)] <=
        1)
      CHECK(sn.incumbent_objective == Catch::Approx(sp.incumbent_objective).epsilon(1e-6));
  }
}

TEST_CASE("existence bound validation") {
  GroundStructure gs = square_cell();
  ContactSpec nc = ContactSpec::empty(gs);
  TopologySocp base = build_topology_socp(gs, nc, Vector::Zero(gs.num_dofs()), 1.0);
  CHECK_THROWS_AS(attach_existence_bounds(gs, base, 2.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(attach_existence_bounds(gs, base, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("multi-worker search finds the same optimum") {
  GroundStructure gs = square_cell();
  ContactSpec nc = ContactSpec::empty(gs);
  LoadCase lc = LoadCase::zero(gs);
  lc.add_point_load(gs, 3, {0.3, -1.0});
  const double v = 1.0, xmin = 0.1, xmax = 2.0;
  TopologySocp base = build_topology_socp(gs, nc, lc.f, v);
  BinaryAugmentedModel model = attach_existence_bounds(gs, base, xmin, xmax);
  auto [r1, s1] = branch_and_bound(model, gs, nc, lc.f, v);
  MipConfig cfg;
  cfg.workers = 4;
  auto [r4, s4] = branch_and_bound(model, gs, nc, lc.f, v, cfg);
  REQUIRE(s1.status == BnBStatus::Optimal);
  REQUIRE(s4.status == BnBStatus::Optimal);
  CHECK(s4.incumbent_objective == Catch::Approx(s1.incumbent_objective).epsilon(1e-6));
}

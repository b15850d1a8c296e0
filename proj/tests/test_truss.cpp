#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "contopt/truss.hpp"

using namespace contopt;

namespace {

// Independent enumeration oracle: all node pairs, dropping a pair when a
// third grid node lies on the open segment between them.
int count_members_by_enumeration(int nx, int ny) {
  std::vector<Eigen::Vector2d> pts;
  for (int iy = 0; iy <= ny; ++iy)
    for (int ix = 0; ix <= nx; ++ix) pts.emplace_back(ix, iy);
  int count = 0;
  const int n = static_cast<int>(pts.size());
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      bool blocked = false;
      for (int c = 0; c < n && !blocked; ++c) {
        if (c == a || c == b) continue;
        const Eigen::Vector2d ab = pts[b] - pts[a], ac = pts[c] - pts[a];
        const double cross = ab.x() * ac.y() - ab.y() * ac.x();
        const double dot = ab.dot(ac);
        if (std::abs(cross) < 1e-12 && dot > 1e-12 && dot < ab.squaredNorm() - 1e-12) blocked = true;
      }
      if (!blocked) ++count;
    }
  return count;
}

std::set<std::pair<int, int>> member_pairs(const GroundStructure& gs) {
  std::set<std::pair<int, int>> s;
  for (const auto& m : gs.members) s.insert({m.a, m.b});
  return s;
}

}  // namespace

TEST_CASE("ground structure generation on small grids") {
  SECTION("single bar") {
    GroundStructure gs = generate_ground_structure(1, 0, 2.5);
    REQUIRE(gs.num_nodes() == 2);
    REQUIRE(gs.num_members() == 1);
    CHECK(gs.members[0].length == Catch::Approx(2.5));
    const auto be = gs.geometry_vector(0);
    REQUIRE(be.size() == 4);
    // b_e = (-1, 0, +1, 0)
    CHECK(be[0] == std::pair<int, double>(0, -1.0));
    CHECK(be[1].second == Catch::Approx(0.0).margin(1e-15));
    CHECK(be[2] == std::pair<int, double>(2, 1.0));
  }
  SECTION("2x2 grid: 9 nodes, 28 members") {
    GroundStructure gs = generate_ground_structure(2, 2, 1.0);
    REQUIRE(gs.num_nodes() == 9);
    CHECK(gs.num_members() == 28);
    CHECK(gs.num_members() == count_members_by_enumeration(2, 2));
    // 12 unit members, 8 unit diagonals, 8 knight moves
    int unit = 0, diag = 0, knight = 0;
    for (const auto& m : gs.members) {
      const double l = m.length;
      if (l == Catch::Approx(1.0)) ++unit;
      else if (l == Catch::Approx(std::sqrt(2.0))) ++diag;
      else if (l == Catch::Approx(std::sqrt(5.0))) ++knight;
    }
    CHECK(unit == 12);
    CHECK(diag == 8);
    CHECK(knight == 8);
  }
  SECTION("paper grid: m = 1361, n = 132") {
    GroundStructure gs = generate_ground_structure(10, 5, 1000.0);
    REQUIRE(gs.num_nodes() == 66);
    CHECK(gs.num_dofs() == 132);
    CHECK(gs.num_members() == 1361);
    CHECK(count_members_by_enumeration(10, 5) == 1361);
  }
  SECTION("norm of every geometry vector is sqrt(2)") {
    GroundStructure gs = generate_ground_structure(3, 2, 1.0);
    for (int e = 0; e < gs.num_members(); ++e) {
      double n2 = 0;
      for (const auto& [d, v] : gs.geometry_vector(e)) {
        (void)d;
        n2 += v * v;
      }
      CHECK(n2 == Catch::Approx(2.0));
    }
  }
}

TEST_CASE("member set is invariant under grid reflection") {
  const int nx = 3, ny = 2;
  GroundStructure gs = generate_ground_structure(nx, ny, 1.0);
  auto reflect = [&](int node) {
    const int ix = node % (nx + 1), iy = node / (nx + 1);
    return iy * (nx + 1) + (nx - ix);
  };
  std::set<std::pair<int, int>> orig = member_pairs(gs), mirrored;
  for (const auto& m : gs.members) {
    int a = reflect(m.a), b = reflect(m.b);
    if (a > b) std::swap(a, b);
    mirrored.insert({a, b});
  }
  CHECK(orig == mirrored);
}

TEST_CASE("stiffness assembly") {
  SECTION("single bar gives plus/minus pattern on axial DOFs") {
    GroundStructure gs = generate_ground_structure(1, 0, 1.0);
    Vector x = Vector::Ones(1);
    SparseMatrix K = assemble_stiffness(gs, x);
    Eigen::MatrixXd Kd(K);
    CHECK(Kd(0, 0) == Catch::Approx(1.0));
    CHECK(Kd(0, 2) == Catch::Approx(-1.0));
    CHECK(Kd(2, 2) == Catch::Approx(1.0));
    CHECK(Kd(1, 1) == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("zero design gives the zero matrix") {
    GroundStructure gs = generate_ground_structure(2, 2, 1.0);
    SparseMatrix K = assemble_stiffness(gs, Vector::Zero(gs.num_members()));
    CHECK(K.nonZeros() == 0);
  }
  SECTION("negative area rejected") {
    GroundStructure gs = generate_ground_structure(1, 0, 1.0);
    Vector x(1);
    x << -0.5;
    CHECK_THROWS_AS(assemble_stiffness(gs, x), std::invalid_argument);
  }
  SECTION("energy identity u'K(x)u = sum (E/l) x_e (b_e'u)^2") {
    GroundStructure gs = generate_ground_structure(2, 2, 1.0);
    gs.young_modulus = 3.7;
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> unif(0.0, 2.0);
    Vector x(gs.num_members());
    for (int e = 0; e < gs.num_members(); ++e) x[e] = unif(rng);
    SparseMatrix K = assemble_stiffness(gs, x);
    std::uniform_real_distribution<double> du(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      Vector u(gs.num_dofs());
      for (Index i = 0; i < u.size(); ++i) u[i] = du(rng);
      const double lhs = u.dot(K * u);
      double rhs = 0;
      for (int e = 0; e < gs.num_members(); ++e) {
        double c = 0;
        for (const auto& [d, v] : gs.geometry_vector(e)) c += v * u[d];
        rhs += gs.young_modulus / gs.members[static_cast<size_t>(e)].length * x[e] * c * c;
      }
      REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-10));
    }
  }
  SECTION("rigid translation is in the kernel of every b_e") {
    GroundStructure gs = generate_ground_structure(3, 2, 1.0);
    Vector u(gs.num_dofs());
    for (int nd = 0; nd < gs.num_nodes(); ++nd) {
      u[gs.dof_x(nd)] = 0.3;
      u[gs.dof_y(nd)] = -1.2;
    }
    for (int e = 0; e < gs.num_members(); ++e) {
      double c = 0;
      for (const auto& [d, v] : gs.geometry_vector(e)) c += v * u[d];
      CHECK(c == Catch::Approx(0.0).margin(1e-14));
    }
  }
}

TEST_CASE("fixed DOFs are deleted at assembly") {
  GroundStructure gs = generate_ground_structure(1, 0, 1.0);
  gs.set_fixed_dofs({0, 1});
  CHECK(gs.num_dofs() == 2);
  auto be = gs.geometry_vector(0);
  REQUIRE(be.size() == 2);
  CHECK(be[0].first == 0);  // reduced index of full dof 2
  Vector x = Vector::Ones(1);
  SparseMatrix K = assemble_stiffness(gs, x);
  CHECK(K.rows() == 2);
  CHECK(Eigen::MatrixXd(K)(0, 0) == Catch::Approx(1.0));
}

TEST_CASE("halfplane contact kinematics") {
  GroundStructure gs = generate_ground_structure(1, 0, 1.0);
  SECTION("floor half a unit below constrains downward motion") {
    ContactSpec cs = halfplane_contact(gs, {0}, {0.0, -0.5}, {0.0, 1.0});
    REQUIRE(cs.size() == 1);
    CHECK(cs.gaps[0] == Catch::Approx(0.5));
    Eigen::MatrixXd C(cs.normal_matrix);
    CHECK(C(0, 0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(C(0, 1) == Catch::Approx(-1.0));  // -u_y <= 0.5
  }
  SECTION("node on the surface has zero gap") {
    ContactSpec cs = halfplane_contact(gs, {0}, {0.0, 0.0}, {0.0, 1.0});
    CHECK(cs.gaps[0] == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("node inside the obstacle rejected") {
    CHECK_THROWS_AS(halfplane_contact(gs, {0}, {0.0, 0.5}, {0.0, 1.0}), std::invalid_argument);
  }
  SECTION("uniformly offset floor gives equal gaps") {
    GroundStructure grid = generate_ground_structure(10, 5, 1.0);
    std::vector<int> bottom;
    for (int ix = 0; ix <= 10; ++ix) bottom.push_back(grid_node(grid, 10, ix, 0));
    ContactSpec cs = halfplane_contact(grid, bottom, {0.0, -0.25}, {0.0, 1.0});
    REQUIRE(cs.size() == 11);
    for (Index j = 0; j < cs.size(); ++j) CHECK(cs.gaps[j] == Catch::Approx(0.25));
  }
}

TEST_CASE("crossing pair detection") {
  SECTION("X configuration crosses") {
    GroundStructure gs;
    gs.nodes = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
    gs.members = {{0, 1, 0, {}}, {2, 3, 0, {}}};
    gs.finalize();
    auto pairs = crossing_pairs(gs);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0] == std::pair<int, int>(0, 1));
  }
  SECTION("shared endpoint is not a crossing") {
    GroundStructure gs;
    gs.nodes = {{0, 0}, {1, 1}, {2, 0}};
    gs.members = {{0, 1, 0, {}}, {1, 2, 0, {}}};
    gs.finalize();
    CHECK(crossing_pairs(gs).empty());
  }
  SECTION("matches the brute-force parametric oracle on the 2x2 grid") {
    GroundStructure gs = generate_ground_structure(2, 2, 1.0);
    auto got = crossing_pairs(gs);
    std::set<std::pair<int, int>> expected;
    for (int e = 0; e < gs.num_members(); ++e)
      for (int f = e + 1; f < gs.num_members(); ++f) {
        const auto& me = gs.members[static_cast<size_t>(e)];
        const auto& mf = gs.members[static_cast<size_t>(f)];
        if (me.a == mf.a || me.a == mf.b || me.b == mf.a || me.b == mf.b) continue;
        const Eigen::Vector2d p1 = gs.nodes[me.a], p2 = gs.nodes[me.b];
        const Eigen::Vector2d q1 = gs.nodes[mf.a], q2 = gs.nodes[mf.b];
        Eigen::Matrix2d A;
        A << (p2 - p1).x(), (q1 - q2).x(), (p2 - p1).y(), (q1 - q2).y();
        if (std::abs(A.determinant()) < 1e-12) continue;
        Eigen::Vector2d ts = A.inverse() * (q1 - p1);
        if (ts[0] > 1e-9 && ts[0] < 1 - 1e-9 && ts[1] > 1e-9 && ts[1] < 1 - 1e-9)
          expected.insert({e, f});
      }
    std::set<std::pair<int, int>> got_set(got.begin(), got.end());
    CHECK(got_set == expected);
    CHECK_FALSE(got.empty());
  }
}

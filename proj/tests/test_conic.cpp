#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "contopt/conic.hpp"

using namespace contopt;

TEST_CASE("rotated cone membership") {
  ConeBlock k3 = ConeBlock::rotated_soc(4);

  SECTION("boundary point") {
    Vector p(4);
    p << 1, 1, 1, 2;  // x = (1,1), y = 1, z = 2: x'x = 2 = yz
    CHECK(cone_membership(p, k3, 0.0));
  }
  SECTION("violated inequality") {
    Vector p(4);
    p << 1, 1, 1, 1;  // x'x = 2 > 1
    CHECK_FALSE(cone_membership(p, k3, 0.0));
  }
  SECTION("cone apex") {
    Vector p = Vector::Zero(4);
    CHECK(cone_membership(p, k3, 0.0));
  }
  SECTION("negative y rejected") {
    Vector p(4);
    p << 0, 0, -1, 1;
    CHECK_FALSE(cone_membership(p, k3, 0.0));
  }
  SECTION("dimension mismatch throws") {
    Vector p = Vector::Zero(3);
    CHECK_THROWS_AS(cone_membership(p, k3, 0.0), std::invalid_argument);
  }
}

TEST_CASE("orthant membership") {
  ConeBlock o = ConeBlock::orthant(3);
  Vector p(3);
  p << 0, 1, 2;
  CHECK(cone_membership(p, o, 0.0));
  p[1] = -1e-3;
  CHECK_FALSE(cone_membership(p, o, 0.0));
  CHECK(cone_membership(p, o, 1e-2));
}

TEST_CASE("rotated_to_soc embedding") {
  SECTION("boundary maps to boundary") {
    Vector x(2);
    x << 1, 1;
    Vector v = rotated_to_soc(x, 1, 2);
    REQUIRE(v.size() == 4);
    CHECK(v[0] == Catch::Approx(3.0));
    CHECK(v[1] == Catch::Approx(-1.0));
    CHECK(v[2] == Catch::Approx(2.0));
    CHECK(v[3] == Catch::Approx(2.0));
    CHECK(v[0] == Catch::Approx(v.tail(3).norm()));
  }
  SECTION("interior point") {
    Vector x = Vector::Zero(2);
    Vector v = rotated_to_soc(x, 1, 1);
    CHECK(v[0] == Catch::Approx(2.0));
    CHECK(v.tail(3).norm() == Catch::Approx(0.0));
  }
}

TEST_CASE("embedding is membership-equivalent to the direct test") {
  std::mt19937 rng(20240811);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  int agree = 0;
  const int kSamples = 10000;
  for (int it = 0; it < kSamples; ++it) {
    const int d = 3 + static_cast<int>(rng() % 4);  // dims 3..6
    Vector p(d);
    for (int i = 0; i < d; ++i) p[i] = unif(rng);
    // bias a part of the samples toward the cone so both outcomes occur
    if (it % 3 == 0) {
      p[d - 2] = std::abs(p[d - 2]);
      p[d - 1] = std::abs(p[d - 1]);
      p.head(d - 2) *= 0.3;
    }
    ConeBlock blk = ConeBlock::rotated_soc(d);
    const bool direct = cone_membership(p, blk, 0.0);
    Vector emb = rotated_to_soc(p.head(d - 2), p[d - 2], p[d - 1]);
    const bool via_soc = emb[0] >= emb.tail(d - 1).norm();
    if (direct == via_soc) ++agree;
  }
  CHECK(agree == kSamples);
}

TEST_CASE("dual cone of the rotated cone") {
  ConeBlock k = ConeBlock::rotated_soc(3);
  Vector p(3);
  p << 1, 0.5, 0.5;  // x'x = 1 <= 4yz = 1: dual boundary
  CHECK(dual_cone_membership(p, k, 1e-12));
  CHECK_FALSE(cone_membership(p, k, 0.0));
  // random primal/dual pairs have nonnegative inner product
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int it = 0; it < 1000; ++it) {
    Vector a(3), b(3);
    for (int i = 0; i < 3; ++i) {
      a[i] = unif(rng);
      b[i] = unif(rng);
    }
    if (!cone_membership(a, k, 0.0) || !dual_cone_membership(b, k, 0.0)) continue;
    CHECK(a.dot(b) >= -1e-12);
  }
}

TEST_CASE("program builder and validation") {
  ProgramBuilder pb;
  Index t = pb.add_rotated_soc(3);
  Index z = pb.add_free(1);
  pb.set_objective(z, 1.0);
  pb.add_row({{t + 1, 1.0}, {z, -1.0}}, 0.0);
  pb.add_row({{t + 2, 1.0}}, 1.0);
  ConicProgram p = pb.build();
  REQUIRE(p.num_vars() == 4);
  REQUIRE(p.num_rows() == 2);
  CHECK_NOTHROW(p.validate());

  SECTION("block coverage enforced") {
    p.blocks.pop_back();
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  }
  SECTION("dump lists triplets and layout") {
    std::ostringstream os;
    dump_program(p, os);
    const std::string s = os.str();
    CHECK(s.find("rsoc:3") != std::string::npos);
    CHECK(s.find("free:1") != std::string::npos);
    CHECK(s.find("rhs 0 1") != std::string::npos);
  }
}

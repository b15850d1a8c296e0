#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "contopt/conic.hpp"

namespace contopt {

struct Member {
  int a = 0, b = 0;       // node indices, a < b
  double length = 0.0;
  Eigen::Vector2d dir;    // unit vector from a to b
};

/// Ground structure on explicit 2-D nodes. Supports are modeled by
/// deleting the fixed DOFs from all assembled vectors and matrices;
/// geometry vectors b_e are exposed in the reduced numbering.
struct GroundStructure {
  std::vector<Eigen::Vector2d> nodes;
  std::vector<Member> members;
  std::vector<int> fixed_dofs;  // full-numbering DOF indices, sorted
  double young_modulus = 1.0;
  double geometric_scale = 1.0;  // tolerance base, grid spacing when generated

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_members() const { return static_cast<int>(members.size()); }
  int num_full_dofs() const { return 2 * num_nodes(); }
  /// Number of free displacement DOFs (the paper's n).
  int num_dofs() const { return num_full_dofs() - static_cast<int>(fixed_dofs.size()); }

  void set_fixed_dofs(std::vector<int> dofs) {
    std::sort(dofs.begin(), dofs.end());
    dofs.erase(std::unique(dofs.begin(), dofs.end()), dofs.end());
    if (!dofs.empty() && (dofs.front() < 0 || dofs.back() >= num_full_dofs()))
      throw std::invalid_argument("set_fixed_dofs: DOF index out of range");
    fixed_dofs = std::move(dofs);
    rebuild_dof_map();
  }

  /// Reduced index of a full DOF, or -1 when fixed.
  int dof_index(int full_dof) const {
    if (dof_map_.empty()) return full_dof;
    return dof_map_[static_cast<size_t>(full_dof)];
  }
  int dof_x(int node) const { return dof_index(2 * node); }
  int dof_y(int node) const { return dof_index(2 * node + 1); }

  /// Geometry vector b_e as (reduced dof, value) pairs; entries at fixed
  /// DOFs are dropped. The full-space vector satisfies |b_e|^2 = 2.
  std::vector<std::pair<int, double>> geometry_vector(int e) const {
    const Member& m = members[static_cast<size_t>(e)];
    std::vector<std::pair<int, double>> out;
    out.reserve(4);
    for (int k = 0; k < 2; ++k) {
      const int d = dof_index(2 * m.a + k);
      if (d >= 0) out.emplace_back(d, -m.dir[k]);
    }
    for (int k = 0; k < 2; ++k) {
      const int d = dof_index(2 * m.b + k);
      if (d >= 0) out.emplace_back(d, m.dir[k]);
    }
    return out;
  }

  Vector member_lengths() const {
    Vector l(num_members());
    for (int e = 0; e < num_members(); ++e) l[e] = members[static_cast<size_t>(e)].length;
    return l;
  }

  void finalize() {
    for (auto& m : members) {
      const Eigen::Vector2d d = nodes[static_cast<size_t>(m.b)] - nodes[static_cast<size_t>(m.a)];
      m.length = d.norm();
      if (!(m.length > 0)) throw std::invalid_argument("member of zero length");
      m.dir = d / m.length;
    }
    rebuild_dof_map();
  }

 private:
  void rebuild_dof_map() {
    dof_map_.assign(static_cast<size_t>(num_full_dofs()), 0);
    for (int d : fixed_dofs) dof_map_[static_cast<size_t>(d)] = -1;
    int next = 0;
    for (auto& v : dof_map_)
      if (v == 0) v = next++; else v = -1;
  }
  std::vector<int> dof_map_;
};

/// Ground structure on an (nx+1) x (ny+1) node grid. The member set is
/// every node pair whose offset (dx, dy) satisfies gcd(|dx|,|dy|) = 1;
/// offsets with gcd > 1 pass through intermediate grid nodes and are
/// exactly the longer members removed under the overlap rule.
inline GroundStructure generate_ground_structure(int nx, int ny, double spacing) {
  if (nx < 1 && ny < 1) throw std::invalid_argument("generate_ground_structure: empty grid");
  if (!(spacing > 0)) throw std::invalid_argument("generate_ground_structure: spacing must be positive");
  GroundStructure gs;
  gs.geometric_scale = spacing;
  const int cols = nx + 1, rows = ny + 1;
  gs.nodes.reserve(static_cast<size_t>(cols * rows));
  for (int iy = 0; iy < rows; ++iy)
    for (int ix = 0; ix < cols; ++ix)
      gs.nodes.emplace_back(spacing * ix, spacing * iy);
  auto node_id = [cols](int ix, int iy) { return iy * cols + ix; };
  for (int ay = 0; ay < rows; ++ay)
    for (int ax = 0; ax < cols; ++ax)
      for (int by = ay; by < rows; ++by)
        for (int bx = (by == ay ? ax + 1 : 0); bx < cols; ++bx) {
          const int dx = std::abs(bx - ax), dy = std::abs(by - ay);
          if (std::gcd(dx, dy) != 1) continue;
          Member m;
          m.a = node_id(ax, ay);
          m.b = node_id(bx, by);
          if (m.a > m.b) std::swap(m.a, m.b);
          gs.members.push_back(m);
        }
  gs.finalize();
  return gs;
}

/// Node index on a generated grid.
inline int grid_node(const GroundStructure&, int nx, int ix, int iy) { return iy * (nx + 1) + ix; }

/// K(x) = sum_e (E / l_e) x_e b_e b_e' over the free DOFs.
inline SparseMatrix assemble_stiffness(const GroundStructure& gs, const Eigen::Ref<const Vector>& x) {
  if (x.size() != gs.num_members()) throw std::invalid_argument("assemble_stiffness: x size mismatch");
  if (x.size() > 0 && x.minCoeff() < 0) throw std::invalid_argument("assemble_stiffness: negative area");
  std::vector<Triplet> t;
  t.reserve(static_cast<size_t>(16 * gs.num_members()));
  for (int e = 0; e < gs.num_members(); ++e) {
    if (x[e] == 0.0) continue;
    const double k = gs.young_modulus / gs.members[static_cast<size_t>(e)].length * x[e];
    const auto be = gs.geometry_vector(e);
    for (const auto& [di, vi] : be)
      for (const auto& [dj, vj] : be) t.emplace_back(di, dj, k * vi * vj);
  }
  SparseMatrix K(gs.num_dofs(), gs.num_dofs());
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

/// Contact kinematics: rows of `normal_matrix` act on the reduced DOFs
/// and the non-penetration condition reads normal_matrix * u <= gaps.
struct ContactSpec {
  std::vector<int> candidate_nodes;  // one entry per row
  SparseMatrix normal_matrix;        // c x n
  Vector gaps;                       // c, componentwise >= 0

  Index size() const { return gaps.size(); }

  static ContactSpec empty(const GroundStructure& gs) {
    ContactSpec cs;
    cs.normal_matrix.resize(0, gs.num_dofs());
    cs.gaps.resize(0);
    return cs;
  }
};

/// One flat obstacle face touching a set of candidate nodes at a common
/// prescribed gap (the papers' "uniformly distributed" initial gaps).
struct ContactSurface {
  std::vector<int> nodes;
  Eigen::Vector2d inward_normal;  // unit, pointing from the obstacle into the body
  double gap = 0.0;
};

inline ContactSpec make_contact(const GroundStructure& gs, const std::vector<ContactSurface>& surfaces) {
  ContactSpec cs;
  std::vector<Triplet> t;
  std::vector<double> gaps;
  for (const auto& s : surfaces) {
    if (std::abs(s.inward_normal.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("contact surface normal must have unit norm");
    if (s.gap < 0) throw std::invalid_argument("contact gap must be nonnegative");
    for (int nd : s.nodes) {
      const int row = static_cast<int>(gaps.size());
      // row = -n so that (row u <= g) limits motion toward the obstacle
      for (int k = 0; k < 2; ++k) {
        if (s.inward_normal[k] == 0.0) continue;
        const int d = gs.dof_index(2 * nd + k);
        if (d < 0)
          throw std::invalid_argument("contact candidate node has a fixed DOF along the normal");
        t.emplace_back(row, d, -s.inward_normal[k]);
      }
      gaps.push_back(s.gap);
      cs.candidate_nodes.push_back(nd);
    }
  }
  cs.normal_matrix.resize(static_cast<Index>(gaps.size()), gs.num_dofs());
  cs.normal_matrix.setFromTriplets(t.begin(), t.end());
  cs.gaps = Eigen::Map<const Vector>(gaps.data(), static_cast<Index>(gaps.size()));
  return cs;
}

/// Contact against the half-plane { p : (p - point) . n >= 0 } with
/// inward unit normal n; gaps are the signed initial distances.
inline ContactSpec halfplane_contact(const GroundStructure& gs, const std::vector<int>& candidates,
                                     const Eigen::Vector2d& point, const Eigen::Vector2d& inward_normal) {
  if (std::abs(inward_normal.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("halfplane_contact: normal must have unit norm");
  std::vector<ContactSurface> surfaces;
  surfaces.reserve(candidates.size());
  for (int nd : candidates) {
    const double g = (gs.nodes[static_cast<size_t>(nd)] - point).dot(inward_normal);
    if (g < 0) throw std::invalid_argument("halfplane_contact: candidate node inside the obstacle");
    surfaces.push_back({{nd}, inward_normal, g});
  }
  return make_contact(gs, surfaces);
}

/// Unordered member pairs whose open segments properly cross. Touching
/// at endpoints is not a crossing; collinear overlaps cannot occur in
/// generated structures.
inline std::vector<std::pair<int, int>> crossing_pairs(const GroundStructure& gs) {
  const double tol = 1e-9 * gs.geometric_scale;
  std::vector<std::pair<int, int>> out;
  auto cross2 = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() * b.y() - a.y() * b.x();
  };
  for (int e = 0; e < gs.num_members(); ++e) {
    const auto& me = gs.members[static_cast<size_t>(e)];
    const Eigen::Vector2d p1 = gs.nodes[static_cast<size_t>(me.a)], p2 = gs.nodes[static_cast<size_t>(me.b)];
    for (int f = e + 1; f < gs.num_members(); ++f) {
      const auto& mf = gs.members[static_cast<size_t>(f)];
      if (me.a == mf.a || me.a == mf.b || me.b == mf.a || me.b == mf.b) continue;
      const Eigen::Vector2d q1 = gs.nodes[static_cast<size_t>(mf.a)], q2 = gs.nodes[static_cast<size_t>(mf.b)];
      const Eigen::Vector2d de = p2 - p1, df = q2 - q1;
      const double d1 = cross2(df, p1 - q1);
      const double d2 = cross2(df, p2 - q1);
      const double d3 = cross2(de, q1 - p1);
      const double d4 = cross2(de, q2 - p1);
      const double eps_e = tol * mf.length;
      const double eps_f = tol * me.length;
      const bool straddle_e = (d1 > eps_e && d2 < -eps_e) || (d1 < -eps_e && d2 > eps_e);
      const bool straddle_f = (d3 > eps_f && d4 < -eps_f) || (d3 < -eps_f && d4 > eps_f);
      if (straddle_e && straddle_f) out.emplace_back(e, f);
    }
  }
  return out;
}

/// Member indices incident to each node (for degree constraints).
inline std::vector<std::vector<int>> node_incidence(const GroundStructure& gs) {
  std::vector<std::vector<int>> inc(gs.nodes.size());
  for (int e = 0; e < gs.num_members(); ++e) {
    inc[static_cast<size_t>(gs.members[static_cast<size_t>(e)].a)].push_back(e);
    inc[static_cast<size_t>(gs.members[static_cast<size_t>(e)].b)].push_back(e);
  }
  return inc;
}

/// Load vector over the reduced DOFs.
struct LoadCase {
  Vector f;

  static LoadCase zero(const GroundStructure& gs) { return {Vector::Zero(gs.num_dofs())}; }
  LoadCase& add_point_load(const GroundStructure& gs, int node, const Eigen::Vector2d& force) {
    const int dx = gs.dof_x(node), dy = gs.dof_y(node);
    if (dx >= 0) f[dx] += force.x();
    if (dy >= 0) f[dy] += force.y();
    return *this;
  }
};

}  // namespace contopt

#pragma once

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "contopt/conic.hpp"

namespace contopt {

enum class SolveStatus : std::uint8_t {
  Optimal,
  PrimalInfeasible,
  DualInfeasible,
  MaxIterations,
  NumericalFailure,
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::PrimalInfeasible: return "primal-infeasible";
    case SolveStatus::DualInfeasible: return "dual-infeasible";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::NumericalFailure: return "numerical-failure";
  }
  return "?";
}

struct SolverConfig {
  double gap_tolerance = 1e-8;
  double feasibility_tolerance = 1e-8;
  int max_iterations = 200;
  double step_fraction = 0.99;  // fraction of the step to the cone boundary

  void validate() const {
    if (gap_tolerance <= 0 || feasibility_tolerance <= 0)
      throw std::invalid_argument("SolverConfig: tolerances must be positive");
    if (step_fraction <= 0.0 || step_fraction >= 1.0)
      throw std::invalid_argument("SolverConfig: step_fraction must lie strictly in (0,1)");
    if (max_iterations < 1) throw std::invalid_argument("SolverConfig: max_iterations < 1");
  }
};

/// Solution of a ConicProgram. For status Optimal the vectors hold the
/// (de-homogenized) primal/dual pair; for PrimalInfeasible `dual_eq` and
/// `dual_cone` carry a Farkas certificate normalized to rhs'dual_eq = 1;
/// for DualInfeasible `primal` carries an unbounded ray normalized to
/// objective'primal = -1.
struct ConicSolution {
  Vector primal;
  Vector dual_eq;
  Vector dual_cone;
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  double primal_residual = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

/// Residuals of a solution recomputed from scratch against the program
/// data. Nothing here is copied from the solver loop.
struct CertifyReport {
  double primal_residual = 0;   // ||A v - b|| / (1 + ||b||)
  double dual_residual = 0;     // ||A'y + s - c|| / (1 + ||c||)
  double gap = 0;               // |c'v - b'y|
  double cone_violation = 0;      // worst primal cone violation
  double dual_cone_violation = 0; // worst dual cone violation
  double complementarity = 0;   // |v's|
};

inline CertifyReport certify(const ConicProgram& p, const ConicSolution& sol) {
  if (sol.primal.size() != p.num_vars() || sol.dual_eq.size() != p.num_rows() ||
      sol.dual_cone.size() != p.num_vars())
    throw std::invalid_argument("certify: solution dimensions do not match program");
  CertifyReport r;
  const Vector& v = sol.primal;
  r.primal_residual = (p.equality_matrix * v - p.equality_rhs).norm() / (1.0 + p.equality_rhs.norm());
  r.dual_residual = (p.equality_matrix.transpose() * sol.dual_eq + sol.dual_cone - p.objective).norm() /
                    (1.0 + p.objective.norm());
  r.gap = std::abs(p.objective.dot(v) - p.equality_rhs.dot(sol.dual_eq));
  r.cone_violation = p.cone_violation(v, /*dual=*/false);
  r.dual_cone_violation = p.cone_violation(sol.dual_cone, /*dual=*/true);
  r.complementarity = std::abs(v.dot(sol.dual_cone));
  return r;
}

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Index layout of the internal cone product (free / orthant entries /
/// plain second-order cones after the rotated-cone change of basis).
struct ConeLayout {
  struct Range {
    Index start, dim;
  };
  std::vector<Range> free_ranges;
  std::vector<Range> orthant_ranges;
  std::vector<Range> socs;
  Index degree = 0;  // barrier degree: orthant entries + one per SOC
};

/// Nesterov-Todd scaling for the current (x, s) pair.
struct NTScaling {
  // Orthant part, aligned with layout.orthant_ranges concatenation.
  Vector orth_winv2;  // s_i / x_i
  struct Soc {
    double eta = 1.0;  // det(W) = eta^2
    Vector w;          // scaling point, P(w) s = x
    Vector v;          // unit-J vector with W = eta (2 v v' - J)
  };
  std::vector<Soc> socs;
  Vector lambda;  // W^{-1} x = W s  (free entries zero)
};

inline double soc_det(const Eigen::Ref<const Vector>& q) {
  return q[0] * q[0] - q.tail(q.size() - 1).squaredNorm();
}

// P(w) s = x with w = a (x + d Js), d = sqrt(det x / det s),
// a = 1 / sqrt(2 (x's + sqrt(det x det s))).
inline bool compute_scaling(const ConeLayout& lay, const Vector& x, const Vector& s, NTScaling& sc) {
  Index no = 0;
  for (const auto& r : lay.orthant_ranges) no += r.dim;
  sc.orth_winv2.resize(no);
  sc.lambda = Vector::Zero(x.size());
  Index at = 0;
  for (const auto& r : lay.orthant_ranges) {
    for (Index i = 0; i < r.dim; ++i) {
      const double xi = x[r.start + i], si = s[r.start + i];
      if (!(xi > 0.0) || !(si > 0.0)) return false;
      sc.orth_winv2[at] = si / xi;
      sc.lambda[r.start + i] = std::sqrt(xi * si);
      ++at;
    }
  }
  sc.socs.resize(lay.socs.size());
  for (size_t k = 0; k < lay.socs.size(); ++k) {
    const auto& r = lay.socs[k];
    const auto xb = x.segment(r.start, r.dim);
    const auto sb = s.segment(r.start, r.dim);
    const double detx = soc_det(xb), dets = soc_det(sb);
    if (!(detx > 0.0) || !(dets > 0.0) || !(xb[0] > 0.0) || !(sb[0] > 0.0)) return false;
    const double d = std::sqrt(detx / dets);
    const double a = 1.0 / std::sqrt(2.0 * (xb.dot(sb) + std::sqrt(detx * dets)));
    auto& ss = sc.socs[k];
    ss.eta = std::sqrt(d);
    ss.w.resize(r.dim);
    ss.w[0] = a * (xb[0] + d * sb[0]);
    ss.w.tail(r.dim - 1) = a * (xb.tail(r.dim - 1) - d * sb.tail(r.dim - 1));
    // unit point w/eta, then its Jordan square root
    Vector wbar = ss.w / ss.eta;
    ss.v = wbar;
    ss.v[0] += 1.0;
    ss.v /= std::sqrt(2.0 * (1.0 + wbar[0]));
    // lambda = W s = eta (2 v (v's) - Js)
    const double vs = ss.v.dot(sb);
    Vector lam = 2.0 * vs * ss.v;
    lam[0] -= sb[0];
    lam.tail(r.dim - 1) += sb.tail(r.dim - 1);
    sc.lambda.segment(r.start, r.dim) = ss.eta * lam;
  }
  return true;
}

/// out = W z (free parts untouched -> zero contributions skipped).
inline void apply_W(const ConeLayout& lay, const NTScaling& sc, const Vector& z, Vector& out) {
  out.setZero();
  Index at = 0;
  for (const auto& r : lay.orthant_ranges) {
    for (Index i = 0; i < r.dim; ++i, ++at)
      out[r.start + i] = z[r.start + i] / std::sqrt(sc.orth_winv2[at]);
  }
  for (size_t k = 0; k < lay.socs.size(); ++k) {
    const auto& r = lay.socs[k];
    const auto& ss = sc.socs[k];
    const auto zb = z.segment(r.start, r.dim);
    const double vz = ss.v.dot(zb);
    Vector t = 2.0 * vz * ss.v;
    t[0] -= zb[0];
    t.tail(r.dim - 1) += zb.tail(r.dim - 1);
    out.segment(r.start, r.dim) = ss.eta * t;
  }
}

/// out = W^{-1} z, using W^{-1} = eta^{-1} (2 (Jv)(Jv)' - J).
inline void apply_Winv(const ConeLayout& lay, const NTScaling& sc, const Vector& z, Vector& out) {
  out.setZero();
  Index at = 0;
  for (const auto& r : lay.orthant_ranges) {
    for (Index i = 0; i < r.dim; ++i, ++at)
      out[r.start + i] = z[r.start + i] * std::sqrt(sc.orth_winv2[at]);
  }
  for (size_t k = 0; k < lay.socs.size(); ++k) {
    const auto& r = lay.socs[k];
    const auto& ss = sc.socs[k];
    const auto zb = z.segment(r.start, r.dim);
    // (Jv)'z = v0 z0 - vbar'zbar
    const double jvz = ss.v[0] * zb[0] - ss.v.tail(r.dim - 1).dot(zb.tail(r.dim - 1));
    Vector t(r.dim);
    t[0] = 2.0 * jvz * ss.v[0] - zb[0];
    t.tail(r.dim - 1) = -2.0 * jvz * ss.v.tail(r.dim - 1) + zb.tail(r.dim - 1);
    out.segment(r.start, r.dim) = t / ss.eta;
  }
}

/// Jordan product u = a o b on the cone part (free entries left zero).
inline void jordan_product(const ConeLayout& lay, const Vector& a, const Vector& b, Vector& out) {
  out.setZero();
  for (const auto& r : lay.orthant_ranges)
    out.segment(r.start, r.dim) =
        a.segment(r.start, r.dim).cwiseProduct(b.segment(r.start, r.dim));
  for (const auto& r : lay.socs) {
    const auto ab = a.segment(r.start, r.dim);
    const auto bb = b.segment(r.start, r.dim);
    out[r.start] = ab.dot(bb);
    out.segment(r.start + 1, r.dim - 1) =
        ab[0] * bb.tail(r.dim - 1) + bb[0] * ab.tail(r.dim - 1);
  }
}

/// Jordan division: solve lambda o u = d.
inline void jordan_divide(const ConeLayout& lay, const Vector& lambda, const Vector& d, Vector& out) {
  out.setZero();
  for (const auto& r : lay.orthant_ranges)
    out.segment(r.start, r.dim) =
        d.segment(r.start, r.dim).cwiseQuotient(lambda.segment(r.start, r.dim));
  for (const auto& r : lay.socs) {
    const auto lb = lambda.segment(r.start, r.dim);
    const auto db = d.segment(r.start, r.dim);
    const double det = soc_det(lb);
    const double u0 = (lb[0] * db[0] - lb.tail(r.dim - 1).dot(db.tail(r.dim - 1))) / det;
    out[r.start] = u0;
    out.segment(r.start + 1, r.dim - 1) = (db.tail(r.dim - 1) - u0 * lb.tail(r.dim - 1)) / lb[0];
  }
}

/// Identity element of the cone product (free entries zero).
inline Vector jordan_identity(const ConeLayout& lay, Index n) {
  Vector e = Vector::Zero(n);
  for (const auto& r : lay.orthant_ranges) e.segment(r.start, r.dim).setOnes();
  for (const auto& r : lay.socs) e[r.start] = 1.0;
  return e;
}

/// Largest alpha with q + alpha dq still in the cone product; kInf when
/// the whole ray stays inside.
inline double max_step(const ConeLayout& lay, const Vector& q, const Vector& dq) {
  double amax = kInf;
  for (const auto& r : lay.orthant_ranges)
    for (Index i = 0; i < r.dim; ++i)
      if (dq[r.start + i] < 0.0) amax = std::min(amax, -q[r.start + i] / dq[r.start + i]);
  for (const auto& r : lay.socs) {
    const auto qb = q.segment(r.start, r.dim);
    const auto db = dq.segment(r.start, r.dim);
    // f(a) = c0 a^2 + 2 c1 a + c2 >= 0 with f = det(q + a dq)
    const double c2 = soc_det(qb);
    const double c1 = qb[0] * db[0] - qb.tail(r.dim - 1).dot(db.tail(r.dim - 1));
    const double c0 = soc_det(db);
    double root = kInf;
    if (std::abs(c0) < 1e-300) {
      if (c1 < 0.0) root = -c2 / (2.0 * c1);
    } else {
      const double disc = c1 * c1 - c0 * c2;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        // roots of c0 a^2 + 2 c1 a + c2
        const double r1 = (-c1 - sq) / c0;
        const double r2 = (-c1 + sq) / c0;
        if (r1 > 0.0) root = std::min(root, r1);
        if (r2 > 0.0) root = std::min(root, r2);
      }
    }
    if (db[0] < 0.0) root = std::min(root, -qb[0] / db[0]);
    amax = std::min(amax, root);
  }
  return amax;
}

inline bool strictly_interior(const ConeLayout& lay, const Vector& q) {
  for (const auto& r : lay.orthant_ranges)
    if (!(q.segment(r.start, r.dim).minCoeff() > 0.0)) return false;
  for (const auto& r : lay.socs) {
    const auto qb = q.segment(r.start, r.dim);
    if (!(qb[0] > 0.0) || !(soc_det(qb) > 0.0)) return false;
  }
  return true;
}

/// Change of basis between the external layout (rotated cones) and the
/// internal one (plain second-order cones). v_ext = M u_int, and dual
/// slacks map through Minv' (s_ext = Minv' s_int).
struct BasisMaps {
  SparseMatrix M;      // internal -> external (primal)
  SparseMatrix MinvT;  // internal dual slack -> external dual slack
  ConeLayout layout;
};

inline BasisMaps build_basis(const ConicProgram& p) {
  BasisMaps bm;
  const Index n = p.num_vars();
  const double s2 = std::sqrt(2.0) / 2.0;  // 1/sqrt(2)
  std::vector<Triplet> tm, ti;
  Index at = 0;
  for (const auto& b : p.blocks) {
    switch (b.kind) {
      case BlockKind::Free:
        bm.layout.free_ranges.push_back({at, b.dim});
        for (Index i = 0; i < b.dim; ++i) {
          tm.emplace_back(static_cast<int>(at + i), static_cast<int>(at + i), 1.0);
          ti.emplace_back(static_cast<int>(at + i), static_cast<int>(at + i), 1.0);
        }
        break;
      case BlockKind::Orthant:
        bm.layout.orthant_ranges.push_back({at, b.dim});
        bm.layout.degree += b.dim;
        for (Index i = 0; i < b.dim; ++i) {
          tm.emplace_back(static_cast<int>(at + i), static_cast<int>(at + i), 1.0);
          ti.emplace_back(static_cast<int>(at + i), static_cast<int>(at + i), 1.0);
        }
        break;
      case BlockKind::RotatedSoc: {
        bm.layout.socs.push_back({at, b.dim});
        bm.layout.degree += 1;
        // external (x_0..x_{d-3}, y, z) at columns at..at+d-1
        // internal (u_0, u_1, u_2..u_{d-1}) at the same columns
        const Index d = b.dim;
        const Index ey = at + d - 2, ez = at + d - 1;
        const Index u0 = at, u1 = at + 1;
        // v_y = (u0 + u1)/sqrt2 ; v_z = (u0 - u1)/sqrt2 ; v_xi = u_{2+i}/sqrt2
        tm.emplace_back(static_cast<int>(ey), static_cast<int>(u0), s2);
        tm.emplace_back(static_cast<int>(ey), static_cast<int>(u1), s2);
        tm.emplace_back(static_cast<int>(ez), static_cast<int>(u0), s2);
        tm.emplace_back(static_cast<int>(ez), static_cast<int>(u1), -s2);
        for (Index i = 0; i < d - 2; ++i)
          tm.emplace_back(static_cast<int>(at + i), static_cast<int>(u0 + 2 + i), s2);
        // s_ext = Minv' s_int: s_ext_y = (sig0 + sig1)/sqrt2, s_ext_z = (sig0 - sig1)/sqrt2,
        // s_ext_xi = sqrt2 sig_{2+i}
        ti.emplace_back(static_cast<int>(ey), static_cast<int>(u0), s2);
        ti.emplace_back(static_cast<int>(ey), static_cast<int>(u1), s2);
        ti.emplace_back(static_cast<int>(ez), static_cast<int>(u0), s2);
        ti.emplace_back(static_cast<int>(ez), static_cast<int>(u1), -s2);
        for (Index i = 0; i < d - 2; ++i)
          ti.emplace_back(static_cast<int>(at + i), static_cast<int>(u0 + 2 + i), std::sqrt(2.0));
        break;
      }
    }
    at += b.dim;
  }
  bm.M.resize(n, n);
  bm.M.setFromTriplets(tm.begin(), tm.end());
  bm.MinvT.resize(n, n);
  bm.MinvT.setFromTriplets(ti.begin(), ti.end());
  return bm;
}

/// Homogeneous self-dual interior-point solver on the internal form
///   min c'x  s.t.  A x = b,  x in K.
/// Mehrotra predictor-corrector with NT scaling; the KKT system
/// [-W^{-2}, A'; A, 0] is factorized as a regularized quasi-definite
/// LDL' with one step of iterative refinement per solve.
class HsdSolver {
 public:
  HsdSolver(SparseMatrix A, Vector b, Vector c, ConeLayout layout, SolverConfig cfg)
      : A_(std::move(A)), b_(std::move(b)), c_(std::move(c)), lay_(std::move(layout)), cfg_(cfg) {
    n_ = c_.size();
    p_ = b_.size();
    At_ = A_.transpose();
    normb_ = 1.0 + b_.norm();
    normc_ = 1.0 + c_.norm();
    double amax = 0.0;
    for (Index k = 0; k < A_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(A_, k); it; ++it) amax = std::max(amax, std::abs(it.value()));
    reg_ = 1e-10 * (1.0 + amax);
  }

  ConicSolution solve() {
    ConicSolution sol;
    init_point();
    const double mu0 = mu();
    Vector dx_aff(n_), dy_aff(p_), ds_aff(n_);
    double dtau_aff = 0, dkappa_aff = 0;
    Vector dx(n_), dy(p_), ds(n_);
    double dtau = 0, dkappa = 0;
    Vector rx(n_), ry(p_);
    Vector e = jordan_identity(lay_, n_);
    Vector lolam(n_), corr(n_), d_s(n_), tmp(n_), tmp2(n_);

    for (int iter = 0; iter <= cfg_.max_iterations; ++iter) {
      sol.iterations = iter;
      // residuals of the self-dual system
      rx = At_ * y_ + s_ - c_ * tau_;
      ry = A_ * x_ - b_ * tau_;
      const double rt = kappa_ + c_.dot(x_) - b_.dot(y_);

      // convergence of the de-homogenized iterate
      const double pres = (A_ * x_ / tau_ - b_).norm() / normb_;
      const double dres = (At_ * y_ / tau_ + s_ / tau_ - c_).norm() / normc_;
      const double pcost = c_.dot(x_) / tau_;
      const double dcost = b_.dot(y_) / tau_;
      const double agap = std::abs(pcost - dcost);
      const double rgap = agap / (1.0 + std::max(std::abs(pcost), std::abs(dcost)));
      if (pres <= cfg_.feasibility_tolerance && dres <= cfg_.feasibility_tolerance &&
          (agap <= cfg_.gap_tolerance || rgap <= cfg_.gap_tolerance)) {
        finish(sol, SolveStatus::Optimal);
        return sol;
      }
      // infeasibility certificates (Farkas rays of the embedding)
      const double by = b_.dot(y_), cx = c_.dot(x_);
      if (mu() <= 1e-4 * mu0) {
        if (by > 0.0 && (At_ * y_ + s_).norm() / normc_ <= cfg_.feasibility_tolerance * by) {
          sol.dual_eq = y_ / by;
          sol.dual_cone = s_ / by;
          sol.primal = Vector::Zero(n_);
          sol.status = SolveStatus::PrimalInfeasible;
          sol.gap = agap;
          sol.primal_residual = pres;
          sol.dual_residual = dres;
          return sol;
        }
        if (cx < 0.0 && (A_ * x_).norm() / normb_ <= cfg_.feasibility_tolerance * (-cx)) {
          sol.primal = x_ / (-cx);
          sol.dual_eq = Vector::Zero(p_);
          sol.dual_cone = Vector::Zero(n_);
          sol.status = SolveStatus::DualInfeasible;
          sol.gap = agap;
          sol.primal_residual = pres;
          sol.dual_residual = dres;
          return sol;
        }
      }
      if (iter == cfg_.max_iterations) break;

      if (!compute_scaling(lay_, x_, s_, sc_) || !factorize()) {
        finish(sol, SolveStatus::NumericalFailure);
        return sol;
      }
      // first solve: K [x1;y1] = [c; b]
      if (!solve_kkt(c_, b_, x1_, y1_)) {
        finish(sol, SolveStatus::NumericalFailure);
        return sol;
      }
      const double denom_base = c_.dot(x1_) - b_.dot(y1_) - kappa_ / tau_;

      jordan_product(lay_, sc_.lambda, sc_.lambda, lolam);
      const double m = mu();

      // affine direction
      d_s = -lolam;
      double d_k = -tau_ * kappa_;
      if (!direction(rx, ry, rt, d_s, d_k, denom_base, -1.0, dx_aff, dy_aff, ds_aff, dtau_aff,
                     dkappa_aff)) {
        finish(sol, SolveStatus::NumericalFailure);
        return sol;
      }
      double alpha_aff = std::min({1.0, max_step(lay_, x_, dx_aff), max_step(lay_, s_, ds_aff),
                                   dtau_aff < 0 ? -tau_ / dtau_aff : kInf,
                                   dkappa_aff < 0 ? -kappa_ / dkappa_aff : kInf});
      double sigma = std::pow(1.0 - alpha_aff, 3);
      sigma = std::clamp(sigma, 1e-8, 0.9999);

      // combined direction with Mehrotra correction
      apply_Winv(lay_, sc_, dx_aff, tmp);
      apply_W(lay_, sc_, ds_aff, tmp2);
      jordan_product(lay_, tmp, tmp2, corr);
      d_s = sigma * m * e - lolam - corr;
      d_k = sigma * m - tau_ * kappa_ - dtau_aff * dkappa_aff;
      if (!direction(rx, ry, rt, d_s, d_k, denom_base, -(1.0 - sigma), dx, dy, ds, dtau, dkappa)) {
        finish(sol, SolveStatus::NumericalFailure);
        return sol;
      }
      double alpha = cfg_.step_fraction *
                     std::min({max_step(lay_, x_, dx), max_step(lay_, s_, ds),
                               dtau < 0 ? -tau_ / dtau : kInf, dkappa < 0 ? -kappa_ / dkappa : kInf});
      alpha = std::min(alpha, 1.0);
      // keep the iterate strictly interior under roundoff
      int backtracks = 0;
      while (backtracks < 30) {
        Vector xn = x_ + alpha * dx, sn = s_ + alpha * ds;
        const double tn = tau_ + alpha * dtau, kn = kappa_ + alpha * dkappa;
        if (tn > 0.0 && kn > 0.0 && strictly_interior(lay_, xn) && strictly_interior(lay_, sn)) {
          x_ = std::move(xn);
          s_ = std::move(sn);
          y_ += alpha * dy;
          tau_ = tn;
          kappa_ = kn;
          break;
        }
        alpha *= 0.5;
        ++backtracks;
      }
      if (backtracks >= 30 || alpha < 1e-13) {
        finish(sol, SolveStatus::NumericalFailure);
        return sol;
      }
    }
    finish(sol, SolveStatus::MaxIterations);
    return sol;
  }

 private:
  void init_point() {
    x_ = Vector::Zero(n_);
    s_ = Vector::Zero(n_);
    for (const auto& r : lay_.orthant_ranges) {
      x_.segment(r.start, r.dim).setOnes();
      s_.segment(r.start, r.dim).setOnes();
    }
    // image of the external unit point (x = 0, y = z = 1)
    for (const auto& r : lay_.socs) {
      x_[r.start] = std::sqrt(2.0);
      s_[r.start] = std::sqrt(2.0);
    }
    y_ = Vector::Zero(p_);
    tau_ = 1.0;
    kappa_ = 1.0;
  }

  double mu() const { return (x_.dot(s_) + tau_ * kappa_) / static_cast<double>(lay_.degree + 1); }

  void finish(ConicSolution& sol, SolveStatus st) {
    sol.status = st;
    sol.primal = x_ / tau_;
    sol.dual_eq = y_ / tau_;
    sol.dual_cone = s_ / tau_;
    sol.objective = c_.dot(sol.primal);
    sol.gap = std::abs(sol.objective - b_.dot(sol.dual_eq));
    sol.primal_residual = (A_ * sol.primal - b_).norm() / normb_;
    sol.dual_residual = (At_ * sol.dual_eq + sol.dual_cone - c_).norm() / normc_;
  }

  /// Assembles and factorizes [-W^{-2}-reg, A'; A, +reg], lower triangle.
  bool factorize() {
    for (double reg = reg_; reg <= reg_ * 1e8; reg *= 100.0) {
      std::vector<Triplet> t;
      t.reserve(static_cast<size_t>(A_.nonZeros() + n_ + p_ + 32));
      for (const auto& r : lay_.free_ranges)
        for (Index i = 0; i < r.dim; ++i)
          t.emplace_back(static_cast<int>(r.start + i), static_cast<int>(r.start + i), -reg);
      Index at = 0;
      for (const auto& r : lay_.orthant_ranges)
        for (Index i = 0; i < r.dim; ++i, ++at)
          t.emplace_back(static_cast<int>(r.start + i), static_cast<int>(r.start + i),
                         -sc_.orth_winv2[at] - reg);
      for (size_t k = 0; k < lay_.socs.size(); ++k) {
        const auto& r = lay_.socs[k];
        const auto& ss = sc_.socs[k];
        // W^{-2} = (2/eta^4) (Jw)(Jw)' - (1/eta^2) J
        const double e2 = ss.eta * ss.eta;
        Vector jw = ss.w;
        jw.tail(r.dim - 1) *= -1.0;
        for (Index j = 0; j < r.dim; ++j) {
          for (Index i = j; i < r.dim; ++i) {
            double val = -2.0 / (e2 * e2) * jw[i] * jw[j];
            if (i == j) val += (i == 0 ? 1.0 : -1.0) / e2 - reg;
            t.emplace_back(static_cast<int>(r.start + i), static_cast<int>(r.start + j), val);
          }
        }
      }
      for (Index k = 0; k < A_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(A_, k); it; ++it)
          t.emplace_back(static_cast<int>(n_ + it.row()), static_cast<int>(it.col()), it.value());
      for (Index i = 0; i < p_; ++i)
        t.emplace_back(static_cast<int>(n_ + i), static_cast<int>(n_ + i), reg);
      kkt_.resize(n_ + p_, n_ + p_);
      kkt_.setFromTriplets(t.begin(), t.end());
      if (!analyzed_) {
        ldlt_.analyzePattern(kkt_);
        analyzed_ = true;
      }
      ldlt_.factorize(kkt_);
      if (ldlt_.info() == Eigen::Success) {
        reg_used_ = reg;
        return true;
      }
      analyzed_ = false;  // pattern may differ after pruning exact zeros
    }
    return false;
  }

  /// Solves [-W^{-2}, A'; A, 0] [ox; oy] = [r1; r2], refining against
  /// the unregularized matrix until the backward error is negligible.
  bool solve_kkt(const Vector& r1, const Vector& r2, Vector& ox, Vector& oy) {
    Vector rhs(n_ + p_);
    rhs.head(n_) = r1;
    rhs.tail(p_) = r2;
    Vector sol = ldlt_.solve(rhs);
    if (!sol.allFinite()) return false;
    const double rhs_scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    for (int pass = 0; pass < 3; ++pass) {
      // residual w.r.t. the unregularized KKT matrix
      Vector res = rhs - kkt_.selfadjointView<Eigen::Lower>() * sol;
      res.head(n_) -= reg_used_ * sol.head(n_);
      res.tail(p_) += reg_used_ * sol.tail(p_);
      if (res.lpNorm<Eigen::Infinity>() <= 1e-14 * rhs_scale) break;
      sol += ldlt_.solve(res);
      if (!sol.allFinite()) return false;
    }
    ox = sol.head(n_);
    oy = sol.tail(p_);
    return true;
  }

  /// Computes a search direction for given residual scaling `rscale`
  /// (-1 for the affine direction, -(1-sigma) for the combined one) and
  /// complementarity targets d_s (scaled space) and d_k.
  bool direction(const Vector& rx, const Vector& ry, double rt, const Vector& d_s, double d_k,
                 double denom, double rscale, Vector& dx, Vector& dy, Vector& ds, double& dtau,
                 double& dkappa) {
    Vector u_s(n_), winv_us(n_), rhs1(n_);
    jordan_divide(lay_, sc_.lambda, d_s, u_s);
    apply_Winv(lay_, sc_, u_s, winv_us);
    rhs1 = rscale * rx - winv_us;
    if (!solve_kkt(rhs1, rscale * ry, x2_, y2_)) return false;
    const double d_t = rscale * rt;
    dtau = (d_t - d_k / tau_ - c_.dot(x2_) + b_.dot(y2_)) / denom;
    if (!std::isfinite(dtau)) return false;
    dx = x2_ + dtau * x1_;
    dy = y2_ + dtau * y1_;
    // ds = W^{-1}(u_s - W^{-1} dx)
    Vector winv_dx(n_);
    apply_Winv(lay_, sc_, dx, winv_dx);
    Vector t = u_s - winv_dx;
    apply_Winv(lay_, sc_, t, ds);
    dkappa = (d_k - kappa_ * dtau) / tau_;
    return true;
  }

  SparseMatrix A_, At_, kkt_;
  Vector b_, c_;
  ConeLayout lay_;
  SolverConfig cfg_;
  Index n_ = 0, p_ = 0;
  double normb_ = 1, normc_ = 1, reg_ = 1e-10, reg_used_ = 1e-10;
  Vector x_, s_, y_, x1_, y1_, x2_, y2_;
  double tau_ = 1, kappa_ = 1;
  NTScaling sc_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt_;
  bool analyzed_ = false;
};

/// Ruiz-style equilibration of the internal problem. Column scales are
/// uniform inside each SOC block so the cone is preserved.
struct Equilibration {
  Vector row_scale;  // size p
  Vector col_scale;  // size n
};

inline Equilibration equilibrate(SparseMatrix& A, Vector& b, Vector& c, const ConeLayout& lay) {
  const Index p = A.rows(), n = A.cols();
  Equilibration eq;
  eq.row_scale = Vector::Ones(p);
  eq.col_scale = Vector::Ones(n);
  for (int pass = 0; pass < 3; ++pass) {
    Vector rmax = Vector::Zero(p), cmax = Vector::Zero(n);
    for (Index k = 0; k < A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
        const double a = std::abs(it.value());
        rmax[it.row()] = std::max(rmax[it.row()], a);
        cmax[it.col()] = std::max(cmax[it.col()], a);
      }
    // uniform scale per SOC block: geometric mean of member maxima
    for (const auto& r : lay.socs) {
      double prod = 0.0;
      int cnt = 0;
      for (Index i = 0; i < r.dim; ++i)
        if (cmax[r.start + i] > 0) {
          prod += std::log(cmax[r.start + i]);
          ++cnt;
        }
      const double g = cnt > 0 ? std::exp(prod / cnt) : 1.0;
      for (Index i = 0; i < r.dim; ++i) cmax[r.start + i] = g;
    }
    Vector rs = rmax.unaryExpr([](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 1.0; });
    Vector cs = cmax.unaryExpr([](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 1.0; });
    for (Index k = 0; k < A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(A, k); it; ++it)
        it.valueRef() *= rs[it.row()] * cs[it.col()];
    eq.row_scale = eq.row_scale.cwiseProduct(rs);
    eq.col_scale = eq.col_scale.cwiseProduct(cs);
  }
  b = b.cwiseProduct(eq.row_scale);
  c = c.cwiseProduct(eq.col_scale);
  return eq;
}

}  // namespace detail

/// Solves a conic program with the primal-dual interior-point method.
///
/// Rotated-cone blocks are handled through an internal change of basis
/// to plain second-order cones; infeasible and unbounded problems are
/// detected through the homogeneous self-dual embedding and reported as
/// PrimalInfeasible / DualInfeasible with certificates.
inline ConicSolution solve_conic(const ConicProgram& p, const SolverConfig& cfg = {}) {
  p.validate();
  cfg.validate();
  detail::BasisMaps bm = detail::build_basis(p);
  SparseMatrix A = p.equality_matrix * bm.M;
  Vector c = bm.M.transpose() * p.objective;
  Vector b = p.equality_rhs;
  detail::Equilibration eq = detail::equilibrate(A, b, c, bm.layout);

  detail::HsdSolver solver(std::move(A), std::move(b), std::move(c), bm.layout, cfg);
  ConicSolution sol = solver.solve();

  // undo the equilibration, then the change of basis
  sol.primal = sol.primal.cwiseProduct(eq.col_scale);
  sol.dual_eq = sol.dual_eq.cwiseProduct(eq.row_scale);
  sol.dual_cone = sol.dual_cone.cwiseQuotient(eq.col_scale);
  sol.primal = bm.M * sol.primal;
  sol.dual_cone = bm.MinvT * sol.dual_cone;

  if (sol.status == SolveStatus::PrimalInfeasible) {
    const double by = p.equality_rhs.dot(sol.dual_eq);
    if (by > 0) {
      sol.dual_eq /= by;
      sol.dual_cone /= by;
    }
  } else if (sol.status == SolveStatus::DualInfeasible) {
    const double cx = p.objective.dot(sol.primal);
    if (cx < 0) sol.primal /= -cx;
  } else {
    sol.objective = p.objective.dot(sol.primal);
    sol.gap = std::abs(sol.objective - p.equality_rhs.dot(sol.dual_eq));
    sol.primal_residual =
        (p.equality_matrix * sol.primal - p.equality_rhs).norm() / (1.0 + p.equality_rhs.norm());
    sol.dual_residual = (p.equality_matrix.transpose() * sol.dual_eq + sol.dual_cone - p.objective).norm() /
                        (1.0 + p.objective.norm());
  }
  return sol;
}

}  // namespace contopt

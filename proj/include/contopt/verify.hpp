#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

#include "contopt/conic.hpp"
#include "contopt/solver.hpp"
#include "contopt/truss.hpp"

namespace contopt {

struct EquilibriumSolution {
  Vector u;
  Vector r;  // contact reactions, <= 0
  double compliance = std::numeric_limits<double>::quiet_NaN();  // 2f'u - u'Ku
  SolveStatus status = SolveStatus::NumericalFailure;
  bool unbounded = false;
};

/// Active-set least-squares cleanup of contact reactions: interior-point
/// multipliers are only sqrt(gap)-accurate at cone tangencies, while the
/// primal iterate is tight. Solves min ||C_A' r_A - (K u - f)|| over the
/// rows flagged active and clamps stray positive entries.
inline Vector polish_reactions(const SparseMatrix& K, const Eigen::Ref<const Vector>& f,
                               const ContactSpec& contact, const Eigen::Ref<const Vector>& u,
                               const Eigen::Ref<const Vector>& r0) {
  const Index c = contact.size();
  if (c == 0) return Vector(0);
  const double g_scale = 1.0 + contact.gaps.lpNorm<Eigen::Infinity>();
  const double f_scale = 1.0 + (f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0);
  const Vector slack = contact.gaps - contact.normal_matrix * u;
  std::vector<Index> active;
  for (Index j = 0; j < c; ++j)
    if (slack[j] <= 1e-6 * g_scale || r0[j] < -1e-7 * f_scale) active.push_back(j);
  Vector r = Vector::Zero(c);
  if (active.empty()) return r;
  Eigen::MatrixXd Ca(K.rows(), static_cast<Index>(active.size()));
  for (size_t k = 0; k < active.size(); ++k)
    Ca.col(static_cast<Index>(k)) = contact.normal_matrix.row(active[k]).transpose();
  const Vector rhs = K * u - f;
  Vector ra = Ca.colPivHouseholderQr().solve(rhs);
  for (size_t k = 0; k < active.size(); ++k) r[active[k]] = std::min(ra[static_cast<Index>(k)], 0.0);
  // keep the multiplier estimate when the cleanup does not actually help
  const double res_new = (rhs - contact.normal_matrix.transpose() * r).norm();
  const double res_old = (rhs - contact.normal_matrix.transpose() * r0).norm();
  return res_new <= res_old ? r : Vector(r0);
}

/// Displacement cleanup for duality-recovered u: enforces force balance
/// K u = f + C'r and zero slack at rows carrying reactions, in least
/// squares anchored at the recovered point.
inline Vector polish_displacements(const SparseMatrix& K, const Eigen::Ref<const Vector>& f,
                                   const ContactSpec& contact, const Eigen::Ref<const Vector>& r,
                                   const Eigen::Ref<const Vector>& u0) {
  const Index n = K.rows();
  const double f_scale = 1.0 + (f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0);
  Vector rhs = f;
  std::vector<Index> active;
  if (contact.size() > 0) {
    rhs += contact.normal_matrix.transpose() * r;
    for (Index j = 0; j < contact.size(); ++j)
      if (r[j] < -1e-7 * f_scale) active.push_back(j);
  }
  double knorm = 0.0;
  for (Index k = 0; k < K.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(K, k); it; ++it) knorm = std::max(knorm, std::abs(it.value()));
  const double eps = 1e-12 * (1.0 + knorm * knorm);
  SparseMatrix N = SparseMatrix(K.transpose()) * K;
  Vector b = K.transpose() * rhs + eps * u0;
  if (!active.empty()) {
    // C_A' C_A and C_A' g_A contributions
    Eigen::MatrixXd Ca(static_cast<Index>(active.size()), n);
    Vector ga(static_cast<Index>(active.size()));
    for (size_t k = 0; k < active.size(); ++k) {
      Ca.row(static_cast<Index>(k)) = contact.normal_matrix.row(active[k]);
      ga[static_cast<Index>(k)] = contact.gaps[active[k]];
    }
    const double w = 1.0 + knorm * knorm;
    N += (w * (Ca.transpose() * Ca)).sparseView();
    b += w * (Ca.transpose() * ga);
  }
  SparseMatrix Nr = N;
  for (Index i = 0; i < n; ++i) Nr.coeffRef(i, i) += eps;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(Nr);
  if (ldlt.info() != Eigen::Success) return u0;
  Vector u = ldlt.solve(b);
  if (!u.allFinite()) return u0;
  // accept only when the equilibrium residual does not degrade
  const double res_new = (K * u - rhs).norm();
  const double res_old = (K * u0 - rhs).norm();
  return res_new <= res_old ? u : Vector(u0);
}

/// Frictionless contact equilibrium for a FIXED design, solved as the
/// primal energy problem max { 2f'u - ||L'u||^2 | C u <= g } where
/// L L' = K. Reactions are the non-penetration multipliers (halved, the
/// energy functional carries a factor 2).
inline EquilibriumSolution solve_contact_equilibrium_factored(const SparseMatrix& Lt,
                                                              const Eigen::Ref<const Vector>& f,
                                                              const ContactSpec& contact,
                                                              const SolverConfig& cfg = {}) {
  const Index n = f.size();
  const Index k = Lt.rows();
  const Index c = contact.size();
  if (Lt.cols() != n) throw std::invalid_argument("solve_contact_equilibrium: factor shape mismatch");

  ProgramBuilder pb;
  const Index tb = pb.add_rotated_soc(k + 2);  // (yhat_1..k, t, o)
  const Index iu = pb.add_free(n);
  const Index isl = c > 0 ? pb.add_orthant(c) : -1;
  pb.set_objective(tb + k, 1.0);  // t
  for (Index i = 0; i < n; ++i)
    if (f[i] != 0.0) pb.set_objective(iu + i, -2.0 * f[i]);
  const auto lrows = rows_of(Lt);
  for (Index i = 0; i < k; ++i) {
    Index row = pb.begin_row(0.0);  // yhat_i - (L'u)_i = 0
    pb.row_entry(row, tb + i, 1.0);
    for (const auto& [col, val] : lrows[static_cast<size_t>(i)]) pb.row_entry(row, iu + col, -val);
  }
  pb.add_row({{tb + k + 1, 1.0}}, 1.0);  // o = 1
  const Index contact_row0 = pb.num_rows();
  if (c > 0) {
    const auto crows = rows_of(contact.normal_matrix);
    for (Index j = 0; j < c; ++j) {
      Index row = pb.begin_row(contact.gaps[j]);
      for (const auto& [col, val] : crows[static_cast<size_t>(j)]) pb.row_entry(row, iu + col, val);
      pb.row_entry(row, isl + j, 1.0);
    }
  }

  ConicSolution sol = solve_conic(pb.build(), cfg);
  EquilibriumSolution out;
  out.status = sol.status;
  if (sol.status == SolveStatus::DualInfeasible) {
    out.unbounded = true;
    return out;
  }
  if (sol.status != SolveStatus::Optimal) return out;
  out.u = sol.primal.segment(iu, n);
  out.r = c > 0 ? Vector(0.5 * sol.dual_eq.segment(contact_row0, c)) : Vector(0);
  out.compliance = -sol.objective;
  return out;
}

/// Equilibrium from an assembled stiffness matrix; the PSD factor is
/// taken from a dense eigendecomposition (small systems). Reactions are
/// cleaned up by active-set least squares against the primal u.
inline EquilibriumSolution solve_contact_equilibrium(const SparseMatrix& K,
                                                     const Eigen::Ref<const Vector>& f,
                                                     const ContactSpec& contact,
                                                     const SolverConfig& cfg = {}) {
  const Index n = f.size();
  if (K.rows() != n || K.cols() != n) throw std::invalid_argument("solve_contact_equilibrium: K shape mismatch");
  Eigen::MatrixXd Kd(K);
  Kd = 0.5 * (Kd + Kd.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Kd);
  const double lmax = n > 0 ? std::max(0.0, eig.eigenvalues().maxCoeff()) : 0.0;
  const double cut = 1e-12 * std::max(1.0, lmax);
  std::vector<Index> keep;
  for (Index i = 0; i < n; ++i)
    if (eig.eigenvalues()[i] > cut) keep.push_back(i);
  // a zero row keeps the cone well-formed when K has rank 0
  Eigen::MatrixXd Ltd = Eigen::MatrixXd::Zero(std::max<Index>(1, static_cast<Index>(keep.size())), n);
  for (size_t i = 0; i < keep.size(); ++i)
    Ltd.row(static_cast<Index>(i)) =
        std::sqrt(eig.eigenvalues()[keep[i]]) * eig.eigenvectors().col(keep[i]).transpose();
  EquilibriumSolution out = solve_contact_equilibrium_factored(Ltd.sparseView(), f, contact, cfg);
  if (out.status == SolveStatus::Optimal) {
    if (contact.size() > 0) out.r = polish_reactions(K, f, contact, out.u, out.r);
    out.compliance = 2.0 * f.dot(out.u) - out.u.dot(K * out.u);
  }
  return out;
}

struct AuditTolerances {
  double penetration = 0.0;      // 0 means derive from scales below
  double adhesion = 0.0;
  double complementarity = 0.0;
  double force_balance = 0.0;
  double active_set = 0.0;
  double base = 1e-6;

  static AuditTolerances scaled(double base, const Eigen::Ref<const Vector>& f,
                                const Eigen::Ref<const Vector>& g) {
    const double sf = 1.0 + (f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0);
    const double sg = 1.0 + (g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0);
    AuditTolerances t;
    t.base = base;
    t.penetration = base * sg;
    t.adhesion = base * sf;
    t.complementarity = base * sf * sg;
    t.force_balance = base * sf;
    t.active_set = 10.0 * base * sg;
    return t;
  }
};

/// Outcome of the independent certification of an optimizer output.
/// `u`/`r` hold the re-solved equilibrium; the four residuals are
/// evaluated on the audited output itself.
struct EquilibriumReport {
  Vector u;
  Vector r;
  double max_penetration = 0.0;
  double max_adhesion = 0.0;
  double complementarity_residual = 0.0;
  double force_balance_residual = 0.0;
  double audited_compliance = std::numeric_limits<double>::quiet_NaN();
  double objective_rel_err = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> active_set;  // contact rows in contact at the re-solved equilibrium
  bool equilibrium_ok = false;
  bool pass = false;
  AuditTolerances tolerances;
};

/// Audits an optimizer output against a recomputed stiffness matrix:
/// re-solves the equilibrium, then checks non-penetration, non-adhesion,
/// complementarity and force balance of the audited (u, r).
inline EquilibriumReport audit(const SparseMatrix& K, const Eigen::Ref<const Vector>& f,
                               const ContactSpec& contact, const Eigen::Ref<const Vector>& u_out,
                               const Eigen::Ref<const Vector>& r_out, double objective_out,
                               AuditTolerances tol = {}, const SolverConfig& cfg = {}) {
  if (u_out.size() != K.rows() || r_out.size() != contact.size())
    throw std::invalid_argument("audit: dimension mismatch");
  if (tol.penetration == 0.0) tol = AuditTolerances::scaled(tol.base, f, contact.gaps);

  EquilibriumReport rep;
  rep.tolerances = tol;

  if (contact.size() > 0) {
    const Vector slack = contact.gaps - contact.normal_matrix * u_out;
    rep.max_penetration = std::max(0.0, -slack.minCoeff());
    rep.max_adhesion = std::max(0.0, r_out.maxCoeff());
    rep.complementarity_residual = slack.cwiseProduct(r_out).lpNorm<Eigen::Infinity>();
  }
  Vector fb = K * u_out - f;
  if (contact.size() > 0) fb -= contact.normal_matrix.transpose() * r_out;
  rep.force_balance_residual = fb.norm();

  EquilibriumSolution eq = solve_contact_equilibrium(K, f, contact, cfg);
  rep.equilibrium_ok = eq.status == SolveStatus::Optimal;
  if (rep.equilibrium_ok) {
    rep.u = eq.u;
    rep.r = eq.r;
    rep.audited_compliance = eq.compliance;
    rep.objective_rel_err =
        std::abs(eq.compliance - objective_out) / (1.0 + std::abs(eq.compliance));
    if (contact.size() > 0) {
      const Vector slack = contact.gaps - contact.normal_matrix * eq.u;
      for (Index j = 0; j < contact.size(); ++j)
        if (slack[j] <= tol.active_set) rep.active_set.push_back(static_cast<int>(j));
    }
  }
  rep.pass = rep.max_penetration <= tol.penetration && rep.max_adhesion <= tol.adhesion &&
             rep.complementarity_residual <= tol.complementarity &&
             rep.force_balance_residual <= tol.force_balance;
  return rep;
}

}  // namespace contopt

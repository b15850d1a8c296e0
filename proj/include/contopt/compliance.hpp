#pragma once

#include <cmath>
#include <limits>

#include "contopt/conic.hpp"
#include "contopt/solver.hpp"
#include "contopt/truss.hpp"
#include "contopt/verify.hpp"

namespace contopt {

/// Value of a compliance evaluation. Insufficient stiffness makes the
/// supremum infinite; that case is a status, not a number.
struct ComplianceValue {
  double value = std::numeric_limits<double>::quiet_NaN();
  SolveStatus status = SolveStatus::NumericalFailure;
  bool finite = false;
  bool unbounded = false;  // compliance is +infinity

  static ComplianceValue finite_value(double v, SolveStatus st) { return {v, st, true, false}; }
  static ComplianceValue infinite(SolveStatus st) {
    return {std::numeric_limits<double>::infinity(), st, false, true};
  }
  static ComplianceValue failed(SolveStatus st) {
    return {std::numeric_limits<double>::quiet_NaN(), st, false, false};
  }
};

/// Compliance by the defining supremum: sup { 2f'u - u'K(x)u | C u <= g },
/// solved as a conic program with one rotated cone per loaded member
/// (epigraph of the elongation energy).
inline ComplianceValue compliance_direct(const GroundStructure& gs, const ContactSpec& contact,
                                         const Eigen::Ref<const Vector>& f,
                                         const Eigen::Ref<const Vector>& x,
                                         const SolverConfig& cfg = {}) {
  if (x.size() != gs.num_members()) throw std::invalid_argument("compliance_direct: x size mismatch");
  if (x.size() > 0 && x.minCoeff() < 0) throw std::invalid_argument("compliance_direct: negative area");
  const Index n = gs.num_dofs();
  const Index c = contact.size();

  ProgramBuilder pb;
  std::vector<Index> triple(static_cast<size_t>(gs.num_members()), -1);
  for (int e = 0; e < gs.num_members(); ++e)
    if (x[e] > 0.0) triple[static_cast<size_t>(e)] = pb.add_rotated_soc(3);  // (chat, t, o)
  const Index iu = pb.add_free(n);
  const Index isl = c > 0 ? pb.add_orthant(c) : -1;

  for (int e = 0; e < gs.num_members(); ++e) {
    const Index tb = triple[static_cast<size_t>(e)];
    if (tb < 0) continue;
    pb.set_objective(tb + 1, 1.0);  // t_e
    const double a = std::sqrt(gs.young_modulus * x[e] / gs.members[static_cast<size_t>(e)].length);
    Index row = pb.begin_row(0.0);  // chat_e - a b_e'u = 0
    pb.row_entry(row, tb + 0, 1.0);
    for (const auto& [d, val] : gs.geometry_vector(e)) pb.row_entry(row, iu + d, -a * val);
    pb.add_row({{tb + 2, 1.0}}, 1.0);  // o_e = 1
  }
  for (Index i = 0; i < n; ++i)
    if (f[i] != 0.0) pb.set_objective(iu + i, -2.0 * f[i]);
  if (c > 0) {
    const auto crows = rows_of(contact.normal_matrix);
    for (Index j = 0; j < c; ++j) {
      Index row = pb.begin_row(contact.gaps[j]);
      for (const auto& [col, val] : crows[static_cast<size_t>(j)]) pb.row_entry(row, iu + col, val);
      pb.row_entry(row, isl + j, 1.0);
    }
  }

  ConicSolution sol = solve_conic(pb.build(), cfg);
  if (sol.status == SolveStatus::Optimal) return ComplianceValue::finite_value(-sol.objective, sol.status);
  if (sol.status == SolveStatus::DualInfeasible) return ComplianceValue::infinite(sol.status);
  return ComplianceValue::failed(sol.status);
}

/// Compliance by the dual problem:
///   min sum w_e - 2 g'r  s.t.  w_e x_e >= (l_e/E) q_e^2,
///   sum q_e b_e = f + C'r,  r <= 0;
/// +infinity when the force balance is infeasible.
inline ComplianceValue compliance_dual(const GroundStructure& gs, const ContactSpec& contact,
                                       const Eigen::Ref<const Vector>& f,
                                       const Eigen::Ref<const Vector>& x,
                                       const SolverConfig& cfg = {}) {
  if (x.size() != gs.num_members()) throw std::invalid_argument("compliance_dual: x size mismatch");
  if (x.size() > 0 && x.minCoeff() < 0) throw std::invalid_argument("compliance_dual: negative area");
  const Index n = gs.num_dofs();
  const Index c = contact.size();

  ProgramBuilder pb;
  std::vector<Index> triple(static_cast<size_t>(gs.num_members()), -1);
  for (int e = 0; e < gs.num_members(); ++e)
    if (x[e] > 0.0) triple[static_cast<size_t>(e)] = pb.add_rotated_soc(3);  // (qhat, w, xpin)
  const Index ir = c > 0 ? pb.add_orthant(c) : -1;  // rtilde = -r

  std::vector<Index> fb_rows(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) fb_rows[static_cast<size_t>(i)] = pb.begin_row(f[i]);
  for (int e = 0; e < gs.num_members(); ++e) {
    const Index tb = triple[static_cast<size_t>(e)];
    if (tb < 0) continue;
    pb.set_objective(tb + 1, 1.0);  // w_e
    const double s = std::sqrt(gs.young_modulus / gs.members[static_cast<size_t>(e)].length);
    for (const auto& [d, val] : gs.geometry_vector(e))
      pb.row_entry(fb_rows[static_cast<size_t>(d)], tb + 0, s * val);
    pb.add_row({{tb + 2, 1.0}}, x[e]);  // pin the cone's z to the given area
  }
  if (c > 0) {
    for (Index k = 0; k < contact.normal_matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(contact.normal_matrix, k); it; ++it)
        pb.row_entry(fb_rows[static_cast<size_t>(it.col())], ir + it.row(), it.value());
    for (Index j = 0; j < c; ++j) pb.set_objective(ir + j, 2.0 * contact.gaps[j]);
  }

  ConicSolution sol = solve_conic(pb.build(), cfg);
  if (sol.status == SolveStatus::Optimal) return ComplianceValue::finite_value(sol.objective, sol.status);
  if (sol.status == SolveStatus::PrimalInfeasible) return ComplianceValue::infinite(sol.status);
  return ComplianceValue::failed(sol.status);
}

/// The truss topology SOCP (design variables kept explicit): member
/// triples (sqrt(l_e/E) q_e, w_e, x_e) in K^3, force balance, r <= 0
/// and the volume budget l'x <= v.
struct TopologySocp {
  ConicProgram program;
  Index rtilde_start = -1;  // c entries, rtilde = -r
  Index slack_vol = -1;
  Index row_fb_start = 0;  // n force-balance rows
  Index row_vol = -1;
  bool bilateral = false;
  Vector force_scale;  // per member: q_e = force_scale[e] * qhat_e

  Index member_block(int e) const { return 3 * e; }
};

inline TopologySocp build_topology_socp(const GroundStructure& gs, const ContactSpec& contact,
                                        const Eigen::Ref<const Vector>& f, double volume_bound,
                                        bool bilateral = false) {
  if (!(volume_bound > 0)) throw std::invalid_argument("build_topology_socp: volume bound must be positive");
  const Index n = gs.num_dofs();
  const Index c = contact.size();
  const int m = gs.num_members();

  TopologySocp out;
  out.bilateral = bilateral;
  out.force_scale.resize(m);

  ProgramBuilder pb;
  for (int e = 0; e < m; ++e) {
    pb.add_rotated_soc(3);  // (qhat_e, w_e, x_e)
    out.force_scale[e] = std::sqrt(gs.young_modulus / gs.members[static_cast<size_t>(e)].length);
  }
  out.rtilde_start = c > 0 ? (bilateral ? pb.add_free(c) : pb.add_orthant(c)) : -1;
  out.slack_vol = pb.add_orthant(1);

  out.row_fb_start = pb.num_rows();
  std::vector<Index> fb_rows(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) fb_rows[static_cast<size_t>(i)] = pb.begin_row(f[i]);
  for (int e = 0; e < m; ++e) {
    const Index tb = out.member_block(e);
    pb.set_objective(tb + 1, 1.0);
    for (const auto& [d, val] : gs.geometry_vector(e))
      pb.row_entry(fb_rows[static_cast<size_t>(d)], tb + 0, out.force_scale[e] * val);
  }
  if (c > 0) {
    for (Index k = 0; k < contact.normal_matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(contact.normal_matrix, k); it; ++it)
        pb.row_entry(fb_rows[static_cast<size_t>(it.col())], out.rtilde_start + it.row(), it.value());
    for (Index j = 0; j < c; ++j) pb.set_objective(out.rtilde_start + j, 2.0 * contact.gaps[j]);
  }
  out.row_vol = pb.begin_row(volume_bound);
  for (int e = 0; e < m; ++e)
    pb.row_entry(out.row_vol, out.member_block(e) + 2, gs.members[static_cast<size_t>(e)].length);
  pb.row_entry(out.row_vol, out.slack_vol, 1.0);

  out.program = pb.build();
  return out;
}

/// Optimal truss design and its recovered state.
struct TrussDesignResult {
  Vector x;  // member areas
  Vector w;  // member energies
  Vector q;  // member axial forces
  Vector r;  // contact reactions (<= 0)
  Vector u;  // recovered nodal displacements
  double objective = std::numeric_limits<double>::quiet_NaN();
  double volume_bound = 0.0;
  SolveStatus status = SolveStatus::NumericalFailure;
  int iterations = 0;
  CertifyReport certification;
};

/// Extracts the design from a solved topology SOCP (or a solved
/// extension of it that preserves the base layout). Displacements are
/// the force-balance multipliers halved (the Lagrangian carries the
/// factor 2 on the compatibility terms).
inline TrussDesignResult extract_design(const GroundStructure& gs, const TopologySocp& model,
                                        const ConicProgram& solved_program, const ConicSolution& sol,
                                        double volume_bound) {
  const int m = gs.num_members();
  const Index n = gs.num_dofs();
  const Index c = model.rtilde_start >= 0
                      ? (model.slack_vol - model.rtilde_start)
                      : 0;
  TrussDesignResult res;
  res.status = sol.status;
  res.iterations = sol.iterations;
  res.volume_bound = volume_bound;
  if (sol.status != SolveStatus::Optimal && sol.status != SolveStatus::MaxIterations) return res;
  res.objective = sol.objective;
  res.x.resize(m);
  res.w.resize(m);
  res.q.resize(m);
  for (int e = 0; e < m; ++e) {
    const Index tb = model.member_block(e);
    res.q[e] = model.force_scale[e] * sol.primal[tb + 0];
    res.w[e] = sol.primal[tb + 1];
    res.x[e] = sol.primal[tb + 2];
  }
  res.r = c > 0 ? Vector(-sol.primal.segment(model.rtilde_start, c)) : Vector(0);
  res.u = 0.5 * sol.dual_eq.segment(model.row_fb_start, n);
  res.certification = certify(solved_program, sol);
  return res;
}

/// extract_design plus a least-squares cleanup of the recovered u
/// against the assembled stiffness of the optimal design (the duality
/// multipliers are only sqrt(gap)-accurate at cone tangencies).
inline TrussDesignResult extract_design_polished(const GroundStructure& gs, const TopologySocp& model,
                                                 const ConicProgram& solved_program,
                                                 const ConicSolution& sol, const ContactSpec& contact,
                                                 const Eigen::Ref<const Vector>& f, double volume_bound) {
  TrussDesignResult res = extract_design(gs, model, solved_program, sol, volume_bound);
  if (res.status == SolveStatus::Optimal && !model.bilateral) {
    SparseMatrix K = assemble_stiffness(gs, res.x.cwiseMax(0.0));
    res.u = polish_displacements(K, f, contact, res.r, res.u);
  }
  return res;
}

/// Solves the truss topology SOCP (problem with explicit areas) and
/// recovers (x, w, q, r, u).
inline TrussDesignResult optimize_truss(const GroundStructure& gs, const ContactSpec& contact,
                                        const Eigen::Ref<const Vector>& f, double volume_bound,
                                        const SolverConfig& cfg = {}, bool bilateral = false) {
  TopologySocp model = build_topology_socp(gs, contact, f, volume_bound, bilateral);
  ConicSolution sol = solve_conic(model.program, cfg);
  return extract_design_polished(gs, model, model.program, sol, contact, f, volume_bound);
}

/// Result of the area-eliminated formulations.
struct QpFormulationResult {
  Vector u;
  Vector c;  // member elongations b_e'u
  double alpha = std::numeric_limits<double>::quiet_NaN();  // variant 13
  double beta = std::numeric_limits<double>::quiet_NaN();   // variant 14
  double objective = std::numeric_limits<double>::quiet_NaN();
  SolveStatus status = SolveStatus::NumericalFailure;
};

/// Builds and solves the vertex-eliminated formulation.
///   variant 13: max 2f'u - alpha,  alpha >= (E v / l_e^2) c_e^2
///   variant 14: max 2f'u - beta^2, -beta <= (sqrt(Ev)/l_e) c_e <= beta
/// both under c_e = b_e'u and C u <= g.
inline QpFormulationResult build_qp_formulation(const GroundStructure& gs, const ContactSpec& contact,
                                                const Eigen::Ref<const Vector>& f, double volume_bound,
                                                int variant, const SolverConfig& cfg = {}) {
  if (variant != 13 && variant != 14) throw std::invalid_argument("build_qp_formulation: variant must be 13 or 14");
  if (!(volume_bound > 0)) throw std::invalid_argument("build_qp_formulation: volume bound must be positive");
  const Index n = gs.num_dofs();
  const Index c = contact.size();
  const int m = gs.num_members();
  const double ev = gs.young_modulus * volume_bound;

  ProgramBuilder pb;
  QpFormulationResult res;
  Index iu = -1;

  if (variant == 13) {
    std::vector<Index> triple(static_cast<size_t>(m));
    for (int e = 0; e < m; ++e) triple[static_cast<size_t>(e)] = pb.add_rotated_soc(3);  // (chat, a_e, o_e)
    iu = pb.add_free(n);
    const Index ialpha = pb.add_free(1);
    const Index isl = c > 0 ? pb.add_orthant(c) : -1;
    pb.set_objective(ialpha, 1.0);
    for (Index i = 0; i < n; ++i)
      if (f[i] != 0.0) pb.set_objective(iu + i, -2.0 * f[i]);
    for (int e = 0; e < m; ++e) {
      const Index tb = triple[static_cast<size_t>(e)];
      const double k = std::sqrt(ev) / gs.members[static_cast<size_t>(e)].length;
      Index row = pb.begin_row(0.0);
      pb.row_entry(row, tb + 0, 1.0);
      for (const auto& [d, val] : gs.geometry_vector(e)) pb.row_entry(row, iu + d, -k * val);
      pb.add_row({{tb + 1, 1.0}, {ialpha, -1.0}}, 0.0);
      pb.add_row({{tb + 2, 1.0}}, 1.0);
    }
    if (c > 0) {
      const auto crows = rows_of(contact.normal_matrix);
      for (Index j = 0; j < c; ++j) {
        Index row = pb.begin_row(contact.gaps[j]);
        for (const auto& [col, val] : crows[static_cast<size_t>(j)]) pb.row_entry(row, iu + col, val);
        pb.row_entry(row, isl + j, 1.0);
      }
    }
    ConicSolution sol = solve_conic(pb.build(), cfg);
    res.status = sol.status;
    if (sol.status != SolveStatus::Optimal) return res;
    res.objective = -sol.objective;
    res.u = sol.primal.segment(iu, n);
    res.alpha = sol.primal[ialpha];
  } else {
    const Index tb = pb.add_rotated_soc(3);  // (bhat, t, o)
    iu = pb.add_free(n);
    const Index ibeta = pb.add_free(1);
    const Index isp = pb.add_orthant(m);
    const Index ism = pb.add_orthant(m);
    const Index isl = c > 0 ? pb.add_orthant(c) : -1;
    pb.set_objective(tb + 1, 1.0);
    for (Index i = 0; i < n; ++i)
      if (f[i] != 0.0) pb.set_objective(iu + i, -2.0 * f[i]);
    pb.add_row({{tb + 0, 1.0}, {ibeta, -1.0}}, 0.0);
    pb.add_row({{tb + 2, 1.0}}, 1.0);
    for (int e = 0; e < m; ++e) {
      const double k = std::sqrt(ev) / gs.members[static_cast<size_t>(e)].length;
      Index rp = pb.begin_row(0.0);  // k c_e - beta + sp = 0
      for (const auto& [d, val] : gs.geometry_vector(e)) pb.row_entry(rp, iu + d, k * val);
      pb.row_entry(rp, ibeta, -1.0);
      pb.row_entry(rp, isp + e, 1.0);
      Index rm = pb.begin_row(0.0);  // -k c_e - beta + sm = 0
      for (const auto& [d, val] : gs.geometry_vector(e)) pb.row_entry(rm, iu + d, -k * val);
      pb.row_entry(rm, ibeta, -1.0);
      pb.row_entry(rm, ism + e, 1.0);
    }
    if (c > 0) {
      const auto crows = rows_of(contact.normal_matrix);
      for (Index j = 0; j < c; ++j) {
        Index row = pb.begin_row(contact.gaps[j]);
        for (const auto& [col, val] : crows[static_cast<size_t>(j)]) pb.row_entry(row, iu + col, val);
        pb.row_entry(row, isl + j, 1.0);
      }
    }
    ConicSolution sol = solve_conic(pb.build(), cfg);
    res.status = sol.status;
    if (sol.status != SolveStatus::Optimal) return res;
    res.objective = -sol.objective;
    res.u = sol.primal.segment(iu, n);
    res.beta = sol.primal[tb + 0];
  }
  res.c.resize(m);
  for (int e = 0; e < m; ++e) {
    double ce = 0;
    for (const auto& [d, val] : gs.geometry_vector(e)) ce += val * res.u[d];
    res.c[e] = ce;
  }
  return res;
}

}  // namespace contopt

#pragma once

#include <cmath>
#include <condition_variable>
#include <mutex>
#include <queue>
#include <thread>

#include "contopt/compliance.hpp"
#include "contopt/conic.hpp"
#include "contopt/solver.hpp"
#include "contopt/truss.hpp"

namespace contopt {

struct MipConfig {
  double mipgap = 1e-6;
  double integrality_tolerance = 1e-6;
  long node_budget = 200000;
  int workers = 1;
  SolverConfig solver;
};

/// Topology SOCP augmented with member-existence binaries z_e and the
/// linking rows x^min z_e <= x_e <= x^max z_e, z_e <= 1. Degree and
/// crossing restrictions attach on top. Integrality of z is enforced
/// only by branching.
struct BinaryAugmentedModel {
  TopologySocp base;
  ConicProgram program;
  Index z_start = -1;
  int num_members = 0;
  double xmin = 0.0, xmax = 0.0;
  int degree_max = -1;
  std::vector<std::pair<int, int>> crossing_constrained;
};

inline BinaryAugmentedModel attach_existence_bounds(const GroundStructure& gs, const TopologySocp& model,
                                                    double xmin, double xmax) {
  if (!(xmin > 0) || xmin > xmax)
    throw std::invalid_argument("attach_existence_bounds: need 0 < xmin <= xmax");
  BinaryAugmentedModel out;
  out.base = model;
  out.num_members = gs.num_members();
  out.xmin = xmin;
  out.xmax = xmax;
  ProgramExtender ex(model.program);
  const int m = gs.num_members();
  out.z_start = ex.add_orthant(m);
  const Index s_lo = ex.add_orthant(m);
  const Index s_hi = ex.add_orthant(m);
  const Index s_ub = ex.add_orthant(m);
  for (int e = 0; e < m; ++e) {
    const Index xe = model.member_block(e) + 2;
    ex.add_row({{xe, 1.0}, {out.z_start + e, -xmin}, {s_lo + e, -1.0}}, 0.0);  // x - xmin z >= 0
    ex.add_row({{out.z_start + e, xmax}, {xe, -1.0}, {s_hi + e, -1.0}}, 0.0);  // xmax z - x >= 0
    ex.add_row({{out.z_start + e, 1.0}, {s_ub + e, 1.0}}, 1.0);                // z <= 1
  }
  out.program = ex.build();
  return out;
}

inline BinaryAugmentedModel attach_degree_limits(BinaryAugmentedModel model, const GroundStructure& gs,
                                                 int degree_max) {
  if (degree_max < 1) throw std::invalid_argument("attach_degree_limits: degree bound must be >= 1");
  ProgramExtender ex(model.program);
  const auto incidence = node_incidence(gs);
  const Index slack = ex.add_orthant(static_cast<Index>(incidence.size()));
  for (size_t nd = 0; nd < incidence.size(); ++nd) {
    Index row = ex.begin_row(static_cast<double>(degree_max));
    for (int e : incidence[nd]) ex.row_entry(row, model.z_start + e, 1.0);
    ex.row_entry(row, slack + static_cast<Index>(nd), 1.0);
  }
  model.degree_max = degree_max;
  model.program = ex.build();
  return model;
}

inline BinaryAugmentedModel attach_no_crossing(BinaryAugmentedModel model,
                                               const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.empty()) return model;
  ProgramExtender ex(model.program);
  const Index slack = ex.add_orthant(static_cast<Index>(pairs.size()));
  for (size_t k = 0; k < pairs.size(); ++k) {
    ex.add_row({{model.z_start + pairs[k].first, 1.0},
                {model.z_start + pairs[k].second, 1.0},
                {slack + static_cast<Index>(k), 1.0}},
               1.0);
  }
  model.crossing_constrained.insert(model.crossing_constrained.end(), pairs.begin(), pairs.end());
  model.program = ex.build();
  return model;
}

enum class BnBStatus : std::uint8_t { Optimal, NodeBudget, Infeasible, NumericalFailure };

struct BnBState {
  std::vector<int> incumbent_pattern;  // 0/1 per member, empty when none found
  double incumbent_objective = std::numeric_limits<double>::infinity();
  double best_bound = -std::numeric_limits<double>::infinity();
  long node_count = 0;
  long numerical_issues = 0;
  BnBStatus status = BnBStatus::Infeasible;

  double relative_gap() const {
    if (!std::isfinite(incumbent_objective)) return std::numeric_limits<double>::infinity();
    return (incumbent_objective - best_bound) / (1.0 + std::abs(incumbent_objective));
  }
};

namespace detail {

struct BnBNode {
  std::vector<std::int8_t> fixed;  // -1 unknown, 0, 1
  double bound = -std::numeric_limits<double>::infinity();
};

struct BnBNodeOrder {
  bool operator()(const BnBNode& a, const BnBNode& b) const { return a.bound > b.bound; }
};

inline ConicProgram fix_binaries(const BinaryAugmentedModel& model, const std::vector<std::int8_t>& fixed) {
  ProgramExtender ex(model.program);
  for (int e = 0; e < model.num_members; ++e)
    if (fixed[static_cast<size_t>(e)] >= 0)
      ex.add_row({{model.z_start + e, 1.0}}, static_cast<double>(fixed[static_cast<size_t>(e)]));
  return ex.build();
}

/// Checks the rounded pattern against degree and crossing restrictions.
inline bool pattern_admissible(const BinaryAugmentedModel& model, const GroundStructure& gs,
                               const std::vector<int>& pattern) {
  if (model.degree_max >= 0) {
    const auto incidence = node_incidence(gs);
    for (const auto& inc : incidence) {
      int deg = 0;
      for (int e : inc) deg += pattern[static_cast<size_t>(e)];
      if (deg > model.degree_max) return false;
    }
  }
  for (const auto& [a, b] : model.crossing_constrained)
    if (pattern[static_cast<size_t>(a)] + pattern[static_cast<size_t>(b)] > 1) return false;
  return true;
}

}  // namespace detail

/// Best-bound-first branch and bound over conic relaxations; branching
/// on the most fractional binary, ties broken by relaxation member
/// volume. Every node is solved cold.
inline std::pair<TrussDesignResult, BnBState> branch_and_bound(const BinaryAugmentedModel& model,
                                                               const GroundStructure& gs,
                                                               const ContactSpec& contact,
                                                               const Eigen::Ref<const Vector>& f,
                                                               double volume_bound,
                                                               const MipConfig& cfg = {}) {
  const int m = model.num_members;
  BnBState state;
  std::priority_queue<detail::BnBNode, std::vector<detail::BnBNode>, detail::BnBNodeOrder> open;
  open.push({std::vector<std::int8_t>(static_cast<size_t>(m), -1),
             -std::numeric_limits<double>::infinity()});
  ConicSolution best_sol;
  ConicProgram best_prog;
  bool have_best = false;

  std::mutex mu;
  std::condition_variable cv;
  int in_flight = 0;
  bool stop = false;

  auto cutoff = [&]() {
    if (!std::isfinite(state.incumbent_objective)) return std::numeric_limits<double>::infinity();
    return state.incumbent_objective - cfg.mipgap * (1.0 + std::abs(state.incumbent_objective));
  };

  auto worker = [&]() {
    std::unique_lock<std::mutex> lock(mu);
    for (;;) {
      cv.wait(lock, [&] { return stop || !open.empty() || in_flight == 0; });
      if (stop || (open.empty() && in_flight == 0)) return;
      if (open.empty()) continue;
      if (state.node_count >= cfg.node_budget) {
        stop = true;
        cv.notify_all();
        return;
      }
      detail::BnBNode node = open.top();
      open.pop();
      if (node.bound >= cutoff()) continue;  // pruned by the incumbent
      ++state.node_count;
      ++in_flight;
      lock.unlock();

      ConicProgram prog = detail::fix_binaries(model, node.fixed);
      ConicSolution sol = solve_conic(prog, cfg.solver);

      lock.lock();
      --in_flight;
      if (sol.status == SolveStatus::PrimalInfeasible) {
        cv.notify_all();
        continue;
      }
      if (sol.status != SolveStatus::Optimal) {
        ++state.numerical_issues;
        cv.notify_all();
        continue;
      }
      const double bound = sol.objective;
      if (bound >= cutoff()) {
        cv.notify_all();
        continue;
      }
      // integrality check
      int branch_var = -1;
      double best_frac = -1.0;
      for (int e = 0; e < m; ++e) {
        if (node.fixed[static_cast<size_t>(e)] >= 0) continue;
        const double z = sol.primal[model.z_start + e];
        const double frac = std::abs(z - std::round(z));
        if (frac <= cfg.integrality_tolerance) continue;
        const double score = 0.5 - std::abs(z - 0.5);
        const double vol = gs.members[static_cast<size_t>(e)].length *
                           sol.primal[model.base.member_block(e) + 2];
        const double key = score + 1e-9 * vol;
        if (branch_var < 0 || key > best_frac) {
          best_frac = key;
          branch_var = e;
        }
      }
      if (branch_var < 0) {
        // integral: candidate incumbent
        std::vector<int> pattern(static_cast<size_t>(m));
        for (int e = 0; e < m; ++e)
          pattern[static_cast<size_t>(e)] =
              node.fixed[static_cast<size_t>(e)] >= 0
                  ? node.fixed[static_cast<size_t>(e)]
                  : static_cast<int>(std::round(sol.primal[model.z_start + e]));
        if (detail::pattern_admissible(model, gs, pattern) && bound < state.incumbent_objective) {
          state.incumbent_objective = bound;
          state.incumbent_pattern = pattern;
          best_sol = sol;
          best_prog = std::move(prog);
          have_best = true;
        }
      } else {
        for (int v = 0; v <= 1; ++v) {
          detail::BnBNode child;
          child.fixed = node.fixed;
          child.fixed[static_cast<size_t>(branch_var)] = static_cast<std::int8_t>(v);
          child.bound = bound;
          open.push(std::move(child));
        }
      }
      cv.notify_all();
    }
  };

  const int nworkers = std::max(1, cfg.workers);
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nworkers));
    for (int i = 0; i < nworkers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // final bound: everything left open (budget stop) or the incumbent
  state.best_bound = state.incumbent_objective;
  while (!open.empty()) {
    state.best_bound = std::min(state.best_bound, open.top().bound);
    open.pop();
  }
  if (!have_best) {
    state.status = state.node_count >= cfg.node_budget ? BnBStatus::NodeBudget : BnBStatus::Infeasible;
    if (state.numerical_issues > 0 && state.status == BnBStatus::Infeasible)
      state.status = BnBStatus::NumericalFailure;
    return {TrussDesignResult{}, state};
  }
  state.status = stop ? BnBStatus::NodeBudget : BnBStatus::Optimal;
  TrussDesignResult res =
      extract_design_polished(gs, model.base, best_prog, best_sol, contact, f, volume_bound);
  return {res, state};
}

}  // namespace contopt

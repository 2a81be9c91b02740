#pragma once

#include <string>

#include "msopt/convex.hpp"
#include "msopt/model.hpp"

namespace msopt {

enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalFailure };

const char* status_name(SolveStatus s);

struct SolverOptions {
  double tol_kkt = 1e-7;    // scaled stationarity + feasibility residual
  double tol_gap = 1e-8;    // complementarity, scaled by 1 + |objective|
  int max_iters = 200;
  bool use_sparse = false;  // deterministic-equivalent assemblies set this
  bool enable_phase1 = true;
  double unbounded_objective = -1e12;
};

struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  Vec x;
  double objective = 0.0;
  // Sensitivities: d(opt)/d(rhs_eq) = eq_duals; ineq_duals >= 0 apply to the
  // rows normalized to >= form (d(opt)/d(rhs_ge) = ineq_duals).
  Vec eq_duals;
  Vec ineq_duals;
  int iterations = 0;
  double kkt_residual = 0.0;
  double comp_gap = 0.0;
  std::string message;

  bool optimal() const { return status == SolveStatus::Optimal; }
};

// Primal-dual interior point (Mehrotra predictor-corrector on the condensed
// KKT system). Separable convex terms contribute diagonal Hessian entries.
SolveResult solve(const ConvexProgram& prog, const SolverOptions& opts = {});

// Stage wrapper: lowers, solves, and reports duals per original row order
// (family inequality rows first, then cut rows).
SolveResult solve_stage(const StageSubproblem& sp, const SolverOptions& opts = {});

}  // namespace msopt

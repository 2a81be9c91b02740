#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msopt/convex.hpp"
#include "msopt/cuts.hpp"
#include "msopt/rng.hpp"

namespace msopt {

enum class FamilyId { EP, FP, PP };

const char* family_name(FamilyId f);
FamilyId family_from_name(const std::string& name);
int family_state_dim(FamilyId f);

// Realized distribution parameters (lambda^1..lambda^M) of one instance.
struct DistributionParams {
  std::vector<std::pair<std::string, double>> entries;

  double get(const std::string& name) const;
  Vec values() const;
  std::size_t size() const { return entries.size(); }
};

enum class RowSense { Eq, Ge, Le };

// One stage constraint row: coeffs.x (sense) rhs_base - coupling.x_prev.
// The coupling vector is the row of B_t hitting the previous state; it is
// kept explicit (not only folded) because backward-pass cut gradients and
// the deterministic equivalent both need it.
struct StageRow {
  SparseRow coeffs;  // rhs field holds rhs_base
  RowSense sense = RowSense::Eq;
  Vec coupling;      // empty means no dependence on x_prev

  double effective_rhs(std::span<const double> x_prev) const {
    double r = coeffs.rhs;
    for (std::size_t d = 0; d < coupling.size(); ++d) r -= coupling[d] * x_prev[d];
    return r;
  }
};

// One stage's convex program: linear rows, nonnegativity, separable convex
// objective terms, optionally an epigraph variable bounded by cuts.
struct StageSubproblem {
  int stage = 0;
  int num_vars = 0;
  std::vector<std::string> var_names;
  Vec linear_cost;
  std::vector<ConvexTerm> convex_terms;
  std::vector<StageRow> eq_rows;
  std::vector<StageRow> ineq_rows;  // family rows first, then cut epigraph rows
  std::vector<bool> nonneg;
  std::vector<int> state_extract;   // indices forming x_t; -1 pins a component to 0
  Vec x_prev;                       // folded into effective right-hand sides

  int theta_var = -1;               // epigraph variable, -1 when no cuts attached
  int num_cut_rows = 0;

  int add_var(std::string name, double cost, bool nonnegative);

  // True stage cost f_t(x, xi): the built objective minus the epigraph term.
  double stage_cost(std::span<const double> x) const;
  // Full objective including theta (what the solver minimizes).
  double total_objective(std::span<const double> x) const;
  Vec extract_state(std::span<const double> x) const;
};

// A sampled member of a problem family. stage_builder is pure: identical
// inputs produce identical subproblems.
struct ProblemInstance {
  FamilyId family = FamilyId::EP;
  int T = 2;
  int state_dim = 1;
  DistributionParams lambda;
  int xi_dim = 0;            // per-stage uncertainty dimension (t >= 2)
  double trivial_floor = 0;  // intercept of the trivial cut
  // Total-state floor applied to states propagated along SDDP forward paths:
  // when the component sum falls below it, components are lifted pro rata.
  // Keeps log-utility stages away from the zero-wealth boundary in the first
  // iterations; inactive once real cuts exist (converged FP wealth is O(10)).
  double state_total_floor = 0.0;

  std::function<StageSubproblem(const ProblemInstance&, int t,
                                std::span<const double> x_prev,
                                std::span<const double> xi)>
      stage_builder;
  std::function<Vec(const ProblemInstance&, int t, Rng&)> xi_sampler;

  Cut trivial_cut() const {
    return trivial_floor == 0.0 ? trivial_cut_nonnegative(state_dim)
                                : trivial_cut_floor(state_dim, trivial_floor);
  }
};

// Assembles the stage-t subproblem at (x_prev, xi), folding B_t x_prev into
// right-hand sides and attaching one epigraph inequality per cut. cuts must
// be null exactly at t = T.
StageSubproblem build_stage_subproblem(const ProblemInstance& instance, int t,
                                       std::span<const double> x_prev,
                                       std::span<const double> xi,
                                       const CutSet* cuts);

// Lowering to the solver IR. Le rows are negated into Ge form; ge_sign
// records the flip so duals can be mapped back per original row.
struct LoweredStage {
  ConvexProgram prog;
  std::vector<double> ge_sign;  // +1 for Ge, -1 for (negated) Le, per ineq row
};

LoweredStage lower_stage(const StageSubproblem& sp);

// Instance serialization (family, T, lambda entries, seed).
std::string instance_to_json(const ProblemInstance& inst, std::uint64_t seed);

}  // namespace msopt

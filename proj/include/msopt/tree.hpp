#pragma once

#include "msopt/model.hpp"
#include "msopt/solver.hpp"

namespace msopt {

// Per-stage realization support shared by every node of a stage (stagewise
// independence). Index [t-2] holds the branches of stage t, t = 2..T.
struct ScenarioLattice {
  std::vector<std::vector<Vec>> realizations;
  std::vector<std::vector<double>> probs;  // conditional, sum to 1 per stage

  int stages() const { return static_cast<int>(realizations.size()) + 1; }
  int branches(int t) const { return static_cast<int>(realizations[t - 2].size()); }
};

struct TreeNode {
  int stage = 1;
  int parent = -1;
  Vec xi;             // empty at the deterministic root
  double prob = 1.0;  // conditional on the parent
};

struct ScenarioTree {
  int T = 0;
  int branching = 1;
  std::vector<TreeNode> nodes;  // breadth-first, root at index 0

  std::size_t size() const { return nodes.size(); }
  // Unconditional probability of reaching node i.
  double path_prob(int i) const;
};

// i.i.d. per-stage sampling with uniform conditional probabilities.
ScenarioLattice build_lattice(const ProblemInstance& inst, int branches_per_stage,
                              std::uint64_t seed);
ScenarioTree tree_from_lattice(const ScenarioLattice& lattice);
ScenarioTree build_tree(const ProblemInstance& inst, int branches_per_stage,
                        std::uint64_t seed);

std::string tree_to_json(const ScenarioTree& tree);
ScenarioTree tree_from_json(const std::string& text);

struct DetEquivResult {
  SolveResult solve;
  double objective = 0.0;
  Vec first_stage;  // stage-1 primal block
};

// One probability-weighted convex program over all tree nodes, solved with
// the sparse KKT backend. Refuses trees beyond the variable guardrail.
DetEquivResult solve_detequiv(const ProblemInstance& inst, const ScenarioTree& tree,
                              const SolverOptions& opts = {});

inline constexpr std::size_t kDetEquivVariableGuardrail = 200000;

}  // namespace msopt

#pragma once

#include <optional>

#include "msopt/cuts.hpp"
#include "msopt/model.hpp"
#include "msopt/solver.hpp"
#include "msopt/tree.hpp"

namespace msopt {

// Solver failure inside a pass, tagged with where it happened.
struct SddpError : std::runtime_error {
  SddpError(int stage_, int scenario_, SolveStatus status_, const std::string& what_)
      : std::runtime_error(what_), stage(stage_), scenario(scenario_), status(status_) {}
  int stage;
  int scenario;  // -1 outside forward paths
  SolveStatus status;
};

struct BoundStats {
  double v_bar = 0.0;
  double sigma_v = 0.0;
  int sample_count = 0;
  double z_alpha = 0.0;
  double upper_bound = 0.0;
  bool exact = false;  // exhaustive lattice evaluation instead of sampling
};

struct SddpIterationLog {
  int iteration = 0;
  double lower = 0.0;
  double v_bar = 0.0;
  double upper = 0.0;
  double gap = 0.0;
  int cuts_per_stage = 0;
  double seconds = 0.0;
};

struct SddpConfig {
  int forward_samples = 10;   // M
  int backward_samples = 10;  // N_t when sampling fresh realizations
  double z_alpha = 1.96;
  double threshold = 0.01;
  bool threshold_relative = true;  // gap <= threshold * (1 + |lower|)
  int max_iters = 100;
  bool level1 = false;       // post-run level-1 selection at recorded trial points
  bool record_cuts = false;
  std::uint64_t seed = 0;
  const ScenarioLattice* lattice = nullptr;  // fixed support; enables exact bounds
  int exact_enumeration_cap = 4096;          // max lattice paths to enumerate
  SolverOptions solver;
};

struct Trajectory {
  std::vector<Vec> states;          // x_t for t = 1..T
  std::vector<Vec> realizations;    // xi_t for t = 2..T
  double true_cost = 0.0;           // sum_t f_t(x_t*, xi_t)
  double prob = 0.0;                // path probability (exact enumeration)
};

struct SddpState {
  int T = 0;
  std::vector<CutSet> cutsets;                // Q_2..Q_T at index t-2
  std::vector<std::vector<Vec>> trial_points; // x_{t-1} probes per Q_t
  int iteration = 0;
  double lower_bound = 0.0;
  BoundStats upper_stats;
  std::vector<SddpIterationLog> history;
  bool converged = false;
  std::vector<std::size_t> unselected_counts;  // set when level-1 ran

  CutSet& q(int t) { return cutsets.at(t - 2); }
  const CutSet& q(int t) const { return cutsets.at(t - 2); }
};

SddpState init_sddp_state(const ProblemInstance& inst);

// One scenario path per entry: xi for stages 2..T.
std::vector<std::vector<Vec>> sample_scenario_paths(const ProblemInstance& inst,
                                                    int count, Rng& rng,
                                                    const ScenarioLattice* lattice);
std::vector<std::vector<Vec>> enumerate_lattice_paths(const ScenarioLattice& lattice,
                                                      std::vector<double>& probs);

struct ForwardResult {
  std::vector<Trajectory> trajectories;
  BoundStats stats;
};

// Solves stages 1..T per path with the current cutsets, records states as
// trial points, and computes the statistical (or exact) upper bound.
ForwardResult forward_pass(const ProblemInstance& inst, const SddpConfig& config,
                           SddpState& state,
                           const std::vector<std::vector<Vec>>& scenarios,
                           const std::vector<double>* path_probs = nullptr);

// Adds one averaged cut per stage from the trial trajectory's states, then
// refreshes the lower bound from the stage-1 solve.
void backward_pass(const ProblemInstance& inst, const SddpConfig& config,
                   SddpState& state, const std::vector<Trajectory>& trajectories,
                   Rng& rng, std::size_t trial_index = 0);

// Gradient of the stage optimum with respect to x_prev via the row couplings
// and the solver duals.
Vec cut_gradient(const StageSubproblem& sp, const SolveResult& res);

// Level-1 dominance selection at the recorded trial points, with a fixpoint
// refinement on Q_2: whenever the selected stage-1 optimum dips below the
// full one, the selected argmin joins the trial set and selection reruns.
// Preserves the stage-1 optimal value while shrinking the cut sets.
std::vector<CutSet> level1_select_policy(const ProblemInstance& inst,
                                         const SddpState& state,
                                         const SolverOptions& opts = {});

struct SddpRun {
  SddpState state;
  // Recorded per-stage cut sequences (token order: trivial start, middles,
  // final end), one per t = 1..T-1, kept raw even when level-1 selection ran.
  std::vector<std::vector<Cut>> recorded_sequences;
};

SddpRun run_sddp(const ProblemInstance& inst, const SddpConfig& config);

std::string convergence_csv(const SddpState& state);

}  // namespace msopt

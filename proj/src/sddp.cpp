#include "msopt/sddp.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace msopt {

namespace {

void apply_state_floor(const ProblemInstance& inst, Vec& state) {
  if (inst.state_total_floor <= 0.0 || state.empty()) return;
  double total = 0.0;
  for (double v : state) total += v;
  if (total >= inst.state_total_floor) return;
  const double lift = (inst.state_total_floor - total) / state.size();
  for (double& v : state) v += lift;
}

SolveResult solve_or_throw(const StageSubproblem& sp, const SolverOptions& opts,
                           int stage, int scenario) {
  SolveResult res = solve_stage(sp, opts);
  if (!res.optimal()) {
    throw SddpError(stage, scenario, res.status,
                    "stage " + std::to_string(stage) + " scenario " +
                        std::to_string(scenario) + " solve failed: " +
                        status_name(res.status) +
                        (res.message.empty() ? "" : " (" + res.message + ")"));
  }
  return res;
}

}  // namespace

SddpState init_sddp_state(const ProblemInstance& inst) {
  SddpState state;
  state.T = inst.T;
  for (int t = 2; t <= inst.T; ++t) state.cutsets.emplace_back(t, inst.trivial_cut());
  state.trial_points.resize(inst.T - 1);
  state.lower_bound = -std::numeric_limits<double>::infinity();
  return state;
}

std::vector<std::vector<Vec>> sample_scenario_paths(const ProblemInstance& inst,
                                                    int count, Rng& rng,
                                                    const ScenarioLattice* lattice) {
  std::vector<std::vector<Vec>> paths(count);
  for (int m = 0; m < count; ++m) {
    paths[m].reserve(inst.T - 1);
    for (int t = 2; t <= inst.T; ++t) {
      if (lattice) {
        const auto& xs = lattice->realizations[t - 2];
        paths[m].push_back(xs[rng.index(xs.size())]);
      } else {
        paths[m].push_back(inst.xi_sampler(inst, t, rng));
      }
    }
  }
  return paths;
}

std::vector<std::vector<Vec>> enumerate_lattice_paths(const ScenarioLattice& lattice,
                                                      std::vector<double>& probs) {
  std::vector<std::vector<Vec>> paths{{}};
  probs = {1.0};
  for (std::size_t level = 0; level < lattice.realizations.size(); ++level) {
    std::vector<std::vector<Vec>> next;
    std::vector<double> next_probs;
    for (std::size_t p = 0; p < paths.size(); ++p) {
      for (std::size_t b = 0; b < lattice.realizations[level].size(); ++b) {
        auto path = paths[p];
        path.push_back(lattice.realizations[level][b]);
        next.push_back(std::move(path));
        next_probs.push_back(probs[p] * lattice.probs[level][b]);
      }
    }
    paths = std::move(next);
    probs = std::move(next_probs);
  }
  return paths;
}

ForwardResult forward_pass(const ProblemInstance& inst, const SddpConfig& config,
                           SddpState& state,
                           const std::vector<std::vector<Vec>>& scenarios,
                           const std::vector<double>* path_probs) {
  if (scenarios.empty()) throw std::invalid_argument("forward_pass: no scenarios");
  ForwardResult out;
  out.trajectories.reserve(scenarios.size());

  for (std::size_t m = 0; m < scenarios.size(); ++m) {
    Trajectory traj;
    traj.prob = path_probs ? (*path_probs)[m] : 1.0 / scenarios.size();
    Vec x_prev;
    for (int t = 1; t <= inst.T; ++t) {
      const Vec empty;
      const Vec& xi = t == 1 ? empty : scenarios[m][t - 2];
      const CutSet* cuts = t < inst.T ? &state.q(t + 1) : nullptr;
      const StageSubproblem sp =
          build_stage_subproblem(inst, t, x_prev, xi, cuts);
      const SolveResult res =
          solve_or_throw(sp, config.solver, t, static_cast<int>(m));
      traj.true_cost += sp.stage_cost(res.x);
      Vec x_t = sp.extract_state(res.x);
      apply_state_floor(inst, x_t);
      traj.states.push_back(x_t);
      if (t >= 2) traj.realizations.push_back(xi);
      x_prev = std::move(x_t);
    }
    out.trajectories.push_back(std::move(traj));
  }

  for (int t = 2; t <= inst.T; ++t)
    for (const auto& traj : out.trajectories)
      state.trial_points[t - 2].push_back(traj.states[t - 2]);

  BoundStats& bs = out.stats;
  bs.z_alpha = config.z_alpha;
  bs.sample_count = static_cast<int>(out.trajectories.size());
  if (path_probs) {
    bs.exact = true;
    for (const auto& traj : out.trajectories) bs.v_bar += traj.prob * traj.true_cost;
    double var = 0.0;
    for (const auto& traj : out.trajectories) {
      const double d = traj.true_cost - bs.v_bar;
      var += traj.prob * d * d;
    }
    bs.sigma_v = std::sqrt(var);
    bs.upper_bound = bs.v_bar;
  } else {
    for (const auto& traj : out.trajectories) bs.v_bar += traj.true_cost;
    bs.v_bar /= bs.sample_count;
    double ss = 0.0;
    for (const auto& traj : out.trajectories) {
      const double d = traj.true_cost - bs.v_bar;
      ss += d * d;
    }
    bs.sigma_v = bs.sample_count > 1 ? std::sqrt(ss / (bs.sample_count - 1)) : 0.0;
    bs.upper_bound =
        bs.v_bar + bs.z_alpha * bs.sigma_v / std::sqrt(static_cast<double>(bs.sample_count));
  }
  return out;
}

Vec cut_gradient(const StageSubproblem& sp, const SolveResult& res) {
  const std::size_t dim = sp.x_prev.size();
  Vec grad(dim, 0.0);
  for (std::size_t r = 0; r < sp.eq_rows.size(); ++r) {
    const auto& coupling = sp.eq_rows[r].coupling;
    for (std::size_t d = 0; d < coupling.size(); ++d)
      grad[d] -= res.eq_duals[r] * coupling[d];
  }
  for (std::size_t r = 0; r < sp.ineq_rows.size(); ++r) {
    const auto& row = sp.ineq_rows[r];
    const double sign = row.sense == RowSense::Le ? -1.0 : 1.0;
    for (std::size_t d = 0; d < row.coupling.size(); ++d)
      grad[d] -= res.ineq_duals[r] * sign * row.coupling[d];
  }
  return grad;
}

void backward_pass(const ProblemInstance& inst, const SddpConfig& config,
                   SddpState& state, const std::vector<Trajectory>& trajectories,
                   Rng& rng, std::size_t trial_index) {
  if (trajectories.empty()) throw std::invalid_argument("backward_pass: no trajectories");
  const Trajectory& trial = trajectories.at(trial_index);

  for (int t = inst.T; t >= 2; --t) {
    const Vec& x_trial = trial.states[t - 2];

    std::vector<Vec> realizations;
    std::vector<double> probs;
    if (config.lattice) {
      realizations = config.lattice->realizations[t - 2];
      probs = config.lattice->probs[t - 2];
    } else {
      for (int s = 0; s < config.backward_samples; ++s)
        realizations.push_back(inst.xi_sampler(inst, t, rng));
      probs.assign(realizations.size(), 1.0 / realizations.size());
    }

    Vec beta(inst.state_dim, 0.0);
    double expected_value = 0.0;
    for (std::size_t s = 0; s < realizations.size(); ++s) {
      const CutSet* cuts = t < inst.T ? &state.q(t + 1) : nullptr;
      const StageSubproblem sp =
          build_stage_subproblem(inst, t, x_trial, realizations[s], cuts);
      const SolveResult res =
          solve_or_throw(sp, config.solver, t, static_cast<int>(s));
      expected_value += probs[s] * res.objective;
      const Vec g = cut_gradient(sp, res);
      for (int d = 0; d < inst.state_dim; ++d) beta[d] += probs[s] * g[d];
    }

    double alpha = expected_value;
    for (int d = 0; d < inst.state_dim; ++d) alpha -= beta[d] * x_trial[d];
    state.q(t).add(Cut{beta, alpha, CutOrigin::Sddp});
  }

  const Vec empty;
  const StageSubproblem sp1 = build_stage_subproblem(inst, 1, {}, empty, &state.q(2));
  const SolveResult res1 = solve_or_throw(sp1, config.solver, 1, -1);
  state.lower_bound = res1.objective;
}

SddpRun run_sddp(const ProblemInstance& inst, const SddpConfig& config) {
  if (config.threshold <= 0.0) throw std::invalid_argument("threshold must be > 0");
  SddpRun run;
  SddpState& state = run.state;
  state = init_sddp_state(inst);
  Rng rng(config.seed);
  Rng forward_rng = rng.derive(0x666f7277ull);
  Rng backward_rng = rng.derive(0x6261636bull);

  std::vector<double> enum_probs;
  std::vector<std::vector<Vec>> enum_paths;
  bool exact = false;
  if (config.lattice) {
    double count = 1.0;
    for (const auto& level : config.lattice->realizations) count *= level.size();
    if (count <= config.exact_enumeration_cap) {
      enum_paths = enumerate_lattice_paths(*config.lattice, enum_probs);
      exact = true;
    }
  }

  const auto start = std::chrono::steady_clock::now();
  double last_elapsed = 0.0;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    state.iteration = iter;
    ForwardResult fwd;
    if (exact) {
      fwd = forward_pass(inst, config, state, enum_paths, &enum_probs);
    } else {
      const auto paths = sample_scenario_paths(inst, config.forward_samples,
                                               forward_rng, config.lattice);
      fwd = forward_pass(inst, config, state, paths);
    }
    state.upper_stats = fwd.stats;
    // The trial path must vary between iterations or states off the first
    // path are never probed; sample it by path probability.
    std::size_t trial_index = 0;
    if (exact) {
      double pick = backward_rng.next_double();
      for (std::size_t p = 0; p < enum_probs.size(); ++p) {
        pick -= enum_probs[p];
        if (pick <= 0.0) {
          trial_index = p;
          break;
        }
      }
    }
    backward_pass(inst, config, state, fwd.trajectories, backward_rng,
                  trial_index);

    const double gap = std::fabs(state.upper_stats.upper_bound - state.lower_bound);
    const double tol = config.threshold_relative
                           ? config.threshold * (1.0 + std::fabs(state.lower_bound))
                           : config.threshold;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.push_back(SddpIterationLog{
        iter, state.lower_bound, state.upper_stats.v_bar,
        state.upper_stats.upper_bound, gap,
        static_cast<int>(state.q(2).size()), elapsed - last_elapsed});
    last_elapsed = elapsed;
    if (gap <= tol) {
      state.converged = true;
      break;
    }
  }

  // One recording-only forward pass: the last backward pass may shift the
  // incumbent policy's states, and cut selection needs trial points there.
  try {
    if (exact) {
      forward_pass(inst, config, state, enum_paths, &enum_probs);
    } else {
      const auto paths = sample_scenario_paths(inst, config.forward_samples,
                                               forward_rng, config.lattice);
      forward_pass(inst, config, state, paths);
    }
  } catch (const SddpError&) {
    // Bounds and cuts are already final; a recording failure is not fatal.
  }

  if (config.record_cuts) {
    for (int t = 2; t <= inst.T; ++t)
      run.recorded_sequences.push_back(state.q(t).cuts());
  }
  if (config.level1) {
    state.unselected_counts.clear();
    for (int t = 2; t <= inst.T; ++t)
      state.unselected_counts.push_back(state.q(t).size());
    std::vector<CutSet> selected =
        level1_select_policy(inst, state, config.solver);
    for (int t = 2; t <= inst.T; ++t) state.q(t) = std::move(selected[t - 2]);
  }
  return run;
}

std::vector<CutSet> level1_select_policy(const ProblemInstance& inst,
                                         const SddpState& state,
                                         const SolverOptions& opts) {
  std::vector<CutSet> selected;
  for (int t = 2; t <= inst.T; ++t)
    selected.push_back(state.q(t).level1_select(state.trial_points[t - 2]));

  const Vec empty;
  const SolveResult full =
      solve_stage(build_stage_subproblem(inst, 1, {}, empty, &state.q(2)), opts);
  if (!full.optimal()) return selected;

  std::vector<Vec> trials = state.trial_points[0];
  for (std::size_t round = 0; round < state.q(2).size(); ++round) {
    const StageSubproblem sp1 =
        build_stage_subproblem(inst, 1, {}, empty, &selected[0]);
    const SolveResult sel = solve_stage(sp1, opts);
    if (!sel.optimal()) break;
    if (std::fabs(sel.objective - full.objective) <=
        1e-9 * (1.0 + std::fabs(full.objective)))
      break;
    trials.push_back(sp1.extract_state(sel.x));
    selected[0] = state.q(2).level1_select(trials);
  }
  return selected;
}

std::string convergence_csv(const SddpState& state) {
  std::ostringstream os;
  os << "iteration,lower,v_bar,upper,gap,cuts_per_stage,seconds\n";
  os.precision(17);
  for (const auto& row : state.history) {
    os << row.iteration << ',' << row.lower << ',' << row.v_bar << ','
       << row.upper << ',' << row.gap << ',' << row.cuts_per_stage << ','
       << row.seconds << '\n';
  }
  return os.str();
}

}  // namespace msopt

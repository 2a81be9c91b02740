#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "msopt/problems.hpp"
#include "msopt/sddp.hpp"
#include "oracles.hpp"

using namespace msopt;

namespace {

ProblemInstance ep(int T, double mu = 20.0, double sigma = 5.0) {
  return make_instance(FamilyId::EP, T,
                       DistributionParams{{{"mu_I", mu}, {"sigma_I", sigma}}});
}

ProblemInstance pp_mid(int T) {
  return make_instance(
      FamilyId::PP, T,
      DistributionParams{{{"mu_d1", 4.5}, {"sigma_d1", 0.3}, {"mu_d2", 2.75},
                          {"sigma_d2", 0.15}, {"mu_d3", 1.5}, {"sigma_d3", 0.075}}});
}

}  // namespace

TEST_CASE("deterministic instance: identical trajectories, zero sigma") {
  const ProblemInstance inst = ep(3, 20.0, 0.0);
  SddpState state = init_sddp_state(inst);
  SddpConfig cfg;
  Rng rng(1);
  const auto paths = sample_scenario_paths(inst, 3, rng, nullptr);
  const ForwardResult fwd = forward_pass(inst, cfg, state, paths);
  REQUIRE(fwd.trajectories.size() == 3);
  CHECK(fwd.stats.sigma_v == doctest::Approx(0.0));
  for (const auto& traj : fwd.trajectories) {
    CHECK(traj.true_cost == doctest::Approx(fwd.trajectories[0].true_cost));
    CHECK(traj.states[1][0] ==
          doctest::Approx(fwd.trajectories[0].states[1][0]));
  }
  CHECK(fwd.stats.upper_bound >= fwd.stats.v_bar);  // z_alpha >= 0
}

TEST_CASE("EP toy T=2 forward with trivial cuts matches the analytic reduction") {
  // The trivial cut contributes a constant zero, so stage 1 reduces to
  // min 2W + 7H + exp(-0.1 r + 5) with r_init = 40.
  const ProblemInstance inst = ep(2, 20.0, 0.0);
  SddpState state = init_sddp_state(inst);
  SddpConfig cfg;
  Rng rng(3);
  const auto paths = sample_scenario_paths(inst, 1, rng, nullptr);
  const ForwardResult fwd = forward_pass(inst, cfg, state, paths);

  const auto stage1_cost = [](double w) {
    return 2.0 * w + 7.0 * std::max(20.0 - w, 0.0) +
           std::exp(-0.1 * (40.0 - w) + 5.0);
  };
  const double expected = oracles::grid_refine_min(stage1_cost, 0.0, 40.0);
  const StageSubproblem sp1 =
      build_stage_subproblem(inst, 1, {}, {}, &state.q(2));
  const SolveResult res1 = solve_stage(sp1);
  REQUIRE(res1.optimal());
  CHECK(std::fabs(res1.objective - expected) < 1e-6 * (1.0 + expected));
  CHECK(fwd.trajectories[0].states[0][0] ==
        doctest::Approx(res1.x[1]).epsilon(1e-5));
}

TEST_CASE("T=2 single-realization backward cut is the exact Benders cut") {
  const ProblemInstance inst = pp_mid(2);
  const ScenarioLattice lattice = build_lattice(inst, 1, 77);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  SddpState state = init_sddp_state(inst);
  Rng rng(5);
  const auto paths = sample_scenario_paths(inst, 1, rng, &lattice);
  const ForwardResult fwd = forward_pass(inst, cfg, state, paths);
  backward_pass(inst, cfg, state, fwd.trajectories, rng);

  REQUIRE(state.q(2).size() == 2);
  const Cut& cut = state.q(2).cuts().back();
  const Vec& x_trial = fwd.trajectories[0].states[0];

  // Q_2 at the trial point equals the stage-2 optimum exactly.
  const StageSubproblem sp2 = build_stage_subproblem(
      inst, 2, x_trial, lattice.realizations[0][0], nullptr);
  const SolveResult res2 = solve_stage(sp2);
  REQUIRE(res2.optimal());
  double cut_at_trial = cut.alpha;
  for (int d = 0; d < 3; ++d) cut_at_trial += cut.beta[d] * x_trial[d];
  CHECK(cut_at_trial == doctest::Approx(res2.objective).epsilon(1e-7));

  // The slope matches central finite differences of the stage-2 optimum.
  for (int d = 0; d < 3; ++d) {
    const double h = 1e-5;
    Vec lo = x_trial, hi = x_trial;
    lo[d] -= h;
    hi[d] += h;
    const SolveResult rlo = solve_stage(build_stage_subproblem(
        inst, 2, lo, lattice.realizations[0][0], nullptr));
    const SolveResult rhi = solve_stage(build_stage_subproblem(
        inst, 2, hi, lattice.realizations[0][0], nullptr));
    REQUIRE(rlo.optimal());
    REQUIRE(rhi.optimal());
    const double fd = (rhi.objective - rlo.objective) / (2 * h);
    CHECK(std::fabs(cut.beta[d] - fd) < 1e-3 * (1.0 + std::fabs(fd)));
  }
}

TEST_CASE("zero-variance EP: one backward pass reaches the two-stage optimum") {
  const ProblemInstance inst = ep(2, 18.0, 0.0);
  const ScenarioLattice lattice = build_lattice(inst, 1, 3);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  SddpState state = init_sddp_state(inst);
  Rng rng(5);
  const auto paths = sample_scenario_paths(inst, 1, rng, &lattice);
  const ForwardResult fwd = forward_pass(inst, cfg, state, paths);
  backward_pass(inst, cfg, state, fwd.trajectories, rng);

  const auto stage2_opt = [&](double r_prev) {
    const double r_init = r_prev + 18.0;
    return oracles::grid_refine_min(
        [&](double w) {
          return 2.0 * w + 7.0 * std::max(20.0 - w, 0.0) +
                 std::exp(-0.1 * (r_init - w) + 5.0);
        },
        0.0, r_init);
  };
  const double expected = oracles::grid_refine_min(
      [&](double w1) {
        return 2.0 * w1 + 7.0 * std::max(20.0 - w1, 0.0) +
               std::exp(-0.1 * (40.0 - w1) + 5.0) + stage2_opt(40.0 - w1);
      },
      0.0, 40.0);
  CHECK(std::fabs(state.lower_bound - expected) < 1e-6 * (1.0 + expected));
}

TEST_CASE("cut validity probe: every stored cut under-estimates re-solved values") {
  const ProblemInstance inst = ep(3);
  const ScenarioLattice lattice = build_lattice(inst, 2, 11);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 0.005;
  cfg.max_iters = 12;
  cfg.seed = 21;
  const SddpRun run = run_sddp(inst, cfg);

  Rng rng(33);
  for (int t = 2; t <= inst.T; ++t) {
    const CutSet& cs = run.state.q(t);
    for (int probe = 0; probe < 20; ++probe) {
      Vec x_hat{rng.uniform(0.0, 60.0)};
      double expected = 0.0;
      for (std::size_t b = 0; b < lattice.realizations[t - 2].size(); ++b) {
        const CutSet* next = t < inst.T ? &run.state.q(t + 1) : nullptr;
        const SolveResult res = solve_stage(build_stage_subproblem(
            inst, t, x_hat, lattice.realizations[t - 2][b], next));
        REQUIRE(res.optimal());
        expected += lattice.probs[t - 2][b] * res.objective;
      }
      for (const Cut& cut : cs.cuts()) {
        const double value = cut.alpha + cut.beta[0] * x_hat[0];
        CHECK(value <= expected + 1e-5 * (1.0 + std::fabs(expected)));
      }
    }
  }
}

TEST_CASE("run_sddp: monotone lower bounds and zero-variance convergence") {
  const ProblemInstance inst = ep(3, 22.0, 0.0);
  const ScenarioLattice lattice = build_lattice(inst, 1, 7);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 1e-4;
  cfg.threshold_relative = false;
  cfg.max_iters = 20;
  cfg.seed = 9;
  const SddpRun run = run_sddp(inst, cfg);
  CHECK(run.state.converged);
  CHECK(run.state.iteration <= 3);
  CHECK(run.state.history.back().gap <= 1e-4);
  for (std::size_t i = 1; i < run.state.history.size(); ++i)
    CHECK(run.state.history[i].lower >= run.state.history[i - 1].lower - 1e-7);
}

TEST_CASE("record_cuts emits ordered sequences, one cut per iteration") {
  const ProblemInstance inst = ep(3);
  const ScenarioLattice lattice = build_lattice(inst, 2, 5);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 0.01;
  cfg.max_iters = 6;
  cfg.record_cuts = true;
  cfg.seed = 4;
  const SddpRun run = run_sddp(inst, cfg);
  REQUIRE(run.recorded_sequences.size() == 2);
  for (const auto& seq : run.recorded_sequences) {
    REQUIRE(seq.size() >= 2);
    CHECK(seq.front().origin == CutOrigin::Trivial);
    // Trivial seed plus one cut per iteration.
    CHECK(seq.size() == run.state.history.size() + 1);
  }
}

TEST_CASE("level-1 mode selects a subset preserving trial-point evaluation") {
  const ProblemInstance inst = ep(4);
  const ScenarioLattice lattice = build_lattice(inst, 2, 19);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 0.003;
  cfg.max_iters = 15;
  cfg.seed = 101;

  SddpConfig cfg_l1 = cfg;
  cfg_l1.level1 = true;
  const SddpRun full = run_sddp(inst, cfg);
  const SddpRun sel = run_sddp(inst, cfg_l1);

  REQUIRE(sel.state.unselected_counts.size() == 3);
  for (int t = 2; t <= inst.T; ++t) {
    CHECK(sel.state.q(t).size() <= full.state.q(t).size());
    for (const auto& x : full.state.trial_points[t - 2]) {
      CHECK(sel.state.q(t).evaluate(x) == full.state.q(t).evaluate(x));
    }
  }

  const SolveResult r_full =
      solve_stage(build_stage_subproblem(inst, 1, {}, {}, &full.state.q(2)));
  const SolveResult r_sel =
      solve_stage(build_stage_subproblem(inst, 1, {}, {}, &sel.state.q(2)));
  REQUIRE(r_full.optimal());
  REQUIRE(r_sel.optimal());
  CHECK(std::fabs(r_full.objective - r_sel.objective) <=
        1e-8 * (1 + std::fabs(r_full.objective)));
}

TEST_CASE("forward_pass rejects an empty scenario set") {
  const ProblemInstance inst = ep(3);
  SddpState state = init_sddp_state(inst);
  SddpConfig cfg;
  CHECK_THROWS_AS(forward_pass(inst, cfg, state, {}), std::invalid_argument);
}

TEST_CASE("convergence csv has the documented columns") {
  const ProblemInstance inst = ep(2, 20.0, 0.0);
  const ScenarioLattice lattice = build_lattice(inst, 1, 2);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 1e-3;
  cfg.threshold_relative = false;
  cfg.seed = 2;
  const SddpRun run = run_sddp(inst, cfg);
  const std::string csv = convergence_csv(run.state);
  CHECK(csv.rfind("iteration,lower,v_bar,upper,gap,cuts_per_stage,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(run.state.history.size()) + 1);
}

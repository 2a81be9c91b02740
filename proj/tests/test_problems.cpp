#include <doctest.h>

#include <cmath>

#include "msopt/problems.hpp"
#include "msopt/solver.hpp"

using namespace msopt;

TEST_CASE("family specs carry the fixed table values") {
  const FamilySpec& ep = family_spec(FamilyId::EP);
  CHECK(ep.fixed("r0_init") == 40.0);
  CHECK(ep.fixed("c_W") == 2.0);
  CHECK(ep.fixed("c_H") == 7.0);
  CHECK(ep.fixed("d") == 20.0);
  CHECK(ep.fixed("a") == 0.1);
  CHECK(ep.fixed("b") == 5.0);
  const FamilySpec& fp = family_spec(FamilyId::FP);
  CHECK(fp.fixed("w_init") == 100.0);
  CHECK(fp.fixed("eta") == 1.0);
  CHECK(fp.fixed("r_free") == 1.03);
  const FamilySpec& pp = family_spec(FamilyId::PP);
  CHECK(pp.fixed("r") == 10.0);
  CHECK(pp.fixed("b3") == 20.0);
  CHECK(pp.fixed("c2") == 7.0);
}

TEST_CASE("prior midpoints and sampled draws stay inside the prior boxes") {
  // Midpoint instances are direct arithmetic on the table priors.
  const ProblemInstance ep = make_instance(
      FamilyId::EP, 4, DistributionParams{{{"mu_I", 20.0}, {"sigma_I", 5.0}}});
  CHECK(ep.lambda.get("mu_I") == 20.0);
  CHECK(ep.lambda.get("sigma_I") == 5.0);
  CHECK(ep.state_dim == 1);

  Rng rng(1234);
  for (int i = 0; i < 20; ++i) {
    const ProblemInstance s = sample_instance(FamilyId::EP, 4, rng);
    CHECK(s.lambda.get("mu_I") >= 15.0);
    CHECK(s.lambda.get("mu_I") <= 25.0);
    CHECK(s.lambda.get("sigma_I") >= 4.0);
    CHECK(s.lambda.get("sigma_I") <= 6.0);
    const ProblemInstance p = sample_instance(FamilyId::PP, 4, rng);
    CHECK(p.lambda.size() == 6);
    CHECK(p.lambda.get("mu_d2") >= 1.5);
    CHECK(p.lambda.get("mu_d2") <= 4.0);
    const ProblemInstance f = sample_instance(FamilyId::FP, 4, rng);
    CHECK(f.lambda.get("mu") >= 0.04);
    CHECK(f.lambda.get("mu") <= 0.08);
  }
}

TEST_CASE("FP stock returns follow the stated log-normal") {
  const int T = 5;
  const ProblemInstance inst = make_instance(
      FamilyId::FP, T, DistributionParams{{{"mu", 0.06}, {"sigma", 0.2}}});
  Rng rng(777);
  const double dt = fp_dt(T);
  double sum = 0.0, sumsq = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double logr = std::log(inst.xi_sampler(inst, 2, rng)[0]);
    sum += logr;
    sumsq += logr * logr;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::fabs(mean - (0.06 - 0.02) * dt) < 2e-3);
  CHECK(std::fabs(var - 0.04 * dt) < 1e-3);
}

TEST_CASE("stage objective values match the formulas") {
  const ProblemInstance ep = make_instance(
      FamilyId::EP, 2, DistributionParams{{{"mu_I", 20.0}, {"sigma_I", 5.0}}});
  const Vec x_ep{60.0, 40.0, 20.0, 0.0};
  CHECK(stage_objective_value(ep, 2, x_ep, Vec{20.0}) ==
        doctest::Approx(40.0 + std::exp(1.0)));

  const ProblemInstance fp = make_instance(
      FamilyId::FP, 3, DistributionParams{{{"mu", 0.06}, {"sigma", 0.2}}});
  const Vec x_fp{10.0, 20.0, 1.0};  // S, B, C = 1 at a mid stage
  CHECK(stage_objective_value(fp, 2, x_fp, Vec{1.0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(
      stage_objective_value(fp, 2, Vec{1.0, 1.0, 0.0}, Vec{1.0}),
      std::domain_error);

  const ProblemInstance pp = make_instance(
      FamilyId::PP, 3,
      DistributionParams{{{"mu_d1", 4.5}, {"sigma_d1", 0.3}, {"mu_d2", 2.75},
                          {"sigma_d2", 0.15}, {"mu_d3", 1.5}, {"sigma_d3", 0.075}}});
  const Vec x_pp{0, 0, 0, 1, 0, 0, 0, 0, 0};  // y = (1,0,0), s = 0
  CHECK(stage_objective_value(pp, 2, x_pp, Vec{1, 1, 1}) == doctest::Approx(6.0));
}

TEST_CASE("relatively complete recourse: adversarial stage solves stay optimal") {
  Rng rng(90210);
  int solved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const FamilyId family =
        trial % 3 == 0 ? FamilyId::EP : (trial % 3 == 1 ? FamilyId::FP : FamilyId::PP);
    const int T = 3;
    Rng srng = rng.derive(trial);
    const ProblemInstance inst = sample_instance(family, T, srng);
    const int t = 2 + static_cast<int>(srng.index(2));
    Vec x_prev(inst.state_dim);
    for (int d = 0; d < inst.state_dim; ++d) x_prev[d] = srng.uniform(0.0, 60.0);
    if (inst.state_total_floor > 0.0) {
      double total = 0.0;
      for (double v : x_prev) total += v;
      if (total < inst.state_total_floor)
        for (double& v : x_prev)
          v += (inst.state_total_floor - total) / x_prev.size();
    }
    const Vec xi = inst.xi_sampler(inst, t, srng);
    CutSet cuts(t + 1, inst.trivial_cut());
    const StageSubproblem sp = build_stage_subproblem(
        inst, t, x_prev, xi, t < T ? &cuts : nullptr);
    const SolveResult res = solve_stage(sp);
    CHECK(res.status != SolveStatus::Infeasible);
    if (res.optimal()) ++solved;
  }
  CHECK(solved == 100);
}

TEST_CASE("FP wealth dynamics: zero consumption and stock compounds at the bond factor") {
  const int T = 4;
  const ProblemInstance inst = make_instance(
      FamilyId::FP, T, DistributionParams{{{"mu", 0.06}, {"sigma", 0.2}}});
  const double bond = fp_bond_factor(T);
  CHECK(bond == doctest::Approx(1.0 + 0.03 / (T - 1)));
  double wealth = 100.0;
  Vec state{0.0, wealth};  // everything in bonds
  for (int t = 2; t < T; ++t) {
    const Vec xi{1.0};
    const StageSubproblem sp = [&] {
      CutSet cuts(t + 1, inst.trivial_cut());
      return build_stage_subproblem(inst, t, state, xi, &cuts);
    }();
    // With S_prev = 0 the wealth inflow is exactly bond * B_prev.
    const double inflow = sp.eq_rows[0].effective_rhs(sp.x_prev);
    wealth *= bond;
    CHECK(inflow == doctest::Approx(wealth).epsilon(1e-12));
    state = {0.0, wealth};
  }
}

TEST_CASE("samplers truncate at zero") {
  const ProblemInstance ep = make_instance(
      FamilyId::EP, 3, DistributionParams{{{"mu_I", 15.0}, {"sigma_I", 6.0}}});
  Rng rng(31);
  for (int i = 0; i < 5000; ++i) CHECK(ep.xi_sampler(ep, 2, rng)[0] >= 0.0);

  // Zero-variance samplers return the mean.
  const ProblemInstance det = make_instance(
      FamilyId::EP, 3, DistributionParams{{{"mu_I", 20.0}, {"sigma_I", 0.0}}});
  CHECK(det.xi_sampler(det, 2, rng)[0] == 20.0);
}

TEST_CASE("make_instance validates lambda") {
  CHECK_THROWS_AS(
      make_instance(FamilyId::EP, 3, DistributionParams{{{"mu_I", 20.0}}}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      make_instance(FamilyId::EP, 3,
                    DistributionParams{{{"mu_I", 20.0}, {"sigma_I", -1.0}}}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      make_instance(FamilyId::EP, 1,
                    DistributionParams{{{"mu_I", 20.0}, {"sigma_I", 5.0}}}),
      std::invalid_argument);
}

#include <doctest.h>

#include <cmath>

#include "msopt/model.hpp"
#include "msopt/problems.hpp"

using namespace msopt;

namespace {

ProblemInstance ep_instance(int T) {
  return make_instance(FamilyId::EP, T,
                       DistributionParams{{{"mu_I", 20.0}, {"sigma_I", 5.0}}});
}

}  // namespace

TEST_CASE("EP stage-T subproblem folds the prior state into the rhs") {
  const ProblemInstance inst = ep_instance(3);
  const Vec x_prev{40.0};
  const Vec xi{20.0};
  const StageSubproblem sp = build_stage_subproblem(inst, 3, x_prev, xi, nullptr);

  CHECK(sp.num_vars == 4);
  REQUIRE(sp.eq_rows.size() == 2);
  CHECK(sp.eq_rows[0].effective_rhs(sp.x_prev) == doctest::Approx(60.0));
  REQUIRE(sp.ineq_rows.size() == 1);
  CHECK(sp.ineq_rows[0].sense == RowSense::Ge);
  CHECK(sp.ineq_rows[0].coeffs.rhs == doctest::Approx(20.0));
  CHECK(sp.linear_cost[2] == doctest::Approx(2.0));
  CHECK(sp.linear_cost[3] == doctest::Approx(7.0));
  REQUIRE(sp.convex_terms.size() == 1);
  CHECK(sp.convex_terms[0].kind == TermKind::ExpAffine);
  CHECK(sp.convex_terms[0].a == doctest::Approx(-0.1));
  CHECK(sp.convex_terms[0].b == doctest::Approx(5.0));

  // Folding is exact: a feasible point satisfies the folded rows to 1e-10.
  const Vec x{60.0, 55.0, 5.0, 15.0};  // r_init, r_final, W, H
  for (const auto& row : sp.eq_rows)
    CHECK(std::fabs(row.coeffs.dot(x) - row.effective_rhs(sp.x_prev)) < 1e-10);
}

TEST_CASE("FP stage-1 subproblem pins the initial wealth") {
  const ProblemInstance inst = make_instance(
      FamilyId::FP, 3, DistributionParams{{{"mu", 0.06}, {"sigma", 0.2}}});
  CutSet cuts(2, inst.trivial_cut());
  const StageSubproblem sp = build_stage_subproblem(inst, 1, {}, {}, &cuts);
  REQUIRE(sp.eq_rows.size() == 1);
  CHECK(sp.eq_rows[0].effective_rhs(sp.x_prev) == doctest::Approx(100.0));
  CHECK(sp.eq_rows[0].coeffs.idx.size() == 3);
}

TEST_CASE("attaching a trivial cut adds exactly one epigraph row") {
  const ProblemInstance inst = ep_instance(3);
  CutSet cuts(2, inst.trivial_cut());
  const StageSubproblem sp = build_stage_subproblem(inst, 1, {}, {}, &cuts);
  CHECK(sp.theta_var == 4);
  CHECK(sp.num_cut_rows == 1);
  CHECK(sp.linear_cost[sp.theta_var] == doctest::Approx(1.0));
  const auto& row = sp.ineq_rows.back();
  CHECK(row.sense == RowSense::Ge);
  CHECK(row.coeffs.rhs == doctest::Approx(0.0));
  REQUIRE(row.coeffs.idx.size() == 1);  // zero beta: only theta appears
  CHECK(row.coeffs.idx[0] == sp.theta_var);
}

TEST_CASE("builder preconditions") {
  const ProblemInstance inst = ep_instance(3);
  CutSet cuts(2, inst.trivial_cut());
  const Vec xi{20.0};
  CHECK_THROWS_AS(build_stage_subproblem(inst, 0, {}, {}, &cuts), std::out_of_range);
  CHECK_THROWS_AS(build_stage_subproblem(inst, 4, {}, {}, &cuts), std::out_of_range);
  const Vec bad_prev{1.0, 2.0};
  CHECK_THROWS_AS(build_stage_subproblem(inst, 2, bad_prev, xi, &cuts),
                  std::invalid_argument);
  const Vec prev{10.0};
  CHECK_THROWS_AS(build_stage_subproblem(inst, 2, prev, xi, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_stage_subproblem(inst, 3, prev, xi, &cuts),
                  std::invalid_argument);
}

TEST_CASE("stage objective is midpoint-convex at random points") {
  Rng rng(101);
  const ProblemInstance ep = ep_instance(3);
  const ProblemInstance fp = make_instance(
      FamilyId::FP, 3, DistributionParams{{{"mu", 0.06}, {"sigma", 0.2}}});
  const Vec xi_ep{18.0};
  const Vec xi_fp{1.04};
  const Vec prev_ep{30.0};
  const Vec prev_fp{40.0, 40.0};
  const StageSubproblem sp_ep = build_stage_subproblem(ep, 3, prev_ep, xi_ep, nullptr);
  const StageSubproblem sp_fp = build_stage_subproblem(fp, 3, prev_fp, xi_fp, nullptr);

  for (const StageSubproblem* sp : {&sp_ep, &sp_fp}) {
    for (int trial = 0; trial < 50; ++trial) {
      Vec x1(sp->num_vars), x2(sp->num_vars), mid(sp->num_vars);
      for (int i = 0; i < sp->num_vars; ++i) {
        x1[i] = rng.uniform(0.1, 50.0);
        x2[i] = rng.uniform(0.1, 50.0);
        mid[i] = 0.5 * (x1[i] + x2[i]);
      }
      const double lhs = sp->total_objective(mid);
      const double rhs = 0.5 * (sp->total_objective(x1) + sp->total_objective(x2));
      CHECK(lhs <= rhs + 1e-12 * (1.0 + std::fabs(rhs)));
    }
  }
}

TEST_CASE("instance json round trip") {
  const ProblemInstance inst = ep_instance(4);
  const std::string text = instance_to_json(inst, 99);
  const ProblemInstance back = instance_from_json(text);
  CHECK(back.family == FamilyId::EP);
  CHECK(back.T == 4);
  CHECK(back.lambda.get("mu_I") == doctest::Approx(20.0));
  CHECK(back.lambda.get("sigma_I") == doctest::Approx(5.0));
}

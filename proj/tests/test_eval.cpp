#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "msopt/eval.hpp"
#include "msopt/problems.hpp"
#include "msopt/sddp.hpp"

using namespace msopt;

namespace {

ProblemInstance ep(int T, double mu = 20.0, double sigma = 5.0) {
  return make_instance(FamilyId::EP, T,
                       DistributionParams{{{"mu_I", mu}, {"sigma_I", sigma}}});
}

}  // namespace

TEST_CASE("error ratio arithmetic") {
  CHECK(error_ratio(100.0, 100.0) == doctest::Approx(0.0));
  CHECK(error_ratio(103.0, 100.0) == doctest::Approx(0.03));
  CHECK(error_ratio(-97.0, -100.0) == doctest::Approx(0.03));
  CHECK_THROWS_AS(error_ratio(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("infeasibility ratio counts failures") {
  std::vector<EvalRecord> records(4);
  records[2].feasible = false;
  CHECK(infeasibility_ratio(records) == doctest::Approx(0.25));
  records[2].feasible = true;
  CHECK(infeasibility_ratio(records) == doctest::Approx(0.0));
  CHECK_THROWS_AS(infeasibility_ratio({}), std::invalid_argument);
}

TEST_CASE("policy evaluation: converged SDDP policy sandwiches the optimum") {
  const ProblemInstance inst = ep(3);
  const ScenarioLattice lattice = build_lattice(inst, 2, 5);
  const ScenarioTree tree = tree_from_lattice(lattice);

  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 0.005;
  cfg.max_iters = 40;
  cfg.seed = 6;
  const SddpRun run = run_sddp(inst, cfg);
  REQUIRE(run.state.converged);

  const DetEquivResult det = solve_detequiv(inst, tree);
  REQUIRE(det.solve.optimal());

  const PolicyEvalResult policy = evaluate_policy(inst, run.state.cutsets, tree);
  REQUIRE(policy.feasible);

  // Optimality inequality and convergence-level closeness.
  CHECK(policy.objective >= det.objective - 1e-6 * (1.0 + std::fabs(det.objective)));
  const double tol = cfg.threshold * (1.0 + std::fabs(run.state.lower_bound));
  CHECK(policy.objective - det.objective <= tol + 1e-6);
  CHECK(run.state.lower_bound <= det.objective + 1e-6 * (1.0 + std::fabs(det.objective)));
}

TEST_CASE("trivial-only cut sets give a myopic policy above the optimum") {
  const ProblemInstance inst = ep(3);
  const ScenarioLattice lattice = build_lattice(inst, 2, 15);
  const ScenarioTree tree = tree_from_lattice(lattice);
  const SddpState state = init_sddp_state(inst);
  const PolicyEvalResult myopic = evaluate_policy(inst, state.cutsets, tree);
  REQUIRE(myopic.feasible);
  const DetEquivResult det = solve_detequiv(inst, tree);
  REQUIRE(det.solve.optimal());
  CHECK(myopic.objective >= det.objective - 1e-6 * (1.0 + std::fabs(det.objective)));
}

TEST_CASE("single-path tree with converged cut sets equals the chained optimum") {
  const ProblemInstance inst = ep(3, 21.0, 0.0);
  const ScenarioLattice lattice = build_lattice(inst, 1, 2);
  const ScenarioTree tree = tree_from_lattice(lattice);
  SddpConfig cfg;
  cfg.lattice = &lattice;
  cfg.threshold = 1e-7;
  cfg.threshold_relative = false;
  cfg.max_iters = 60;
  cfg.seed = 8;
  const SddpRun run = run_sddp(inst, cfg);
  const DetEquivResult det = solve_detequiv(inst, tree);
  REQUIRE(det.solve.optimal());
  const PolicyEvalResult policy = evaluate_policy(inst, run.state.cutsets, tree);
  REQUIRE(policy.feasible);
  CHECK(std::fabs(policy.objective - det.objective) <
        1e-6 * (1.0 + std::fabs(det.objective)));
}

TEST_CASE("report aggregates equal independent recomputation") {
  EvalReport report;
  Rng rng(91);
  for (int i = 0; i < 12; ++i) {
    EvalRecord r;
    r.instance_seed = i;
    r.reference_objective = rng.uniform(50, 150);
    r.candidate_objective = r.reference_objective * (1.0 + rng.uniform(-0.05, 0.1));
    r.feasible = i % 5 != 0 ? true : false;
    r.error_ratio =
        r.feasible ? error_ratio(r.candidate_objective, r.reference_objective) : 0.0;
    report.records.push_back(r);
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : report.records)
    if (r.feasible) {
      sum += r.error_ratio;
      ++n;
    }
  const double mean = sum / n;
  double ss = 0.0;
  for (const auto& r : report.records)
    if (r.feasible) ss += (r.error_ratio - mean) * (r.error_ratio - mean);
  const double sem = std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));

  CHECK(std::fabs(report.mean_error_ratio() - mean) <= 1e-12);
  CHECK(std::fabs(report.std_error_of_error() - sem) <= 1e-12);
  CHECK(report.infeasibility() == doctest::Approx(3.0 / 12.0));

  const std::string csv = report.to_csv();
  CHECK(csv.rfind("instance_seed,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
}

TEST_CASE("value function comparison export: SDDP column is a lower bound") {
  const ProblemInstance inst = ep(2);  // stage T = 2 comparison
  SddpConfig cfg;
  cfg.threshold = 0.01;
  cfg.max_iters = 25;
  cfg.backward_samples = 30;
  cfg.seed = 14;
  const SddpRun run = run_sddp(inst, cfg);

  std::vector<Vec> probes;
  for (int i = 0; i <= 16; ++i) probes.push_back(Vec{80.0 * i / 16.0});

  Rng rng(15);
  const std::vector<std::pair<std::string, const CutSet*>> methods{
      {"sddp", &run.state.q(2)}};
  const VfComparison cmp =
      export_value_function_comparison(inst, probes, methods, 100, rng);
  REQUIRE(cmp.rows.size() == probes.size());
  for (const auto& row : cmp.rows) {
    REQUIRE(row.exact_ok);
    CHECK(row.method_values[0] <=
          row.exact_mean + 3.0 * row.exact_std / std::sqrt(100.0));
  }

  const std::string csv = cmp.to_csv(inst);
  CHECK(csv.rfind("r_final,exact_mean,exact_std,sddp\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(probes.size()) + 1);

  // Single probe produces a single data row.
  const VfComparison one = export_value_function_comparison(
      inst, {Vec{40.0}}, methods, 10, rng);
  CHECK(one.rows.size() == 1);
}

TEST_CASE("atomic file write creates the final path") {
  const std::string path = "/tmp/msopt_test_atomic.txt";
  write_file_atomic(path, "payload\n");
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "payload");
  std::remove(path.c_str());
}

#pragma once

#include <map>
#include <optional>
#include <string>

#include "msopt/cuts.hpp"
#include "msopt/model.hpp"
#include "msopt/tree.hpp"

namespace msopt {

// |obj(candidate) - obj(reference)| / |obj(reference)|
double error_ratio(double candidate_obj, double msp_obj);

struct PolicyEvalResult {
  double objective = 0.0;
  bool feasible = true;
  std::string message;
};

// Root-down tree traversal solving each node with the stage's cut set given
// the parent state; objective is the probability-weighted sum of true stage
// costs. Any non-optimal node solve flags the run infeasible.
PolicyEvalResult evaluate_policy(const ProblemInstance& inst,
                                 std::span<const CutSet> cutsets,
                                 const ScenarioTree& tree,
                                 const SolverOptions& opts = {});

struct EvalRecord {
  std::uint64_t instance_seed = 0;
  double candidate_objective = 0.0;
  double reference_objective = 0.0;
  double error_ratio = 0.0;
  bool feasible = true;
  double candidate_seconds = 0.0;
  double reference_seconds = 0.0;
};

struct EvalReport {
  std::vector<EvalRecord> records;

  double mean_error_ratio() const;      // over feasible records
  double std_error_of_error() const;    // sample std / sqrt(n), feasible records
  double infeasibility() const;
  std::string to_csv() const;
  std::string summary_json(const std::string& method, const std::string& family,
                           int stages) const;
};

double infeasibility_ratio(const std::vector<EvalRecord>& records);

// Per probe point: exact stage-T value samples (mean/std over drawn
// realizations) next to each method's cut evaluation.
struct VfComparisonRow {
  Vec probe;
  double exact_mean = 0.0;
  double exact_std = 0.0;
  bool exact_ok = true;
  Vec method_values;
};

struct VfComparison {
  std::vector<std::string> method_names;
  std::vector<VfComparisonRow> rows;
  std::string to_csv(const ProblemInstance& inst) const;
};

VfComparison export_value_function_comparison(
    const ProblemInstance& inst, const std::vector<Vec>& probe_grid,
    const std::vector<std::pair<std::string, const CutSet*>>& cutsets_by_method,
    int samples, Rng& rng, const SolverOptions& opts = {});

// write-temp-then-rename
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace msopt

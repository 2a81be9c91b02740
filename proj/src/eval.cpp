#include "msopt/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "msopt/problems.hpp"
#include "msopt/solver.hpp"

namespace msopt {

double error_ratio(double candidate_obj, double msp_obj) {
  if (msp_obj == 0.0)
    throw std::invalid_argument("error_ratio: reference objective is zero");
  return std::fabs(candidate_obj - msp_obj) / std::fabs(msp_obj);
}

PolicyEvalResult evaluate_policy(const ProblemInstance& inst,
                                 std::span<const CutSet> cutsets,
                                 const ScenarioTree& tree,
                                 const SolverOptions& opts) {
  if (static_cast<int>(cutsets.size()) != inst.T - 1)
    throw std::invalid_argument("evaluate_policy: need one cut set per stage 2..T");

  PolicyEvalResult out;
  std::vector<Vec> node_state(tree.size());
  std::vector<double> uncond(tree.size(), 1.0);

  for (std::size_t i = 0; i < tree.size(); ++i) {
    const TreeNode& node = tree.nodes[i];
    const Vec empty;
    const Vec& x_prev = node.parent < 0 ? empty : node_state[node.parent];
    uncond[i] = node.parent < 0 ? node.prob : uncond[node.parent] * node.prob;

    const CutSet* cuts =
        node.stage < inst.T ? &cutsets[node.stage - 1] : nullptr;
    StageSubproblem sp;
    try {
      sp = build_stage_subproblem(inst, node.stage, x_prev, node.xi, cuts);
    } catch (const std::exception& e) {
      out.feasible = false;
      out.message = "node " + std::to_string(i) + ": " + e.what();
      return out;
    }
    const SolveResult res = solve_stage(sp, opts);
    if (!res.optimal()) {
      out.feasible = false;
      out.message = "node " + std::to_string(i) + " solve: " +
                    status_name(res.status);
      return out;
    }
    out.objective += uncond[i] * sp.stage_cost(res.x);
    node_state[i] = sp.extract_state(res.x);
  }
  return out;
}

double EvalReport::mean_error_ratio() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.feasible) {
      sum += r.error_ratio;
      ++n;
    }
  return n == 0 ? 0.0 : sum / n;
}

double EvalReport::std_error_of_error() const {
  const double mean = mean_error_ratio();
  double ss = 0.0;
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.feasible) {
      ss += (r.error_ratio - mean) * (r.error_ratio - mean);
      ++n;
    }
  if (n < 2) return 0.0;
  return std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
}

double EvalReport::infeasibility() const { return infeasibility_ratio(records); }

double infeasibility_ratio(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("infeasibility_ratio: no records");
  std::size_t bad = 0;
  for (const auto& r : records)
    if (!r.feasible) ++bad;
  return static_cast<double>(bad) / records.size();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "instance_seed,candidate_objective,reference_objective,error_ratio,"
        "feasible,candidate_seconds,reference_seconds\n";
  for (const auto& r : records) {
    os << r.instance_seed << ',' << r.candidate_objective << ','
       << r.reference_objective << ',' << r.error_ratio << ','
       << (r.feasible ? 1 : 0) << ',' << r.candidate_seconds << ','
       << r.reference_seconds << '\n';
  }
  return os.str();
}

std::string EvalReport::summary_json(const std::string& method,
                                     const std::string& family, int stages) const {
  nlohmann::json j;
  j["method"] = method;
  j["family"] = family;
  j["stages"] = stages;
  j["instances"] = records.size();
  j["mean_error_ratio"] = mean_error_ratio();
  j["std_error"] = std_error_of_error();
  j["infeasibility_ratio"] = infeasibility();
  return j.dump(2);
}

VfComparison export_value_function_comparison(
    const ProblemInstance& inst, const std::vector<Vec>& probe_grid,
    const std::vector<std::pair<std::string, const CutSet*>>& cutsets_by_method,
    int samples, Rng& rng, const SolverOptions& opts) {
  if (probe_grid.empty())
    throw std::invalid_argument("compare-vf: empty probe grid");
  VfComparison out;
  for (const auto& [name, cs] : cutsets_by_method) out.method_names.push_back(name);

  // One shared draw of stage-T realizations across probes, matching the
  // fixed-sample construction of the comparison figures.
  std::vector<Vec> draws;
  draws.reserve(samples);
  for (int s = 0; s < samples; ++s)
    draws.push_back(inst.xi_sampler(inst, inst.T, rng));

  for (const Vec& probe : probe_grid) {
    VfComparisonRow row;
    row.probe = probe;
    Vec values;
    values.reserve(samples);
    for (const Vec& xi : draws) {
      const StageSubproblem sp =
          build_stage_subproblem(inst, inst.T, probe, xi, nullptr);
      const SolveResult res = solve_stage(sp, opts);
      if (!res.optimal()) {
        row.exact_ok = false;
        break;
      }
      values.push_back(res.objective);
    }
    if (row.exact_ok) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= values.size();
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      row.exact_mean = mean;
      row.exact_std = values.size() > 1 ? std::sqrt(ss / (values.size() - 1)) : 0.0;
    }
    for (const auto& [name, cs] : cutsets_by_method)
      row.method_values.push_back(cs->evaluate(probe));
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string VfComparison::to_csv(const ProblemInstance& inst) const {
  std::ostringstream os;
  os.precision(17);
  const auto& labels = family_spec(inst.family).state_labels;
  for (const auto& l : labels) os << l << ',';
  os << "exact_mean,exact_std";
  for (const auto& name : method_names) os << ',' << name;
  os << '\n';
  for (const auto& row : rows) {
    for (double p : row.probe) os << p << ',';
    if (row.exact_ok)
      os << row.exact_mean << ',' << row.exact_std;
    else
      os << ',';
    for (double v : row.method_values) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os << content;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

}  // namespace msopt

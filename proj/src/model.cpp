#include "msopt/model.hpp"

#include <json.hpp>
#include <stdexcept>

namespace msopt {

const char* family_name(FamilyId f) {
  switch (f) {
    case FamilyId::EP: return "EP";
    case FamilyId::FP: return "FP";
    case FamilyId::PP: return "PP";
  }
  return "?";
}

FamilyId family_from_name(const std::string& name) {
  if (name == "EP" || name == "ep") return FamilyId::EP;
  if (name == "FP" || name == "fp") return FamilyId::FP;
  if (name == "PP" || name == "pp") return FamilyId::PP;
  throw std::invalid_argument("unknown family: " + name);
}

int family_state_dim(FamilyId f) {
  switch (f) {
    case FamilyId::EP: return 1;
    case FamilyId::FP: return 2;
    case FamilyId::PP: return 3;
  }
  return 0;
}

double DistributionParams::get(const std::string& name) const {
  for (const auto& [k, v] : entries)
    if (k == name) return v;
  throw std::invalid_argument("unknown distribution parameter: " + name);
}

Vec DistributionParams::values() const {
  Vec out;
  out.reserve(entries.size());
  for (const auto& [k, v] : entries) out.push_back(v);
  return out;
}

int StageSubproblem::add_var(std::string name, double cost, bool nonnegative) {
  var_names.push_back(std::move(name));
  linear_cost.push_back(cost);
  nonneg.push_back(nonnegative);
  return num_vars++;
}

double StageSubproblem::stage_cost(std::span<const double> x) const {
  double s = 0.0;
  for (int i = 0; i < num_vars; ++i)
    if (i != theta_var) s += linear_cost[i] * x[i];
  for (const auto& t : convex_terms) s += t.value(x[t.var]);
  return s;
}

double StageSubproblem::total_objective(std::span<const double> x) const {
  double s = 0.0;
  for (int i = 0; i < num_vars; ++i) s += linear_cost[i] * x[i];
  for (const auto& t : convex_terms) s += t.value(x[t.var]);
  return s;
}

Vec StageSubproblem::extract_state(std::span<const double> x) const {
  Vec out(state_extract.size());
  for (std::size_t d = 0; d < state_extract.size(); ++d)
    out[d] = state_extract[d] < 0 ? 0.0 : x[state_extract[d]];
  return out;
}

StageSubproblem build_stage_subproblem(const ProblemInstance& instance, int t,
                                       std::span<const double> x_prev,
                                       std::span<const double> xi,
                                       const CutSet* cuts) {
  if (t < 1 || t > instance.T)
    throw std::out_of_range("stage index out of range: " + std::to_string(t));
  if (t >= 2 && static_cast<int>(x_prev.size()) != instance.state_dim)
    throw std::invalid_argument("x_prev dimension mismatch");
  if ((cuts == nullptr) != (t == instance.T))
    throw std::invalid_argument(t == instance.T ? "cuts must be null at t = T"
                                                : "cuts required for t < T");

  std::span<const double> prev = t == 1 ? std::span<const double>{} : x_prev;
  StageSubproblem sp = instance.stage_builder(instance, t, prev, xi);
  sp.stage = t;
  sp.x_prev.assign(prev.begin(), prev.end());

  if (cuts != nullptr) {
    if (cuts->state_dim() != instance.state_dim)
      throw std::invalid_argument("cut set state dimension mismatch");
    sp.theta_var = sp.add_var("theta", 1.0, false);
    for (const Cut& c : cuts->cuts()) {
      StageRow row;
      row.sense = RowSense::Ge;
      row.coeffs.push(sp.theta_var, 1.0);
      for (int d = 0; d < instance.state_dim; ++d) {
        if (sp.state_extract[d] >= 0 && c.beta[d] != 0.0)
          row.coeffs.push(sp.state_extract[d], -c.beta[d]);
      }
      row.coeffs.rhs = c.alpha;
      sp.ineq_rows.push_back(std::move(row));
      ++sp.num_cut_rows;
    }
  }
  return sp;
}

LoweredStage lower_stage(const StageSubproblem& sp) {
  LoweredStage ls;
  ConvexProgram& p = ls.prog;
  p.num_vars = sp.num_vars;
  p.cost = sp.linear_cost;
  p.terms = sp.convex_terms;
  p.nonneg.assign(sp.nonneg.begin(), sp.nonneg.end());

  for (const auto& r : sp.eq_rows) {
    SparseRow row = r.coeffs;
    row.rhs = r.effective_rhs(sp.x_prev);
    p.eq.push_back(std::move(row));
  }
  for (const auto& r : sp.ineq_rows) {
    SparseRow row = r.coeffs;
    row.rhs = r.effective_rhs(sp.x_prev);
    if (r.sense == RowSense::Le) {
      for (auto& v : row.val) v = -v;
      row.rhs = -row.rhs;
      ls.ge_sign.push_back(-1.0);
    } else {
      ls.ge_sign.push_back(1.0);
    }
    p.ge.push_back(std::move(row));
  }
  return ls;
}

std::string instance_to_json(const ProblemInstance& inst, std::uint64_t seed) {
  nlohmann::json j;
  j["family"] = family_name(inst.family);
  j["stages"] = inst.T;
  j["seed"] = seed;
  nlohmann::json lambda = nlohmann::json::object();
  for (const auto& [k, v] : inst.lambda.entries) lambda[k] = v;
  j["lambda"] = lambda;
  return j.dump(2);
}

}  // namespace msopt

#include "msopt/problems.hpp"

#include <cmath>
#include <json.hpp>
#include <stdexcept>

namespace msopt {

namespace {

// --------------------------------------------------------------------------
// Energy planning: hydro/thermal generation against stochastic inflow,
// state is the end-of-stage reservoir level.
// --------------------------------------------------------------------------

StageSubproblem ep_builder(const ProblemInstance&, int t,
                           std::span<const double>, std::span<const double> xi) {
  const FamilySpec& spec = family_spec(FamilyId::EP);
  const double c_w = spec.fixed("c_W");
  const double c_h = spec.fixed("c_H");
  const double demand = spec.fixed("d");
  const double a = spec.fixed("a");
  const double b = spec.fixed("b");

  if (t == 1 ? !xi.empty() : xi.size() != 1)
    throw std::invalid_argument("EP: xi dimension mismatch");

  StageSubproblem sp;
  const int r_init = sp.add_var("r_init", 0.0, true);
  const int r_final = sp.add_var("r_final", 0.0, true);
  const int w = sp.add_var("W", c_w, true);
  const int h = sp.add_var("H", c_h, true);

  sp.convex_terms.push_back(
      ConvexTerm{r_final, TermKind::ExpAffine, -a, b, 0.0, 1.0});

  StageRow init;  // r_init = r0 (t=1) or r_prev + I_t
  init.sense = RowSense::Eq;
  init.coeffs.push(r_init, 1.0);
  if (t == 1) {
    init.coeffs.rhs = spec.fixed("r0_init");
  } else {
    init.coeffs.rhs = xi[0];
    init.coupling = {-1.0};
  }
  sp.eq_rows.push_back(std::move(init));

  StageRow balance;  // r_final = r_init - W
  balance.sense = RowSense::Eq;
  balance.coeffs.push(r_final, 1.0);
  balance.coeffs.push(r_init, -1.0);
  balance.coeffs.push(w, 1.0);
  balance.coeffs.rhs = 0.0;
  sp.eq_rows.push_back(std::move(balance));

  StageRow dem;  // W + H >= d
  dem.sense = RowSense::Ge;
  dem.coeffs.push(w, 1.0);
  dem.coeffs.push(h, 1.0);
  dem.coeffs.rhs = demand;
  sp.ineq_rows.push_back(std::move(dem));

  sp.state_extract = {r_final};
  return sp;
}

// --------------------------------------------------------------------------
// Financial planning: Merton-style consumption/investment with log utility,
// recast as minimization. State is (stock, bond) holdings.
// --------------------------------------------------------------------------

StageSubproblem fp_builder(const ProblemInstance& inst, int t,
                           std::span<const double>, std::span<const double> xi) {
  const FamilySpec& spec = family_spec(FamilyId::FP);
  const double w_init = spec.fixed("w_init");
  const double bond = fp_bond_factor(inst.T);

  if (t == 1 ? !xi.empty() : xi.size() != 1)
    throw std::invalid_argument("FP: xi dimension mismatch");

  StageSubproblem sp;
  if (t < inst.T) {
    const int s = sp.add_var("S", 0.0, true);
    const int b = sp.add_var("B", 0.0, true);
    const int c = sp.add_var("C", 0.0, true);
    sp.convex_terms.push_back(ConvexTerm{c, TermKind::NegLog, 0, 0, 0, 1.0});

    StageRow wealth;  // S + B + C = w_init or r_stock*S_prev + bond*B_prev
    wealth.sense = RowSense::Eq;
    wealth.coeffs.push(s, 1.0);
    wealth.coeffs.push(b, 1.0);
    wealth.coeffs.push(c, 1.0);
    if (t == 1) {
      wealth.coeffs.rhs = w_init;
    } else {
      wealth.coeffs.rhs = 0.0;
      wealth.coupling = {-xi[0], -bond};
    }
    sp.eq_rows.push_back(std::move(wealth));
    sp.state_extract = {s, b};
  } else {
    // Terminal split of wealth between last consumption and bequest.
    const int c = sp.add_var("C", 0.0, true);
    const int w = sp.add_var("W", 0.0, true);
    sp.convex_terms.push_back(ConvexTerm{c, TermKind::NegLog, 0, 0, 0, 1.0});
    sp.convex_terms.push_back(ConvexTerm{w, TermKind::NegLog, 0, 0, 0, 1.0});

    StageRow wealth;  // C + W = r_stock*S_prev + bond*B_prev
    wealth.sense = RowSense::Eq;
    wealth.coeffs.push(c, 1.0);
    wealth.coeffs.push(w, 1.0);
    wealth.coeffs.rhs = 0.0;
    wealth.coupling = {-xi[0], -bond};
    sp.eq_rows.push_back(std::move(wealth));
    sp.state_extract = {-1, -1};
  }
  return sp;
}

// --------------------------------------------------------------------------
// Production planning: three products, produce/outsource/store against
// stochastic demand under a shared resource cap. State is the storage vector.
// --------------------------------------------------------------------------

StageSubproblem pp_builder(const ProblemInstance& inst, int t,
                           std::span<const double>, std::span<const double> xi) {
  const FamilySpec& spec = family_spec(FamilyId::PP);
  const double resource = spec.fixed("r");
  const double a[3] = {spec.fixed("a1"), spec.fixed("a2"), spec.fixed("a3")};
  const double b[3] = {spec.fixed("b1"), spec.fixed("b2"), spec.fixed("b3")};
  const double c[3] = {spec.fixed("c1"), spec.fixed("c2"), spec.fixed("c3")};

  if (t == 1 ? !xi.empty() : xi.size() != 3)
    throw std::invalid_argument("PP: xi dimension mismatch");

  StageSubproblem sp;
  int produce[3], outsource[3], store[3];
  for (int i = 0; i < 3; ++i)
    produce[i] = sp.add_var("x" + std::to_string(i + 1), 0.0, true);
  for (int i = 0; i < 3; ++i)
    outsource[i] = sp.add_var("y" + std::to_string(i + 1), b[i], true);
  for (int i = 0; i < 3; ++i)
    store[i] = sp.add_var("s" + std::to_string(i + 1), t < inst.T ? c[i] : 0.0, true);

  StageRow cap;  // sum a_i x_i <= r
  cap.sense = RowSense::Le;
  for (int i = 0; i < 3; ++i) cap.coeffs.push(produce[i], a[i]);
  cap.coeffs.rhs = resource;
  sp.ineq_rows.push_back(std::move(cap));

  for (int i = 0; i < 3; ++i) {
    StageRow balance;  // s_i - x_i - y_i = s_prev_i - d_i
    balance.sense = RowSense::Eq;
    balance.coeffs.push(store[i], 1.0);
    balance.coeffs.push(produce[i], -1.0);
    balance.coeffs.push(outsource[i], -1.0);
    if (t == 1) {
      balance.coeffs.rhs = 0.0;
    } else {
      balance.coeffs.rhs = -xi[i];
      balance.coupling.assign(3, 0.0);
      balance.coupling[i] = -1.0;
    }
    sp.eq_rows.push_back(std::move(balance));
  }
  sp.state_extract = {store[0], store[1], store[2]};
  return sp;
}

double truncated_normal(Rng& rng, double mu, double sigma) {
  if (sigma <= 0.0) return std::max(0.0, mu);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double v = rng.normal(mu, sigma);
    if (v >= 0.0) return v;
  }
  return 0.0;
}

Vec ep_sampler(const ProblemInstance& inst, int t, Rng& rng) {
  if (t < 2 || t > inst.T) throw std::out_of_range("EP sampler: bad stage");
  return {truncated_normal(rng, inst.lambda.get("mu_I"), inst.lambda.get("sigma_I"))};
}

Vec fp_sampler(const ProblemInstance& inst, int t, Rng& rng) {
  if (t < 2 || t > inst.T) throw std::out_of_range("FP sampler: bad stage");
  const double mu = inst.lambda.get("mu");
  const double sigma = inst.lambda.get("sigma");
  const double dt = fp_dt(inst.T);
  const double log_r =
      rng.normal((mu - sigma * sigma / 2.0) * dt, sigma * std::sqrt(dt));
  return {std::exp(log_r)};
}

Vec pp_sampler(const ProblemInstance& inst, int t, Rng& rng) {
  if (t < 2 || t > inst.T) throw std::out_of_range("PP sampler: bad stage");
  Vec d(3);
  for (int i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    d[i] = truncated_normal(rng, inst.lambda.get("mu_d" + n),
                            inst.lambda.get("sigma_d" + n));
  }
  return d;
}

}  // namespace

double FamilySpec::fixed(const std::string& name) const {
  for (const auto& [k, v] : fixed_params)
    if (k == name) return v;
  throw std::invalid_argument("unknown fixed parameter: " + name);
}

const FamilySpec& family_spec(FamilyId f) {
  static const FamilySpec ep{
      FamilyId::EP,
      {{"r0_init", 40.0}, {"c_W", 2.0}, {"c_H", 7.0}, {"d", 20.0}, {"a", 0.1}, {"b", 5.0}},
      {{"mu_I", {15.0, 25.0}}, {"sigma_I", {4.0, 6.0}}},
      {"r_final"}};
  static const FamilySpec fp{
      FamilyId::FP,
      {{"w_init", 100.0}, {"eta", 1.0}, {"r_free", 1.03}},
      {{"mu", {0.04, 0.08}}, {"sigma", {0.15, 0.25}}},
      {"S", "B"}};
  static const FamilySpec pp{
      FamilyId::PP,
      {{"r", 10.0}, {"a1", 1.0}, {"a2", 2.0}, {"a3", 5.0}, {"b1", 6.0},
       {"b2", 12.0}, {"b3", 20.0}, {"c1", 3.0}, {"c2", 7.0}, {"c3", 10.0}},
      {{"mu_d1", {3.0, 6.0}}, {"sigma_d1", {0.2, 0.4}},
       {"mu_d2", {1.5, 4.0}}, {"sigma_d2", {0.1, 0.2}},
       {"mu_d3", {1.0, 2.0}}, {"sigma_d3", {0.05, 0.1}}},
      {"s1", "s2", "s3"}};
  switch (f) {
    case FamilyId::EP: return ep;
    case FamilyId::FP: return fp;
    case FamilyId::PP: return pp;
  }
  throw std::logic_error("unreachable");
}

double fp_dt(int T) { return 1.0 / (T - 1); }

double fp_bond_factor(int T) {
  return 1.0 + (family_spec(FamilyId::FP).fixed("r_free") - 1.0) * fp_dt(T);
}

ProblemInstance make_instance(FamilyId family, int T, DistributionParams lambda) {
  if (T < 2) throw std::invalid_argument("instance needs T >= 2");
  const FamilySpec& spec = family_spec(family);
  if (lambda.size() != spec.priors.size())
    throw std::invalid_argument("lambda entry count mismatch");
  for (const auto& [name, value] : lambda.entries) {
    if (name.rfind("sigma", 0) == 0 && value < 0.0)
      throw std::invalid_argument("negative standard deviation: " + name);
  }

  ProblemInstance inst;
  inst.family = family;
  inst.T = T;
  inst.state_dim = family_state_dim(family);
  inst.lambda = std::move(lambda);
  switch (family) {
    case FamilyId::EP:
      inst.xi_dim = 1;
      inst.trivial_floor = 0.0;
      inst.stage_builder = ep_builder;
      inst.xi_sampler = ep_sampler;
      break;
    case FamilyId::FP:
      inst.xi_dim = 1;
      inst.trivial_floor = -1e4;
      inst.state_total_floor = 0.1;
      inst.stage_builder = fp_builder;
      inst.xi_sampler = fp_sampler;
      break;
    case FamilyId::PP:
      inst.xi_dim = 3;
      inst.trivial_floor = 0.0;
      inst.stage_builder = pp_builder;
      inst.xi_sampler = pp_sampler;
      break;
  }
  return inst;
}

ProblemInstance sample_instance(FamilyId family, int T, Rng& rng) {
  const FamilySpec& spec = family_spec(family);
  DistributionParams lambda;
  for (const auto& [name, range] : spec.priors)
    lambda.entries.emplace_back(name, rng.uniform(range.first, range.second));
  return make_instance(family, T, std::move(lambda));
}

ProblemInstance instance_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  const FamilyId family = family_from_name(j.at("family").get<std::string>());
  const int T = j.at("stages").get<int>();
  const FamilySpec& spec = family_spec(family);
  DistributionParams lambda;
  for (const auto& [name, range] : spec.priors)
    lambda.entries.emplace_back(name, j.at("lambda").at(name).get<double>());
  return make_instance(family, T, std::move(lambda));
}

double stage_objective_value(const ProblemInstance& inst, int t,
                             std::span<const double> x, std::span<const double> xi) {
  (void)xi;
  const FamilySpec& spec = family_spec(inst.family);
  switch (inst.family) {
    case FamilyId::EP: {
      const double r_final = x[1], w = x[2], h = x[3];
      return spec.fixed("c_W") * w + spec.fixed("c_H") * h +
             std::exp(-spec.fixed("a") * r_final + spec.fixed("b"));
    }
    case FamilyId::FP: {
      auto neg_log = [](double value) {
        if (value <= 0.0) throw std::domain_error("FP utility: log of nonpositive");
        return -std::log(value);
      };
      if (t < inst.T) return neg_log(x[2]);
      return neg_log(x[0]) + neg_log(x[1]);
    }
    case FamilyId::PP: {
      double cost = 0.0;
      for (int i = 0; i < 3; ++i) {
        cost += spec.fixed("b" + std::to_string(i + 1)) * x[3 + i];
        if (t < inst.T) cost += spec.fixed("c" + std::to_string(i + 1)) * x[6 + i];
      }
      return cost;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace msopt

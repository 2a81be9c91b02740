#pragma once

#include "msopt/model.hpp"
#include "msopt/rng.hpp"

namespace msopt {

// Fixed parameters and sampling priors of one benchmark family.
struct FamilySpec {
  FamilyId family;
  std::vector<std::pair<std::string, double>> fixed_params;
  // per-lambda uniform prior ranges, in DistributionParams order
  std::vector<std::pair<std::string, std::pair<double, double>>> priors;
  std::vector<std::string> state_labels;

  double fixed(const std::string& name) const;
};

const FamilySpec& family_spec(FamilyId f);

// Draws lambda from the family priors and returns the ready instance.
ProblemInstance sample_instance(FamilyId family, int T, Rng& rng);

// Instance with explicit lambda (tests, zero-variance constructions, CLI
// instance files). Validates entry count; standard deviations must be >= 0
// (sampled instances are always strictly positive).
ProblemInstance make_instance(FamilyId family, int T, DistributionParams lambda);

ProblemInstance instance_from_json(const std::string& json_text);

// Exact stage cost f_t(x, xi) from the stagewise formulas.
double stage_objective_value(const ProblemInstance& inst, int t,
                             std::span<const double> x, std::span<const double> xi);

// Per-stage bond growth: one plus the net risk-free rate over dt.
double fp_bond_factor(int T);
double fp_dt(int T);

}  // namespace msopt

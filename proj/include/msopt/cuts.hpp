#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msopt/convex.hpp"

namespace msopt {

enum class CutOrigin { Trivial, Sddp, Generated };

// One affine minorant beta.x + alpha of a value function.
struct Cut {
  Vec beta;
  double alpha = 0.0;
  CutOrigin origin = CutOrigin::Sddp;
};

// Piecewise-linear-convex value function approximation: pointwise max over
// cuts. Seeded with a trivial cut so the epigraph variable stays bounded.
class CutSet {
 public:
  CutSet() = default;
  CutSet(int stage, Cut trivial);

  // max_k beta_k.x + alpha_k. Ties resolve to the lowest cut index so
  // activation counts are reproducible.
  double evaluate(std::span<const double> x) const;
  double evaluate_tracked(std::span<const double> x);  // also bumps the argmax count
  int argmax(std::span<const double> x) const;

  void add(Cut c);

  // Level-1 dominance: keep exactly the cuts attaining the max at >= 1
  // trial point. The returned set evaluates identically at every trial point.
  CutSet level1_select(const std::vector<Vec>& trial_points) const;

  const std::vector<Cut>& cuts() const { return cuts_; }
  const std::vector<std::uint64_t>& activation_counts() const { return counts_; }
  int stage() const { return stage_; }
  int state_dim() const { return cuts_.empty() ? 0 : static_cast<int>(cuts_.front().beta.size()); }
  std::size_t size() const { return cuts_.size(); }

 private:
  std::vector<Cut> cuts_;
  std::vector<std::uint64_t> counts_;
  int stage_ = 0;  // the stage whose value function Q_stage this set approximates
};

// Trivial seeds: Q >= 0 holds for the nonnegative-cost families; FP's
// recast-maximization value function is negative, so its seed is a large
// negative constant instead.
Cut trivial_cut_nonnegative(int state_dim);
Cut trivial_cut_floor(int state_dim, double floor_value);

}  // namespace msopt

#include "msopt/cuts.hpp"

#include <cmath>
#include <stdexcept>

namespace msopt {

namespace {
void check_finite(const Cut& c) {
  for (double v : c.beta)
    if (!std::isfinite(v)) throw std::invalid_argument("cut with non-finite beta");
  if (!std::isfinite(c.alpha)) throw std::invalid_argument("cut with non-finite alpha");
}
}  // namespace

CutSet::CutSet(int stage, Cut trivial) : stage_(stage) {
  check_finite(trivial);
  cuts_.push_back(std::move(trivial));
  counts_.push_back(0);
}

int CutSet::argmax(std::span<const double> x) const {
  if (cuts_.empty()) throw std::logic_error("evaluate on empty CutSet");
  if (x.size() != cuts_.front().beta.size())
    throw std::invalid_argument("CutSet::evaluate dimension mismatch");
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cuts_.size(); ++k) {
    double v = cuts_[k].alpha;
    for (std::size_t d = 0; d < x.size(); ++d) v += cuts_[k].beta[d] * x[d];
    if (v > best_val) {
      best_val = v;
      best = static_cast<int>(k);
    }
  }
  return best;
}

double CutSet::evaluate(std::span<const double> x) const {
  const Cut& c = cuts_[argmax(x)];
  double v = c.alpha;
  for (std::size_t d = 0; d < x.size(); ++d) v += c.beta[d] * x[d];
  return v;
}

double CutSet::evaluate_tracked(std::span<const double> x) {
  const int k = argmax(x);
  ++counts_[k];
  const Cut& c = cuts_[k];
  double v = c.alpha;
  for (std::size_t d = 0; d < x.size(); ++d) v += c.beta[d] * x[d];
  return v;
}

void CutSet::add(Cut c) {
  check_finite(c);
  if (!cuts_.empty() && c.beta.size() != cuts_.front().beta.size())
    throw std::invalid_argument("CutSet::add dimension mismatch");
  cuts_.push_back(std::move(c));
  counts_.push_back(0);
}

CutSet CutSet::level1_select(const std::vector<Vec>& trial_points) const {
  if (trial_points.empty())
    throw std::invalid_argument("level1_select needs at least one trial point");
  std::vector<bool> keep(cuts_.size(), false);
  for (const auto& x : trial_points) keep[argmax(x)] = true;
  CutSet out;
  out.stage_ = stage_;
  for (std::size_t k = 0; k < cuts_.size(); ++k) {
    if (keep[k]) {
      out.cuts_.push_back(cuts_[k]);
      out.counts_.push_back(counts_[k]);
    }
  }
  return out;
}

Cut trivial_cut_nonnegative(int state_dim) {
  return Cut{Vec(state_dim, 0.0), 0.0, CutOrigin::Trivial};
}

Cut trivial_cut_floor(int state_dim, double floor_value) {
  return Cut{Vec(state_dim, 0.0), floor_value, CutOrigin::Trivial};
}

}  // namespace msopt

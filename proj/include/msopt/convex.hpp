#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace msopt {

using Vec = std::vector<double>;

// Separable convex objective term attached to a single variable.
enum class TermKind { ExpAffine, NegLog, NegPower };

struct ConvexTerm {
  int var = 0;
  TermKind kind = TermKind::ExpAffine;
  double a = 0.0;       // ExpAffine: weight * exp(a*x + b)
  double b = 0.0;
  double eta = 0.0;     // NegPower: weight * -x^(1-eta)/(1-eta), 0 <= eta < 1
  double weight = 1.0;  // scenario probability in deterministic equivalents

  // Exact value; throws on domain violation (log of nonpositive).
  double value(double x) const {
    switch (kind) {
      case TermKind::ExpAffine:
        return weight * std::exp(a * x + b);
      case TermKind::NegLog:
        if (x <= 0.0) throw std::domain_error("neg_log term evaluated at x <= 0");
        return weight * -std::log(x);
      case TermKind::NegPower:
        if (x < 0.0) throw std::domain_error("neg_power term evaluated at x < 0");
        return weight * -std::pow(x, 1.0 - eta) / (1.0 - eta);
    }
    return 0.0;
  }

  // Guarded value/derivatives for interior-point iterates. The guard only
  // matters at the x=0 boundary during line search; converged iterates are
  // interior so reported objectives use the exact formulas above.
  double guarded_value(double x) const {
    if (kind == TermKind::ExpAffine) return weight * std::exp(std::min(a * x + b, 700.0));
    const double xs = std::max(x, kDomainEps);
    if (kind == TermKind::NegLog) return weight * -std::log(xs);
    return weight * -std::pow(xs, 1.0 - eta) / (1.0 - eta);
  }
  double deriv(double x) const {
    if (kind == TermKind::ExpAffine) return weight * a * std::exp(std::min(a * x + b, 700.0));
    const double xs = std::max(x, kDomainEps);
    if (kind == TermKind::NegLog) return weight * -1.0 / xs;
    return weight * -std::pow(xs, -eta);
  }
  double second(double x) const {
    if (kind == TermKind::ExpAffine) return weight * a * a * std::exp(std::min(a * x + b, 700.0));
    const double xs = std::max(x, kDomainEps);
    if (kind == TermKind::NegLog) return weight * 1.0 / (xs * xs);
    return weight * eta * std::pow(xs, -eta - 1.0);
  }
  // Terms defined only for positive arguments need the variable sign-restricted.
  bool needs_positive() const { return kind != TermKind::ExpAffine; }

  static constexpr double kDomainEps = 1e-9;
};

struct SparseRow {
  std::vector<int> idx;
  std::vector<double> val;
  double rhs = 0.0;

  void push(int i, double v) {
    idx.push_back(i);
    val.push_back(v);
  }
  double dot(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) s += val[k] * x[idx[k]];
    return s;
  }
};

// min  cost.x + sum_j terms_j(x)
// s.t. eq:  a.x == rhs      ge:  a.x >= rhs      x_i >= 0 for nonneg[i]
struct ConvexProgram {
  int num_vars = 0;
  Vec cost;
  std::vector<ConvexTerm> terms;
  std::vector<SparseRow> eq;
  std::vector<SparseRow> ge;
  std::vector<bool> nonneg;

  double objective(std::span<const double> x) const {
    double s = 0.0;
    for (int i = 0; i < num_vars; ++i) s += cost[i] * x[i];
    for (const auto& t : terms) s += t.value(x[t.var]);
    return s;
  }
};

}  // namespace msopt

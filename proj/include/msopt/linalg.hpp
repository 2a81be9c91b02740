#pragma once

#include <cmath>
#include <vector>

#include "msopt/kernels.hpp"

namespace msopt {

// Dense LU with partial pivoting, row-major storage. Sized for stage-level
// KKT systems (a few hundred unknowns at most).
class DenseLu {
 public:
  bool factorize(int n, std::vector<double> a) {
    n_ = n;
    a_ = std::move(a);
    piv_.resize(n);
    for (int col = 0; col < n; ++col) {
      int pivot = col;
      double best = std::fabs(a_[col * n + col]);
      for (int r = col + 1; r < n; ++r) {
        const double v = std::fabs(a_[r * n + col]);
        if (v > best) {
          best = v;
          pivot = r;
        }
      }
      if (best < 1e-300 || !std::isfinite(best)) return false;
      piv_[col] = pivot;
      if (pivot != col) {
        for (int j = 0; j < n; ++j) std::swap(a_[col * n + j], a_[pivot * n + j]);
      }
      const double d = a_[col * n + col];
      for (int r = col + 1; r < n; ++r) {
        const double f = a_[r * n + col] / d;
        a_[r * n + col] = f;
        if (f != 0.0)
          kernels::axpy(&a_[r * n + col + 1], -f, &a_[col * n + col + 1],
                        static_cast<std::size_t>(n - col - 1));
      }
    }
    return true;
  }

  void solve(std::vector<double>& b) const {
    // Apply the full row permutation before substitution: the stored L
    // entries are in final row order.
    for (int col = 0; col < n_; ++col)
      if (piv_[col] != col) std::swap(b[col], b[piv_[col]]);
    for (int col = 0; col < n_; ++col) {
      const double bc = b[col];
      if (bc != 0.0)
        for (int r = col + 1; r < n_; ++r) b[r] -= a_[r * n_ + col] * bc;
    }
    for (int r = n_ - 1; r >= 0; --r) {
      double s = b[r];
      const double* row = &a_[r * n_];
      for (int j = r + 1; j < n_; ++j) s -= row[j] * b[j];
      b[r] = s / row[r];
    }
  }

  int size() const { return n_; }

 private:
  int n_ = 0;
  std::vector<double> a_;
  std::vector<int> piv_;
};

}  // namespace msopt

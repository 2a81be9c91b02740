#include "msopt/sparse_ldl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msopt {

void SparseSymMatrix::assemble(int n, std::vector<std::pair<int, int>> coords) {
  n_ = n;
  for (auto& [r, c] : coords) {
    if (r > c) std::swap(r, c);
  }
  std::sort(coords.begin(), coords.end(),
            [](const auto& a, const auto& b) {
              return a.second != b.second ? a.second < b.second : a.first < b.first;
            });
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());

  ap_.assign(n + 1, 0);
  ai_.clear();
  ai_.reserve(coords.size());
  for (const auto& [r, c] : coords) {
    ++ap_[c + 1];
    ai_.push_back(r);
  }
  for (int j = 0; j < n; ++j) ap_[j + 1] += ap_[j];
  ax_.assign(coords.size(), 0.0);
}

void SparseSymMatrix::clear_values() { std::fill(ax_.begin(), ax_.end(), 0.0); }

int SparseSymMatrix::find(int row, int col) const {
  const int lo = ap_[col];
  const int hi = ap_[col + 1];
  auto it = std::lower_bound(ai_.begin() + lo, ai_.begin() + hi, row);
  if (it == ai_.begin() + hi || *it != row)
    throw std::logic_error("SparseSymMatrix::add outside assembled pattern");
  return static_cast<int>(it - ai_.begin());
}

void SparseSymMatrix::add(int row, int col, double v) {
  if (row > col) std::swap(row, col);
  ax_[find(row, col)] += v;
}

void SparseSymMatrix::multiply_add(const double* x, double* y) const {
  for (int j = 0; j < n_; ++j) {
    for (int p = ap_[j]; p < ap_[j + 1]; ++p) {
      const int i = ai_[p];
      const double v = ax_[p];
      y[i] += v * x[j];
      if (i != j) y[j] += v * x[i];
    }
  }
}

void SparseLdl::analyze(const SparseSymMatrix& a) {
  n_ = a.size();
  const auto& ap = a.col_ptr();
  const auto& ai = a.row_idx();
  parent_.assign(n_, -1);
  lnz_.assign(n_, 0);
  flag_.assign(n_, -1);

  // Elimination tree and column counts of L.
  for (int k = 0; k < n_; ++k) {
    parent_[k] = -1;
    flag_[k] = k;
    for (int p = ap[k]; p < ap[k + 1]; ++p) {
      int i = ai[p];
      while (i < k && flag_[i] != k) {
        if (parent_[i] == -1) parent_[i] = k;
        ++lnz_[i];
        flag_[i] = k;
        i = parent_[i];
      }
    }
  }
  lp_.assign(n_ + 1, 0);
  for (int k = 0; k < n_; ++k) lp_[k + 1] = lp_[k] + lnz_[k];
  li_.assign(lp_[n_], 0);
  lx_.assign(lp_[n_], 0.0);
  d_.assign(n_, 0.0);
  y_.assign(n_, 0.0);
  pattern_.assign(n_, 0);
}

bool SparseLdl::factorize(const SparseSymMatrix& a) {
  const auto& ap = a.col_ptr();
  const auto& ai = a.row_idx();
  const auto& ax = a.values();
  std::vector<int> lnz_work(n_, 0);
  std::fill(flag_.begin(), flag_.end(), -1);
  std::fill(y_.begin(), y_.end(), 0.0);

  for (int k = 0; k < n_; ++k) {
    int top = n_;
    flag_[k] = k;
    for (int p = ap[k]; p < ap[k + 1]; ++p) {
      const int col = ai[p];  // col <= k in the upper triangle
      y_[col] += ax[p];
      int len = 0;
      int i = col;
      while (i < k && flag_[i] != k) {
        pattern_[len++] = i;
        flag_[i] = k;
        i = parent_[i];
      }
      while (len > 0) pattern_[--top] = pattern_[--len];
    }
    d_[k] = y_[k];
    y_[k] = 0.0;
    for (; top < n_; ++top) {
      const int i = pattern_[top];
      const double yi = y_[i];
      y_[i] = 0.0;
      const int p2 = lp_[i] + lnz_work[i];
      for (int p = lp_[i]; p < p2; ++p) y_[li_[p]] -= lx_[p] * yi;
      const double lki = yi / d_[i];
      d_[k] -= lki * yi;
      li_[p2] = k;
      lx_[p2] = lki;
      ++lnz_work[i];
    }
    if (d_[k] == 0.0 || !std::isfinite(d_[k])) return false;
  }
  return true;
}

void SparseLdl::solve(std::vector<double>& b) const {
  for (int j = 0; j < n_; ++j) {
    const double bj = b[j];
    if (bj != 0.0)
      for (int p = lp_[j]; p < lp_[j + 1]; ++p) b[li_[p]] -= lx_[p] * bj;
  }
  for (int j = 0; j < n_; ++j) b[j] /= d_[j];
  for (int j = n_ - 1; j >= 0; --j) {
    double s = b[j];
    for (int p = lp_[j]; p < lp_[j + 1]; ++p) s -= lx_[p] * b[li_[p]];
    b[j] = s;
  }
}

}  // namespace msopt

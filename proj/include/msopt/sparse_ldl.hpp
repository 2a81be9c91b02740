#pragma once

#include <cstdint>
#include <vector>

namespace msopt {

// Symmetric sparse matrix, upper triangle in CSC with fixed pattern.
// assemble() merges duplicate coordinate contributions once; set()/add()
// then refill values in place each interior-point iteration.
class SparseSymMatrix {
 public:
  void assemble(int n, std::vector<std::pair<int, int>> coords);

  void clear_values();
  void add(int row, int col, double v);  // row <= col

  int size() const { return n_; }
  const std::vector<int>& col_ptr() const { return ap_; }
  const std::vector<int>& row_idx() const { return ai_; }
  std::vector<double>& values() { return ax_; }
  const std::vector<double>& values() const { return ax_; }

  // y += K x using the full symmetric operator (both triangles).
  void multiply_add(const double* x, double* y) const;

 private:
  int find(int row, int col) const;

  int n_ = 0;
  std::vector<int> ap_, ai_;
  std::vector<double> ax_;
};

// LDL^T factorization for symmetric quasi-definite systems (up-looking,
// elimination-tree driven; no pivoting, which regularized KKT matrices
// do not need). Symbolic analysis runs once per pattern.
class SparseLdl {
 public:
  void analyze(const SparseSymMatrix& a);
  bool factorize(const SparseSymMatrix& a);
  void solve(std::vector<double>& b) const;

 private:
  int n_ = 0;
  std::vector<int> parent_, lnz_, lp_, li_, flag_, pattern_;
  std::vector<double> lx_, d_, y_;
};

}  // namespace msopt

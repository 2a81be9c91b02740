#include "msopt/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <cstdio>
#include <memory>

#include "msopt/linalg.hpp"
#include "msopt/sparse_ldl.hpp"

namespace msopt {

namespace {

constexpr double kPrimalReg = 1e-9;
constexpr double kDualReg = 1e-9;
constexpr double kBoundaryFraction = 0.995;

double inf_norm(const Vec& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

// Shared assembly interface for the augmented system
//   [ M   A^T ] [dx]   [rx]          M = H + Dx + G^T Ds G + reg
//   [ A  -d I ] [ y] = [rv],         dv = -y
// Stage problems use a dense LU; tree-sized deterministic equivalents use
// the sparse LDL^T with their natural leaf-to-root ordering.
class KktBackend {
 public:
  virtual ~KktBackend() = default;
  virtual void init(const ConvexProgram& p) = 0;
  virtual bool factorize(const ConvexProgram& p, const Vec& diag_m, const Vec& ds) = 0;
  virtual void solve(Vec& rhs) const = 0;  // in place, size n + mE
};

class DenseKkt final : public KktBackend {
 public:
  void init(const ConvexProgram& p) override {
    n_ = p.num_vars;
    mi_ = static_cast<int>(p.ge.size());
    me_ = static_cast<int>(p.eq.size());
    dim_ = n_ + mi_ + me_;
    k_.assign(static_cast<std::size_t>(dim_) * dim_, 0.0);
  }

  void refine(Vec& x, const Vec& rhs) const {
    Vec res(dim_);
    for (int i = 0; i < dim_; ++i) {
      double s = rhs[i];
      const double* row = &k_[static_cast<std::size_t>(i) * dim_];
      for (int j = 0; j < dim_; ++j) s -= row[j] * x[j];
      res[i] = s;
    }
    lu_.solve(res);
    for (int i = 0; i < dim_; ++i) x[i] += res[i];
  }

  bool factorize(const ConvexProgram& p, const Vec& diag_m,
                 const Vec& su_ratio) override {
    std::fill(k_.begin(), k_.end(), 0.0);
    for (int i = 0; i < n_; ++i) k_[i * dim_ + i] = diag_m[i];
    for (int r = 0; r < mi_; ++r) {
      const auto& row = p.ge[r];
      for (std::size_t a = 0; a < row.idx.size(); ++a) {
        k_[(n_ + r) * dim_ + row.idx[a]] = row.val[a];
        k_[row.idx[a] * dim_ + (n_ + r)] = row.val[a];
      }
      k_[(n_ + r) * dim_ + (n_ + r)] = -(su_ratio[r] + kDualReg);
    }
    for (int r = 0; r < me_; ++r) {
      const auto& row = p.eq[r];
      for (std::size_t a = 0; a < row.idx.size(); ++a) {
        k_[(n_ + mi_ + r) * dim_ + row.idx[a]] = row.val[a];
        k_[row.idx[a] * dim_ + (n_ + mi_ + r)] = row.val[a];
      }
      k_[(n_ + mi_ + r) * dim_ + (n_ + mi_ + r)] = -kDualReg;
    }
    return lu_.factorize(dim_, k_);
  }

  void solve(Vec& rhs) const override {
    Vec x = rhs;
    lu_.solve(x);
    refine(x, rhs);
    refine(x, rhs);
    rhs = std::move(x);
  }

 private:
  int n_ = 0, mi_ = 0, me_ = 0, dim_ = 0;
  std::vector<double> k_;
  DenseLu lu_;
};

class SparseKkt final : public KktBackend {
 public:
  void init(const ConvexProgram& p) override {
    n_ = p.num_vars;
    mi_ = static_cast<int>(p.ge.size());
    me_ = static_cast<int>(p.eq.size());
    const int dim = n_ + mi_ + me_;
    std::vector<std::pair<int, int>> coords;
    for (int i = 0; i < dim; ++i) coords.emplace_back(i, i);
    for (int r = 0; r < mi_; ++r)
      for (int i : p.ge[r].idx) coords.emplace_back(i, n_ + r);
    for (int r = 0; r < me_; ++r)
      for (int i : p.eq[r].idx) coords.emplace_back(i, n_ + mi_ + r);
    mat_.assemble(dim, std::move(coords));
    ldl_.analyze(mat_);
  }

  bool factorize(const ConvexProgram& p, const Vec& diag_m,
                 const Vec& su_ratio) override {
    mat_.clear_values();
    for (int i = 0; i < n_; ++i) mat_.add(i, i, diag_m[i]);
    for (int r = 0; r < mi_; ++r) {
      const auto& row = p.ge[r];
      for (std::size_t a = 0; a < row.idx.size(); ++a)
        mat_.add(row.idx[a], n_ + r, row.val[a]);
      mat_.add(n_ + r, n_ + r, -(su_ratio[r] + kDualReg));
    }
    for (int r = 0; r < me_; ++r) {
      const auto& row = p.eq[r];
      for (std::size_t a = 0; a < row.idx.size(); ++a)
        mat_.add(row.idx[a], n_ + mi_ + r, row.val[a]);
      mat_.add(n_ + mi_ + r, n_ + mi_ + r, -kDualReg);
    }
    return ldl_.factorize(mat_);
  }

  void solve(Vec& rhs) const override {
    Vec x = rhs;
    ldl_.solve(x);
    // One round of iterative refinement against the assembled operator.
    Vec res = rhs;
    Vec kx(rhs.size(), 0.0);
    mat_.multiply_add(x.data(), kx.data());
    for (std::size_t i = 0; i < rhs.size(); ++i) res[i] -= kx[i];
    ldl_.solve(res);
    for (std::size_t i = 0; i < rhs.size(); ++i) x[i] += res[i];
    rhs = std::move(x);
  }

 private:
  int n_ = 0, mi_ = 0, me_ = 0;
  SparseSymMatrix mat_;
  SparseLdl ldl_;
};

struct Iterate {
  Vec x, s, v, u, w;  // primal, slacks, eq duals, ge duals, bound duals
};

class InteriorPoint {
 public:
  InteriorPoint(const ConvexProgram& p, const SolverOptions& opts)
      : p_(p), opts_(opts), n_(p.num_vars), me_(static_cast<int>(p.eq.size())),
        mi_(static_cast<int>(p.ge.size())) {
    bounded_.assign(n_, false);
    for (int i = 0; i < n_; ++i) bounded_[i] = p.nonneg[i];
    for (const auto& t : p.terms)
      if (t.needs_positive()) bounded_[t.var] = true;
    nb_ = static_cast<int>(std::count(bounded_.begin(), bounded_.end(), true));
    backend_ = opts.use_sparse ? std::unique_ptr<KktBackend>(new SparseKkt)
                               : std::unique_ptr<KktBackend>(new DenseKkt);
    backend_->init(p);
  }

  SolveResult run();

 private:
  double guarded_objective(const Vec& x) const {
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += p_.cost[i] * x[i];
    for (const auto& t : p_.terms) s += t.guarded_value(x[t.var]);
    return s;
  }

  void gradient_hessian(const Vec& x, Vec& grad, Vec& hess) const {
    grad = p_.cost;
    std::fill(hess.begin(), hess.end(), 0.0);
    for (const auto& t : p_.terms) {
      grad[t.var] += t.deriv(x[t.var]);
      hess[t.var] += t.second(x[t.var]);
    }
  }

  void residuals(const Iterate& it, const Vec& grad, Vec& rd, Vec& re, Vec& ri) const {
    rd = grad;
    for (int r = 0; r < me_; ++r) {
      const auto& row = p_.eq[r];
      for (std::size_t a = 0; a < row.idx.size(); ++a)
        rd[row.idx[a]] -= row.val[a] * it.v[r];
    }
    for (int r = 0; r < mi_; ++r) {
      const auto& row = p_.ge[r];
      for (std::size_t a = 0; a < row.idx.size(); ++a)
        rd[row.idx[a]] -= row.val[a] * it.u[r];
    }
    for (int i = 0; i < n_; ++i)
      if (bounded_[i]) rd[i] -= it.w[i];
    re.assign(me_, 0.0);
    for (int r = 0; r < me_; ++r) re[r] = p_.eq[r].dot(it.x) - p_.eq[r].rhs;
    ri.assign(mi_, 0.0);
    for (int r = 0; r < mi_; ++r) ri[r] = p_.ge[r].dot(it.x) - it.s[r] - p_.ge[r].rhs;
  }

  // Solves the augmented Newton system (primal, inequality dual, equality
  // dual blocks) for given complementarity targets. The unreduced form keeps
  // extreme complementarity ratios on the diagonal where they are harmless.
  void newton_step(const Vec& rd, const Vec& re, const Vec& ri, const Iterate& it,
                   const Vec& cu, const Vec& cw, Vec& dx, Vec& dv, Vec& ds,
                   Vec& du, Vec& dw) const {
    Vec rhs(n_ + mi_ + me_, 0.0);
    for (int i = 0; i < n_; ++i) rhs[i] = -rd[i];
    for (int i = 0; i < n_; ++i)
      if (bounded_[i]) rhs[i] += cw[i] / it.x[i];
    for (int r = 0; r < mi_; ++r) rhs[n_ + r] = cu[r] / it.u[r] - ri[r];
    for (int r = 0; r < me_; ++r) rhs[n_ + mi_ + r] = -re[r];

    backend_->solve(rhs);

    dx.assign(rhs.begin(), rhs.begin() + n_);
    du.assign(mi_, 0.0);
    for (int r = 0; r < mi_; ++r) du[r] = -rhs[n_ + r];
    dv.assign(me_, 0.0);
    for (int r = 0; r < me_; ++r) dv[r] = -rhs[n_ + mi_ + r];
    ds.assign(mi_, 0.0);
    for (int r = 0; r < mi_; ++r) ds[r] = p_.ge[r].dot(dx) + ri[r];
    dw.assign(n_, 0.0);
    for (int i = 0; i < n_; ++i)
      if (bounded_[i]) dw[i] = (cw[i] - it.w[i] * dx[i]) / it.x[i];
  }

  static double max_step(const Vec& z, const Vec& dz, const std::vector<bool>* mask) {
    double a = 1.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (mask && !(*mask)[i]) continue;
      if (dz[i] < 0.0) a = std::min(a, -z[i] / dz[i]);
    }
    return a;
  }

  // Active-set Newton cleanup: pin the active constraints and bounds read
  // off the iterate, solve the equality-constrained KKT system exactly, and
  // accept only if feasibility, dual signs, and stationarity all check out.
  bool polish(const Iterate& start, SolveResult& out) const {
    std::vector<int> act_ineq, act_bnd;
    std::vector<bool> positive_var(n_, false);
    for (const auto& t : p_.terms)
      if (t.needs_positive()) positive_var[t.var] = true;
    for (int r = 0; r < mi_; ++r)
      if (start.s[r] <= start.u[r]) act_ineq.push_back(r);
    for (int i = 0; i < n_; ++i) {
      if (!bounded_[i] || start.x[i] > start.w[i]) continue;
      if (positive_var[i]) return false;  // interior-only variable at its bound
      act_bnd.push_back(i);
    }
    const int k1 = static_cast<int>(act_ineq.size());
    const int k2 = static_cast<int>(act_bnd.size());
    const int dim = n_ + me_ + k1 + k2;
    if (dim > 2000) return false;

    Vec x = start.x, v = start.v;
    Vec ua(k1), wa(k2);
    for (int j = 0; j < k1; ++j) ua[j] = start.u[act_ineq[j]];
    for (int j = 0; j < k2; ++j) wa[j] = start.w[act_bnd[j]];

    Vec grad(n_), hess(n_);
    for (int round = 0; round < 8; ++round) {
      grad = p_.cost;
      std::fill(hess.begin(), hess.end(), 0.0);
      for (const auto& t : p_.terms) {
        grad[t.var] += t.deriv(x[t.var]);
        hess[t.var] += t.second(x[t.var]);
      }
      Vec r1 = grad;
      for (int r = 0; r < me_; ++r)
        for (std::size_t a = 0; a < p_.eq[r].idx.size(); ++a)
          r1[p_.eq[r].idx[a]] -= p_.eq[r].val[a] * v[r];
      for (int j = 0; j < k1; ++j) {
        const auto& row = p_.ge[act_ineq[j]];
        for (std::size_t a = 0; a < row.idx.size(); ++a)
          r1[row.idx[a]] -= row.val[a] * ua[j];
      }
      for (int j = 0; j < k2; ++j) r1[act_bnd[j]] -= wa[j];

      std::vector<double> k(static_cast<std::size_t>(dim) * dim, 0.0);
      Vec rhs(dim, 0.0);
      for (int i = 0; i < n_; ++i) {
        k[i * dim + i] = hess[i] + 1e-12;
        rhs[i] = -r1[i];
      }
      auto put_row = [&](int row_index, const SparseRow& row, double resid) {
        for (std::size_t a = 0; a < row.idx.size(); ++a) {
          k[row_index * dim + row.idx[a]] = row.val[a];
          k[row.idx[a] * dim + row_index] = row.val[a];
        }
        k[row_index * dim + row_index] = -1e-13;
        rhs[row_index] = -resid;
      };
      for (int r = 0; r < me_; ++r)
        put_row(n_ + r, p_.eq[r], p_.eq[r].dot(x) - p_.eq[r].rhs);
      for (int j = 0; j < k1; ++j) {
        const auto& row = p_.ge[act_ineq[j]];
        put_row(n_ + me_ + j, row, row.dot(x) - row.rhs);
      }
      for (int j = 0; j < k2; ++j) {
        SparseRow unit;
        unit.push(act_bnd[j], 1.0);
        put_row(n_ + me_ + k1 + j, unit, x[act_bnd[j]]);
      }

      DenseLu lu;
      if (!lu.factorize(dim, k)) return false;
      lu.solve(rhs);

      double alpha = 1.0;
      for (int i = 0; i < n_; ++i) {
        if (!positive_var[i]) continue;
        for (int guard = 0; guard < 60 && x[i] + alpha * rhs[i] <= 0.0; ++guard)
          alpha *= 0.5;
      }
      for (int i = 0; i < n_; ++i) x[i] += alpha * rhs[i];
      for (int r = 0; r < me_; ++r) v[r] -= alpha * rhs[n_ + r];
      for (int j = 0; j < k1; ++j) ua[j] -= alpha * rhs[n_ + me_ + j];
      for (int j = 0; j < k2; ++j) wa[j] -= alpha * rhs[n_ + me_ + k1 + j];
    }

    // Verify the polished point against the caller tolerances.
    Iterate it;
    it.x = x;
    it.v = v;
    it.s.assign(mi_, 0.0);
    it.u.assign(mi_, 0.0);
    it.w.assign(n_, 0.0);
    for (int r = 0; r < mi_; ++r)
      it.s[r] = p_.ge[r].dot(x) - p_.ge[r].rhs;
    for (int j = 0; j < k1; ++j) it.u[act_ineq[j]] = ua[j];
    for (int j = 0; j < k2; ++j) it.w[act_bnd[j]] = wa[j];

    const double obj = guarded_objective(x);
    const double scale = 1.0 + std::fabs(obj);
    for (int r = 0; r < mi_; ++r) {
      if (it.s[r] < -1e-9 * scale || it.u[r] < -1e-9) return false;
    }
    for (int i = 0; i < n_; ++i) {
      if (bounded_[i] && x[i] < -1e-9 * scale) return false;
      if (it.w[i] < -1e-9) return false;
    }
    gradient_hessian(x, grad, hess);
    Vec rd, re, ri;
    residuals(it, grad, rd, re, ri);
    double rhs_scale = 1.0;
    for (const auto& r : p_.eq) rhs_scale = std::max(rhs_scale, std::fabs(r.rhs));
    for (const auto& r : p_.ge) rhs_scale = std::max(rhs_scale, std::fabs(r.rhs));
    const double feas_rel =
        std::max(inf_norm(re), [&] {
          double worst = 0.0;
          for (int j = 0; j < k1; ++j)
            worst = std::max(worst, std::fabs(it.s[act_ineq[j]]));
          return worst;
        }()) /
        (1.0 + rhs_scale);
    const double dual_rel = inf_norm(rd) / (1.0 + inf_norm(grad));
    const double kkt = std::max(feas_rel, dual_rel);
    double comp = 0.0;
    for (int r = 0; r < mi_; ++r) comp += std::fabs(it.s[r] * it.u[r]);
    for (int i = 0; i < n_; ++i)
      if (bounded_[i]) comp += std::fabs(x[i] * it.w[i]);
    if (kkt > opts_.tol_kkt || comp > opts_.tol_gap * scale) return false;

    out.status = SolveStatus::Optimal;
    out.x = x;
    out.objective = p_.objective(x);
    out.eq_duals = v;
    out.ineq_duals = it.u;
    out.kkt_residual = kkt;
    out.comp_gap = comp;
    out.message = "active-set polish";
    return true;
  }

  const ConvexProgram& p_;
  SolverOptions opts_;
  int n_, me_, mi_, nb_ = 0;
  std::vector<bool> bounded_;
  std::unique_ptr<KktBackend> backend_;
};

SolveResult InteriorPoint::run() {
  SolveResult out;
  if (n_ < 1) {
    out.message = "program has no variables";
    return out;
  }

  Iterate it;
  it.x.assign(n_, 1.0);
  it.s.assign(mi_, 1.0);
  for (int r = 0; r < mi_; ++r)
    it.s[r] = std::max(1.0, p_.ge[r].dot(it.x) - p_.ge[r].rhs);
  it.v.assign(me_, 1.0);
  it.u.assign(mi_, 1.0);
  it.w.assign(n_, 0.0);
  for (int i = 0; i < n_; ++i)
    if (bounded_[i]) it.w[i] = 1.0;

  Vec grad(n_), hess(n_), rd, re, ri;
  Vec ds_vec(mi_, 0.0), diag_m(n_, 0.0);
  Vec cu(mi_, 0.0), cw(n_, 0.0);
  Vec dx, dv, ds, du, dw, dx_c, dv_c, ds_c, du_c, dw_c;

  const double comp_count = std::max(1, mi_ + nb_);
  double rhs_scale = 1.0;
  for (const auto& r : p_.eq) rhs_scale = std::max(rhs_scale, std::fabs(r.rhs));
  for (const auto& r : p_.ge) rhs_scale = std::max(rhs_scale, std::fabs(r.rhs));

  // Strict internal targets; the best iterate is judged against the caller
  // tolerances at exit, which keeps LP objectives accurate to ~1e-10 relative
  // without failing runs that only reach the documented 1e-7/1e-8 levels.
  const double kkt_strict = std::min(opts_.tol_kkt * 1e-3, 1e-10);
  const double gap_strict = std::min(opts_.tol_gap * 1e-3, 1e-11);

  Iterate best = it;
  double best_score = std::numeric_limits<double>::infinity();
  double best_kkt = std::numeric_limits<double>::infinity();
  double best_comp = std::numeric_limits<double>::infinity();
  int best_iter = 0;

  for (int iter = 0; iter < opts_.max_iters; ++iter) {
    gradient_hessian(it.x, grad, hess);
    residuals(it, grad, rd, re, ri);

    double comp = 0.0;
    for (int r = 0; r < mi_; ++r) comp += it.s[r] * it.u[r];
    for (int i = 0; i < n_; ++i)
      if (bounded_[i]) comp += it.x[i] * it.w[i];
    const double mu = comp / comp_count;

    const double obj = guarded_objective(it.x);
    const double feas = std::max(inf_norm(re), inf_norm(ri));
    const double feas_rel = feas / (1.0 + rhs_scale);
    const double dual_rel = inf_norm(rd) / (1.0 + inf_norm(grad));
    const double kkt = std::max(feas_rel, dual_rel);
    const double comp_rel = comp / (1.0 + std::fabs(obj));

    out.iterations = iter;
    const double score = std::max(kkt, comp_rel);
    if (score < best_score) {
      best_score = score;
      best = it;
      best_kkt = kkt;
      best_comp = comp;
      best_iter = iter;
    }

    if (kkt <= kkt_strict && comp_rel <= gap_strict) break;
    const bool diverging =
        obj < opts_.unbounded_objective ||
        (inf_norm(it.x) > 1e8 && obj < -1e6 * (1.0 + rhs_scale));
    if (diverging && feas <= 1e-5 * (1.0 + rhs_scale)) {
      out.status = SolveStatus::Unbounded;
      out.message = "objective diverges along feasible iterates";
      out.x = it.x;
      out.objective = obj;
      return out;
    }
    if (inf_norm(it.x) > 1e13) break;

    // Bound-dual ratios sit on the primal diagonal, slack ratios on the
    // inequality-dual diagonal; both are benign in their extreme direction.
    for (int i = 0; i < n_; ++i) {
      diag_m[i] = hess[i] + kPrimalReg;
      if (bounded_[i])
        diag_m[i] += std::clamp(it.w[i] / it.x[i], 1e-14, 1e14);
    }
    for (int r = 0; r < mi_; ++r)
      ds_vec[r] = std::clamp(it.s[r] / it.u[r], 1e-14, 1e14);

    bool factored = false;
    double bump = 1.0;
    for (int attempt = 0; attempt < 4 && !factored; ++attempt) {
      factored = backend_->factorize(p_, diag_m, ds_vec);
      if (!factored) {
        bump *= 1e3;
        for (int i = 0; i < n_; ++i) diag_m[i] += kPrimalReg * bump;
      }
    }
    if (!factored) break;

    // Predictor (affine scaling).
    for (int r = 0; r < mi_; ++r) cu[r] = -it.s[r] * it.u[r];
    for (int i = 0; i < n_; ++i) cw[i] = bounded_[i] ? -it.x[i] * it.w[i] : 0.0;
    newton_step(rd, re, ri, it, cu, cw, dx, dv, ds, du, dw);

    const double ap_aff =
        std::min(max_step(it.s, ds, nullptr), max_step(it.x, dx, &bounded_));
    const double ad_aff =
        std::min(max_step(it.u, du, nullptr), max_step(it.w, dw, &bounded_));

    double comp_aff = 0.0;
    for (int r = 0; r < mi_; ++r)
      comp_aff += (it.s[r] + ap_aff * ds[r]) * (it.u[r] + ad_aff * du[r]);
    for (int i = 0; i < n_; ++i)
      if (bounded_[i])
        comp_aff += (it.x[i] + ap_aff * dx[i]) * (it.w[i] + ad_aff * dw[i]);
    const double mu_aff = comp_aff / comp_count;
    const double ratio = mu > 0.0 ? mu_aff / mu : 0.0;
    // Keep a centering floor while primal infeasibility dominates; pure
    // Mehrotra aggressiveness is only safe near the feasible set.
    const double sigma_min = feas_rel > 1e-4 ? 0.1 : 0.0;
    const double sigma = std::clamp(ratio * ratio * ratio, sigma_min, 1.0);

    // Corrector with second-order terms, capped so large infeasibility
    // cannot blow up the complementarity targets.
    const double cap = 10.0 * std::max(mu, 1e-12);
    for (int r = 0; r < mi_; ++r)
      cu[r] = sigma * mu - it.s[r] * it.u[r] -
              std::clamp(ds[r] * du[r], -cap, cap);
    for (int i = 0; i < n_; ++i)
      cw[i] = bounded_[i] ? sigma * mu - it.x[i] * it.w[i] -
                                std::clamp(dx[i] * dw[i], -cap, cap)
                          : 0.0;
    newton_step(rd, re, ri, it, cu, cw, dx_c, dv_c, ds_c, du_c, dw_c);

    // Fraction-to-boundary approaches 1 as the barrier parameter collapses;
    // a fixed fraction blocks the final dual moves at degenerate solutions.
    const double eta = std::min(std::max(kBoundaryFraction, 1.0 - 1e2 * mu),
                                1.0 - 1e-10);
    double ap = eta * std::min(max_step(it.s, ds_c, nullptr),
                               max_step(it.x, dx_c, &bounded_));
    double ad = eta * std::min(max_step(it.u, du_c, nullptr),
                               max_step(it.w, dw_c, &bounded_));
    ap = std::min(ap, 1.0);
    ad = std::min(ad, 1.0);

    // Nonlinear terms can overshoot; back off until the objective is finite.
    for (int guard = 0; guard < 30; ++guard) {
      Vec trial = it.x;
      kernels::axpy(trial.data(), ap, dx_c.data(), trial.size());
      if (std::isfinite(guarded_objective(trial))) break;
      ap *= 0.5;
    }

    // Keep complementarity from exploding (plain Mehrotra is not globally
    // convergent on degenerate programs without this).
    for (int guard = 0; guard < 30; ++guard) {
      double comp_new = 0.0;
      for (int r = 0; r < mi_; ++r)
        comp_new += (it.s[r] + ap * ds_c[r]) * (it.u[r] + ad * du_c[r]);
      for (int i = 0; i < n_; ++i)
        if (bounded_[i])
          comp_new += (it.x[i] + ap * dx_c[i]) * (it.w[i] + ad * dw_c[i]);
      if (comp_new <= 10.0 * comp + 1e-12) break;
      ap *= 0.5;
      ad *= 0.5;
    }

    kernels::axpy(it.x.data(), ap, dx_c.data(), it.x.size());
    kernels::axpy(it.s.data(), ap, ds_c.data(), it.s.size());
    kernels::axpy(it.v.data(), ad, dv_c.data(), it.v.size());
    kernels::axpy(it.u.data(), ad, du_c.data(), it.u.size());
    kernels::axpy(it.w.data(), ad, dw_c.data(), it.w.size());

    if (std::getenv("MSOPT_IPM_TRACE")) {
      std::fprintf(stderr,
                   "it=%3d mu=%9.2e sigma=%5.3f ap=%6.4f ad=%6.4f feas=%9.2e "
                   "dual=%9.2e obj=%12.6e xmax=%9.2e\n",
                   iter, mu, sigma, ap, ad, feas, inf_norm(rd), obj,
                   inf_norm(it.x));
    }
  }

  // Degenerate near-ties (e.g. cuts intersecting at the optimum) are only
  // resolved asymptotically by interior steps; finish them off with an
  // active-set Newton polish when the interior loop falls short.
  {
    const double obj = guarded_objective(best.x);
    if (!(best_kkt <= opts_.tol_kkt &&
          best_comp <= opts_.tol_gap * (1.0 + std::fabs(obj))) &&
        !opts_.use_sparse && best_kkt < 1e-4) {
      if (polish(best, out)) return out;
    }
  }

  // Accept the best iterate when it meets the caller tolerances.
  {
    const double obj = guarded_objective(best.x);
    if (best_kkt <= opts_.tol_kkt &&
        best_comp <= opts_.tol_gap * (1.0 + std::fabs(obj))) {
      out.status = SolveStatus::Optimal;
      out.x = best.x;
      out.objective = p_.objective(best.x);
      out.eq_duals = best.v;
      out.ineq_duals = best.u;
      out.iterations = best_iter;
      out.kkt_residual = best_kkt;
      out.comp_gap = best_comp;
      return out;
    }
  }

  // Did not converge: classify via Phase-I before reporting failure.
  out.x = it.x;
  out.objective = guarded_objective(it.x);
  out.kkt_residual = best_kkt;
  out.comp_gap = best_comp;
  if (opts_.enable_phase1) {
    ConvexProgram ph;
    ph.num_vars = n_ + 2 * me_ + mi_;
    ph.cost.assign(ph.num_vars, 0.0);
    ph.nonneg.assign(ph.num_vars, false);
    for (int i = 0; i < n_; ++i) ph.nonneg[i] = bounded_[i];
    for (int r = 0; r < 2 * me_ + mi_; ++r) {
      ph.cost[n_ + r] = 1.0;
      ph.nonneg[n_ + r] = true;
    }
    for (int r = 0; r < me_; ++r) {
      SparseRow row = p_.eq[r];
      row.push(n_ + 2 * r, 1.0);
      row.push(n_ + 2 * r + 1, -1.0);
      ph.eq.push_back(std::move(row));
    }
    for (int r = 0; r < mi_; ++r) {
      SparseRow row = p_.ge[r];
      row.push(n_ + 2 * me_ + r, 1.0);
      ph.ge.push_back(std::move(row));
    }
    SolverOptions popts = opts_;
    popts.enable_phase1 = false;
    popts.tol_kkt = std::max(opts_.tol_kkt, 1e-7);
    const SolveResult ph_res = InteriorPoint(ph, popts).run();
    if (ph_res.optimal() && ph_res.objective > 1e-6 * (1.0 + rhs_scale)) {
      out.status = SolveStatus::Infeasible;
      out.message = "phase-I infeasibility certificate: elastic objective " +
                    std::to_string(ph_res.objective);
      return out;
    }
  }
  out.status = SolveStatus::NumericalFailure;
  out.message = "no convergence within iteration limit";
  return out;
}

}  // namespace

const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "?";
}

SolveResult solve(const ConvexProgram& prog, const SolverOptions& opts) {
  if (prog.num_vars < 1) throw std::invalid_argument("solve: empty program");
  for (const auto& t : prog.terms)
    if (t.var < 0 || t.var >= prog.num_vars)
      throw std::invalid_argument("solve: term variable out of range");
  return InteriorPoint(prog, opts).run();
}

SolveResult solve_stage(const StageSubproblem& sp, const SolverOptions& opts) {
  const LoweredStage ls = lower_stage(sp);
  return solve(ls.prog, opts);
}

}  // namespace msopt

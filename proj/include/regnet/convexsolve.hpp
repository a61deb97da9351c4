#pragma once

// Dense primal active-set solver for small convex quadratic programs
//
//   minimize    1/2 x'Qx + c'x
//   subject to  A x <= b,  E x = d,  lo <= x <= hi
//
// with Q symmetric positive semidefinite (Q = 0 gives a linear program).
// A Phase-I program finds a feasible point; Phase II then walks the working
// set. Where the reduced Hessian is singular along a descent direction the
// iterate moves along that ray to the nearest blocking constraint, so linear
// programs end on a vertex the way simplex would. Every tie is broken by the
// lowest row index, which makes the solver deterministic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "regnet/errors.hpp"

namespace regnet::opt {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct SolverSettings {
  double feasibility_tol = 1e-7;
  double stationarity_tol = 1e-6;
  double infeasibility_tol = 1e-7;  // Phase-I objective threshold, times (1 + |b|_inf)
  double psd_tol = 1e-9;            // smallest admissible eigenvalue of Q
  double curvature_tol = 1e-13;     // relative, reduced Hessian null space
  double multiplier_tol = 1e-11;    // relative, negative multipliers ignored above this
  long max_iterations = 0;          // 0 selects 10 * (vars + constraints)^2
};

enum class Status { Optimal, Infeasible, Unbounded };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
  }
  return "unknown";
}

struct Solution {
  Status status = Status::Infeasible;
  Eigen::VectorXd x;
  double objective_value = 0.0;
  double max_kkt_residual = 0.0;
  double phase_one_violation = 0.0;  // minimum total violation found by Phase I
  Eigen::VectorXd inequality_multipliers;  // one per row of A, >= 0
  Eigen::VectorXd equality_multipliers;    // one per row of E
  long iterations = 0;

  bool optimal() const noexcept { return status == Status::Optimal; }
};

/// Problem data. Rows are appended through the add_* helpers; `objective` is
/// 1/2 x'Qx + c'x.
class ConvexProgram {
 public:
  explicit ConvexProgram(int variable_count)
      : n_(variable_count),
        q_(Eigen::MatrixXd::Zero(variable_count, variable_count)),
        c_(Eigen::VectorXd::Zero(variable_count)),
        a_(0, variable_count),
        e_(0, variable_count),
        lo_(Eigen::VectorXd::Constant(variable_count, -kInf)),
        hi_(Eigen::VectorXd::Constant(variable_count, kInf)) {
    if (variable_count < 1) fail(ErrorCode::InvalidArgument, "program needs a variable");
  }

  int variable_count() const noexcept { return n_; }
  int inequality_count() const noexcept { return static_cast<int>(a_.rows()); }
  int equality_count() const noexcept { return static_cast<int>(e_.rows()); }

  Eigen::MatrixXd& quadratic() noexcept { return q_; }
  Eigen::VectorXd& linear() noexcept { return c_; }
  const Eigen::MatrixXd& quadratic() const noexcept { return q_; }
  const Eigen::VectorXd& linear() const noexcept { return c_; }
  const Eigen::MatrixXd& inequality_matrix() const noexcept { return a_; }
  const Eigen::VectorXd& inequality_rhs() const noexcept { return b_; }
  const Eigen::MatrixXd& equality_matrix() const noexcept { return e_; }
  const Eigen::VectorXd& equality_rhs() const noexcept { return d_; }
  const Eigen::VectorXd& lower() const noexcept { return lo_; }
  const Eigen::VectorXd& upper() const noexcept { return hi_; }

  void set_bounds(int i, double lo, double hi) {
    lo_(i) = lo;
    hi_(i) = hi;
  }
  void set_lower(int i, double lo) { lo_(i) = lo; }
  void set_upper(int i, double hi) { hi_(i) = hi; }

  /// Appends a' x <= rhs.
  template <typename Row>
  void add_inequality(const Row& a, double rhs) {
    append(a_, b_, a, rhs);
  }
  /// Appends a' x == rhs.
  template <typename Row>
  void add_equality(const Row& a, double rhs) {
    append(e_, d_, a, rhs);
  }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(q_ * x) + c_.dot(x); }

  void validate(const SolverSettings& s = {}) const {
    if (q_.rows() != n_ || q_.cols() != n_ || c_.size() != n_)
      fail(ErrorCode::InvalidArgument, "objective dimensions do not match variable count");
    if ((q_ - q_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + q_.cwiseAbs().maxCoeff()))
      fail(ErrorCode::InvalidArgument, "quadratic term is not symmetric");
    if (q_.cwiseAbs().maxCoeff() > 0.0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q_, Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -s.psd_tol)
        fail(ErrorCode::InvalidArgument, "quadratic term is not positive semidefinite");
    }
    for (int i = 0; i < n_; ++i)
      if (!(lo_(i) <= hi_(i))) fail(ErrorCode::InvalidArgument, "variable bounds cross");
    if (!a_.allFinite() || !b_.allFinite() || !e_.allFinite() || !d_.allFinite() ||
        !c_.allFinite() || !q_.allFinite())
      fail(ErrorCode::InvalidArgument, "program data must be finite");
  }

 private:
  template <typename Row>
  void append(Eigen::MatrixXd& m, Eigen::VectorXd& v, const Row& a, double rhs) {
    if (a.size() != n_) fail(ErrorCode::InvalidArgument, "constraint row has wrong length");
    const auto r = m.rows();
    m.conservativeResize(r + 1, n_);
    v.conservativeResize(r + 1);
    for (int j = 0; j < n_; ++j) m(r, j) = a(j);
    v(r) = rhs;
  }

  int n_;
  Eigen::MatrixXd q_;
  Eigen::VectorXd c_;
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd e_;
  Eigen::VectorXd d_;
  Eigen::VectorXd lo_;
  Eigen::VectorXd hi_;
};

namespace detail {

// Rows of a normalized constraint system. Equality rows come first and are
// permanently in the working set.
struct RowSystem {
  Eigen::MatrixXd rows;
  Eigen::VectorXd rhs;
  Eigen::VectorXd scale;  // original row = scale * normalized row
  int equality_count = 0;
};

inline void normalize(RowSystem& sys) {
  sys.scale.resize(sys.rows.rows());
  for (int i = 0; i < sys.rows.rows(); ++i) {
    const double nrm = sys.rows.row(i).norm();
    sys.scale(i) = nrm;
    if (nrm > 0.0) {
      sys.rows.row(i) /= nrm;
      sys.rhs(i) /= nrm;
    }
  }
}

enum class CoreOutcome { Optimal, Unbounded, IterationLimit };

struct CoreResult {
  CoreOutcome outcome = CoreOutcome::Optimal;
  Eigen::VectorXd x;
  std::vector<int> working;
  Eigen::VectorXd multipliers;  // aligned with `working`
  long iterations = 0;
};

// Null-space basis of the working rows and the thin factor needed for
// multiplier estimates.
struct WorkingFactor {
  Eigen::MatrixXd z;
  Eigen::MatrixXd q1;
  Eigen::MatrixXd r;
};

inline WorkingFactor factor_working(const Eigen::MatrixXd& aw, int n) {
  WorkingFactor f;
  const auto w = aw.rows();
  if (w == 0) {
    f.z = Eigen::MatrixXd::Identity(n, n);
    return f;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(aw.transpose());
  const Eigen::MatrixXd qfull = qr.householderQ();
  f.q1 = qfull.leftCols(w);
  f.z = qfull.rightCols(n - w);
  f.r = qr.matrixQR().topLeftCorner(w, w).triangularView<Eigen::Upper>();
  return f;
}

// Primal active-set iterations from a (nearly) feasible x with working set W.
inline CoreResult active_set(const Eigen::MatrixXd& q, const Eigen::VectorXd& c,
                             const RowSystem& sys, Eigen::VectorXd x, std::vector<int> working,
                             const SolverSettings& s, long max_iter) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(sys.rows.rows());
  std::vector<bool> in_w(static_cast<std::size_t>(m), false);
  for (int i : working) in_w[static_cast<std::size_t>(i)] = true;
  const double q_scale = std::max(1.0, q.cwiseAbs().maxCoeff());

  CoreResult res;
  int degenerate_streak = 0;
  for (long iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter + 1;
    const Eigen::VectorXd grad = q * x + c;
    Eigen::MatrixXd aw(static_cast<Eigen::Index>(working.size()), n);
    for (std::size_t k = 0; k < working.size(); ++k) aw.row(static_cast<Eigen::Index>(k)) = sys.rows.row(working[k]);
    const WorkingFactor f = factor_working(aw, n);
    const auto k = f.z.cols();

    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    bool ray = false;
    if (k > 0) {
      const Eigen::MatrixXd h = f.z.transpose() * q * f.z;
      const Eigen::VectorXd gz = f.z.transpose() * grad;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
      const Eigen::VectorXd& lam = eig.eigenvalues();
      const Eigen::MatrixXd& u = eig.eigenvectors();
      const double lam_cut = s.curvature_tol * q_scale;
      Eigen::VectorXd null_part = Eigen::VectorXd::Zero(k);
      Eigen::VectorXd newton = Eigen::VectorXd::Zero(k);
      for (Eigen::Index i = 0; i < k; ++i) {
        const double coef = u.col(i).dot(gz);
        if (lam(i) <= lam_cut)
          null_part += coef * u.col(i);
        else
          newton -= (coef / lam(i)) * u.col(i);
      }
      if (null_part.cwiseAbs().maxCoeff() > 1e-10 * (1.0 + grad.cwiseAbs().maxCoeff())) {
        ray = true;
        p = -(f.z * null_part);
      } else {
        p = f.z * newton;
      }
    }

    if (p.cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + x.cwiseAbs().maxCoeff())) {
      // Stationary on the working set: check multipliers.
      Eigen::VectorXd lambda(static_cast<Eigen::Index>(working.size()));
      if (!working.empty())
        lambda = f.r.triangularView<Eigen::Upper>().solve(-(f.q1.transpose() * grad));
      const double tol = s.multiplier_tol * (1.0 + grad.cwiseAbs().maxCoeff());
      int drop = -1;
      double most_negative = -tol;
      const bool bland = degenerate_streak > 2 * (n + 1);
      for (std::size_t j = 0; j < working.size(); ++j) {
        if (working[j] < sys.equality_count) continue;
        const double l = lambda(static_cast<Eigen::Index>(j));
        if (bland) {
          if (l < -tol && (drop < 0 || working[j] < working[static_cast<std::size_t>(drop)]))
            drop = static_cast<int>(j);
        } else if (l < most_negative) {
          most_negative = l;
          drop = static_cast<int>(j);
        }
      }
      if (drop < 0) {
        res.outcome = CoreOutcome::Optimal;
        res.x = x;
        res.working = working;
        res.multipliers = lambda;
        return res;
      }
      in_w[static_cast<std::size_t>(working[static_cast<std::size_t>(drop)])] = false;
      working.erase(working.begin() + drop);
      continue;
    }

    // Ratio test; lowest index wins ties.
    double alpha = ray ? kInf : 1.0;
    int block = -1;
    const double p_norm = p.cwiseAbs().maxCoeff();
    for (int i = sys.equality_count; i < m; ++i) {
      if (in_w[static_cast<std::size_t>(i)]) continue;
      const double ap = sys.rows.row(i).dot(p);
      if (ap <= 1e-12 * p_norm) continue;
      const double slack = std::max(0.0, sys.rhs(i) - sys.rows.row(i).dot(x));
      const double step = slack / ap;
      if (step < alpha) {
        alpha = step;
        block = i;
      }
    }
    if (!std::isfinite(alpha)) {
      res.outcome = CoreOutcome::Unbounded;
      res.x = x;
      res.working = working;
      return res;
    }
    x += alpha * p;
    degenerate_streak = (alpha == 0.0) ? degenerate_streak + 1 : 0;
    if (block >= 0) {
      working.push_back(block);
      in_w[static_cast<std::size_t>(block)] = true;
    }
  }
  res.outcome = CoreOutcome::IterationLimit;
  res.x = x;
  res.working = working;
  return res;
}

// Minimum-norm correction placing x on the working rows.
inline Eigen::VectorXd project_onto_rows(const Eigen::VectorXd& x, const RowSystem& sys,
                                         const std::vector<int>& working) {
  if (working.empty()) return x;
  const auto n = x.size();
  Eigen::MatrixXd aw(static_cast<Eigen::Index>(working.size()), n);
  Eigen::VectorXd rw(static_cast<Eigen::Index>(working.size()));
  for (std::size_t k = 0; k < working.size(); ++k) {
    aw.row(static_cast<Eigen::Index>(k)) = sys.rows.row(working[k]);
    rw(static_cast<Eigen::Index>(k)) = sys.rhs(working[k]);
  }
  const Eigen::VectorXd resid = aw * x - rw;
  const Eigen::VectorXd y = (aw * aw.transpose()).ldlt().solve(resid);
  return x - aw.transpose() * y;
}

}  // namespace detail

/// Solves the program. Throws NumericalFailure when the iteration cap is hit
/// or the returned point does not meet the KKT tolerance.
inline Solution solve(const ConvexProgram& p, const SolverSettings& s = {}) {
  p.validate(s);
  const int n = p.variable_count();
  const Eigen::Index n_ineq = p.inequality_count();
  const Eigen::Index n_eq = p.equality_count();

  // Assemble [E; A; bounds] as one normalized row system.
  std::vector<int> bound_var;  // for bound rows: +(i+1) upper, -(i+1) lower
  int bound_rows = 0;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(p.upper()(i))) ++bound_rows;
    if (std::isfinite(p.lower()(i))) ++bound_rows;
  }
  detail::RowSystem sys;
  sys.equality_count = static_cast<int>(n_eq);
  const Eigen::Index total = n_eq + n_ineq + bound_rows;
  sys.rows = Eigen::MatrixXd::Zero(total, n);
  sys.rhs = Eigen::VectorXd::Zero(total);
  sys.rows.topRows(n_eq) = p.equality_matrix();
  sys.rhs.head(n_eq) = p.equality_rhs();
  sys.rows.middleRows(n_eq, n_ineq) = p.inequality_matrix();
  sys.rhs.segment(n_eq, n_ineq) = p.inequality_rhs();
  {
    Eigen::Index r = n_eq + n_ineq;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(p.upper()(i))) {
        sys.rows(r, i) = 1.0;
        sys.rhs(r++) = p.upper()(i);
      }
      if (std::isfinite(p.lower()(i))) {
        sys.rows(r, i) = -1.0;
        sys.rhs(r++) = -p.lower()(i);
      }
    }
  }
  detail::normalize(sys);
  const double b_scale = 1.0 + (total > 0 ? sys.rhs.cwiseAbs().maxCoeff() : 0.0);

  Solution sol;
  const long cons = static_cast<long>(n_eq + n_ineq + bound_rows);
  const long max_iter =
      s.max_iterations > 0 ? s.max_iterations : 10L * (n + cons) * (n + cons) + 100L;

  // Zero rows: either vacuous or unsatisfiable.
  for (Eigen::Index i = 0; i < total; ++i) {
    if (sys.scale(i) > 0.0) continue;
    const bool eq = i < n_eq;
    const double v = sys.rhs(i);
    if ((eq && std::abs(v) > s.feasibility_tol) || (!eq && v < -s.feasibility_tol)) {
      sol.status = Status::Infeasible;
      sol.phase_one_violation = std::abs(v);
      sol.x = Eigen::VectorXd::Zero(n);
      return sol;
    }
  }

  // Phase I: minimize tau subject to every non-bound row relaxed by tau.
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0(i) = std::clamp(0.0, p.lower()(i), p.upper()(i));
  detail::RowSystem ph1;
  {
    const Eigen::Index relaxed = 2 * n_eq + n_ineq;
    ph1.rows = Eigen::MatrixXd::Zero(relaxed + bound_rows + 1, n + 1);
    ph1.rhs = Eigen::VectorXd::Zero(relaxed + bound_rows + 1);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < n_eq; ++i) {
      if (sys.scale(i) == 0.0) continue;
      ph1.rows.row(r).head(n) = sys.rows.row(i);
      ph1.rows(r, n) = -1.0;
      ph1.rhs(r++) = sys.rhs(i);
      ph1.rows.row(r).head(n) = -sys.rows.row(i);
      ph1.rows(r, n) = -1.0;
      ph1.rhs(r++) = -sys.rhs(i);
    }
    for (Eigen::Index i = n_eq; i < n_eq + n_ineq; ++i) {
      if (sys.scale(i) == 0.0) continue;
      ph1.rows.row(r).head(n) = sys.rows.row(i);
      ph1.rows(r, n) = -1.0;
      ph1.rhs(r++) = sys.rhs(i);
    }
    for (Eigen::Index i = n_eq + n_ineq; i < total; ++i) {
      ph1.rows.row(r).head(n) = sys.rows.row(i);
      ph1.rhs(r++) = sys.rhs(i);
    }
    ph1.rows(r, n) = -1.0;
    ph1.rhs(r++) = 0.0;
    ph1.rows.conservativeResize(r, n + 1);
    ph1.rhs.conservativeResize(r);
    detail::normalize(ph1);
  }
  Eigen::VectorXd y0(n + 1);
  y0.head(n) = x0;
  double tau0 = 0.0;
  for (Eigen::Index i = 0; i < ph1.rows.rows(); ++i) {
    const double a_tau = ph1.rows(i, n);
    if (a_tau == 0.0) continue;
    const double viol = ph1.rows.row(i).head(n).dot(x0) - ph1.rhs(i);
    tau0 = std::max(tau0, viol / -a_tau);
  }
  y0(n) = tau0;
  Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n + 1);
  c1(n) = 1.0;
  const auto r1 = detail::active_set(Eigen::MatrixXd::Zero(n + 1, n + 1), c1, ph1, y0, {}, s, max_iter);
  sol.iterations = r1.iterations;
  if (r1.outcome == detail::CoreOutcome::IterationLimit)
    fail(ErrorCode::NumericalFailure, "iteration limit reached in Phase I");
  // Phase I is bounded below by tau >= 0.
  const double tau = std::max(0.0, r1.x(n));
  sol.phase_one_violation = tau;
  if (tau > s.infeasibility_tol * b_scale) {
    sol.status = Status::Infeasible;
    sol.x = r1.x.head(n);
    return sol;
  }

  // Phase II from the Phase-I point, keeping an independent subset of the
  // equality rows in the working set.
  std::vector<int> working;
  {
    Eigen::MatrixXd basis(0, n);
    for (int i = 0; i < n_eq; ++i) {
      if (sys.scale(i) == 0.0) continue;
      Eigen::MatrixXd trial(basis.rows() + 1, n);
      trial << basis, sys.rows.row(i);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(trial);
      lu.setThreshold(1e-10);
      if (lu.rank() == trial.rows()) {
        basis = trial;
        working.push_back(i);
      }
    }
  }
  detail::RowSystem sys2 = sys;
  // Redundant equalities are dropped from the system; they are implied.
  Eigen::VectorXd x = detail::project_onto_rows(r1.x.head(n), sys2, working);
  const auto r2 = detail::active_set(p.quadratic(), p.linear(), sys2, x, working, s, max_iter);
  sol.iterations += r2.iterations;
  if (r2.outcome == detail::CoreOutcome::IterationLimit)
    fail(ErrorCode::NumericalFailure, "iteration limit reached in Phase II");
  if (r2.outcome == detail::CoreOutcome::Unbounded) {
    sol.status = Status::Unbounded;
    sol.x = r2.x;
    sol.objective_value = -kInf;
    return sol;
  }

  x = detail::project_onto_rows(r2.x, sys2, r2.working);

  // Multipliers in the caller's row numbering.
  Eigen::VectorXd row_mult = Eigen::VectorXd::Zero(total);
  for (std::size_t k = 0; k < r2.working.size(); ++k) {
    const int i = r2.working[k];
    row_mult(i) = r2.multipliers(static_cast<Eigen::Index>(k)) / sys.scale(i);
  }
  sol.equality_multipliers = row_mult.head(n_eq);
  sol.inequality_multipliers = row_mult.segment(n_eq, n_ineq).cwiseMax(0.0);

  // KKT residual, scaled.
  const Eigen::VectorXd grad = p.quadratic() * x + p.linear();
  Eigen::VectorXd stat = grad;
  for (Eigen::Index i = 0; i < total; ++i)
    if (row_mult(i) != 0.0) stat += row_mult(i) * sys.scale(i) * sys.rows.row(i).transpose();
  double primal = 0.0;
  double compl_ = 0.0;
  for (Eigen::Index i = 0; i < total; ++i) {
    if (sys.scale(i) == 0.0) continue;
    const double v = sys.rows.row(i).dot(x) - sys.rhs(i);  // normalized units
    if (i < n_eq) {
      primal = std::max(primal, std::abs(v));
    } else {
      primal = std::max(primal, v);
      compl_ = std::max(compl_, std::abs(row_mult(i) * sys.scale(i) * v));
    }
  }
  const double g_scale = 1.0 + grad.cwiseAbs().maxCoeff();
  sol.max_kkt_residual = std::max({stat.cwiseAbs().maxCoeff() / g_scale, primal / b_scale, compl_ / g_scale});
  if (sol.max_kkt_residual > s.stationarity_tol)
    fail(ErrorCode::NumericalFailure,
         "KKT residual " + std::to_string(sol.max_kkt_residual) + " above tolerance");
  sol.status = Status::Optimal;
  sol.x = x;
  sol.objective_value = p.objective(x);
  return sol;
}

}  // namespace regnet::opt

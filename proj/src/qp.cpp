#include "safety_horizon/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace safety_horizon {

namespace {

constexpr double kSigma = 1e-6;
constexpr double kRelax = 1.6;
constexpr double kRho0 = 0.1;
constexpr double kRhoEqScale = 1e3;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr int kCheckEvery = 25;
constexpr int kRhoUpdateEvery = 50;
constexpr double kInfeasTol = 1e-6;
constexpr int kDenseThreshold = 200;  // variables
constexpr int kRuizIters = 10;

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

Eigen::SparseMatrix<double> full_p(const QpProblem& p) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(2 * p.p_upper.size());
  for (const auto& e : p.p_upper) {
    if (e.row() > e.col()) throw std::invalid_argument("QpProblem: P triplets must be upper-triangular");
    t.push_back(e);
    if (e.row() != e.col()) t.emplace_back(e.col(), e.row(), e.value());
  }
  Eigen::SparseMatrix<double> m(p.n, p.n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

void validate(const QpProblem& p) {
  if (p.n <= 0) throw std::invalid_argument("QpProblem: need at least one variable");
  if (p.q.size() != p.n) throw std::invalid_argument("QpProblem: q dimension mismatch");
  if (p.lb.size() != p.m || p.ub.size() != p.m) throw std::invalid_argument("QpProblem: bound dimension mismatch");
  for (int i = 0; i < p.m; ++i) {
    if (p.lb[i] > p.ub[i]) throw std::invalid_argument("QpProblem: lb must not exceed ub");
  }
  for (const auto& e : p.a) {
    if (e.row() < 0 || e.row() >= p.m || e.col() < 0 || e.col() >= p.n)
      throw std::invalid_argument("QpProblem: A triplet out of range");
  }
}

/// Modified Ruiz equilibration of the KKT block matrix plus OSQP-style cost
/// normalization. Produces diagonal scalings D (variables), E (rows) and
/// the cost scalar c for the scaled problem (cDPD, cDq, EAD, El, Eu).
struct Scaling {
  Eigen::VectorXd d, e;
  double c = 1.0;
};

Scaling ruiz_equilibrate(Eigen::SparseMatrix<double>& pfull, Eigen::SparseMatrix<double>& a, Eigen::VectorXd& q) {
  const int n = static_cast<int>(pfull.rows());
  const int m = static_cast<int>(a.rows());
  Scaling s;
  s.d = Eigen::VectorXd::Ones(n);
  s.e = Eigen::VectorXd::Ones(m);

  for (int iter = 0; iter < kRuizIters; ++iter) {
    Eigen::VectorXd col_norm = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < pfull.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(pfull, k); it; ++it) {
        col_norm[it.col()] = std::max(col_norm[it.col()], std::abs(it.value()));
      }
    }
    Eigen::VectorXd row_norm = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < a.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
        col_norm[it.col()] = std::max(col_norm[it.col()], std::abs(it.value()));
        row_norm[it.row()] = std::max(row_norm[it.row()], std::abs(it.value()));
      }
    }
    Eigen::VectorXd dd(n), ee(m);
    for (int j = 0; j < n; ++j) dd[j] = col_norm[j] > 1e-12 ? 1.0 / std::sqrt(col_norm[j]) : 1.0;
    for (int i = 0; i < m; ++i) ee[i] = row_norm[i] > 1e-12 ? 1.0 / std::sqrt(row_norm[i]) : 1.0;

    pfull = dd.asDiagonal() * pfull * dd.asDiagonal();
    a = ee.asDiagonal() * a * dd.asDiagonal();
    q = dd.cwiseProduct(q);
    s.d = s.d.cwiseProduct(dd);
    s.e = s.e.cwiseProduct(ee);

    // cost normalization
    double p_col_mean = 0.0;
    if (pfull.nonZeros() > 0) {
      Eigen::VectorXd pc = Eigen::VectorXd::Zero(n);
      for (int k = 0; k < pfull.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(pfull, k); it; ++it) {
          pc[it.col()] = std::max(pc[it.col()], std::abs(it.value()));
        }
      }
      p_col_mean = pc.mean();
    }
    const double denom = std::max(p_col_mean, inf_norm(q));
    const double gamma = denom > 1e-12 ? 1.0 / denom : 1.0;
    pfull = gamma * pfull;
    q = gamma * q;
    s.c *= gamma;
  }
  return s;
}

/// Factorization of the reduced SPD matrix P + sigma I + A' diag(rho) A,
/// dense below the variable threshold and sparse above it.
struct ReducedKkt {
  bool dense = false;
  Eigen::LDLT<Eigen::MatrixXd> dense_fac;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> sparse_fac;

  void factor(const Eigen::SparseMatrix<double>& pfull, const Eigen::SparseMatrix<double>& a,
              const Eigen::VectorXd& rho) {
    Eigen::SparseMatrix<double> k = pfull;
    if (a.rows() > 0) {
      Eigen::SparseMatrix<double> ra = rho.asDiagonal() * a;
      k = k + Eigen::SparseMatrix<double>(a.transpose() * ra);
    }
    Eigen::SparseMatrix<double> identity(pfull.rows(), pfull.cols());
    identity.setIdentity();
    k = k + Eigen::SparseMatrix<double>(kSigma * identity);
    if (dense) {
      dense_fac.compute(Eigen::MatrixXd(k));
      if (dense_fac.info() != Eigen::Success) throw std::runtime_error("solve_qp: factorization failed");
    } else {
      sparse_fac.compute(k);
      if (sparse_fac.info() != Eigen::Success) throw std::runtime_error("solve_qp: factorization failed");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    return dense ? Eigen::VectorXd(dense_fac.solve(rhs)) : Eigen::VectorXd(sparse_fac.solve(rhs));
  }
};

}  // namespace

double qp_objective(const QpProblem& p, const Eigen::VectorXd& z) {
  const Eigen::SparseMatrix<double> pf = full_p(p);
  return 0.5 * z.dot(pf * z) + p.q.dot(z);
}

namespace {

/// Active-set polish: pins the rows the ADMM iterate identifies as active,
/// solves the regularized KKT system once with iterative refinement, and
/// keeps the result when it tightens the KKT residuals. Lifts a moderate-
/// accuracy ADMM solution to near-exact optimality at the cost of one
/// factorization.
bool polish(const QpProblem& p, const Eigen::SparseMatrix<double>& pfull, const Eigen::SparseMatrix<double>& a,
            QpSolution& sol) {
  const int n = p.n, m = p.m;
  if (m == 0) return false;
  constexpr double kDelta = 1e-8;
  constexpr double kActTol = 1e-4;

  const Eigen::VectorXd az = a * sol.z;
  std::vector<int> active_rows;
  std::vector<bool> at_upper;
  for (int i = 0; i < m; ++i) {
    const bool eq = std::isfinite(p.lb[i]) && std::isfinite(p.ub[i]) && p.ub[i] - p.lb[i] < 1e-12;
    const double scale = std::max(1.0, std::abs(az[i]));
    const bool near_lo = std::isfinite(p.lb[i]) && az[i] - p.lb[i] <= kActTol * scale;
    const bool near_hi = std::isfinite(p.ub[i]) && p.ub[i] - az[i] <= kActTol * scale;
    if (eq || near_lo || near_hi) {
      active_rows.push_back(i);
      at_upper.push_back(!eq && near_hi && !(near_lo && sol.y[i] > 0.0));
    }
  }
  const int k = static_cast<int>(active_rows.size());
  if (k == 0) return false;

  const Eigen::SparseMatrix<double, Eigen::RowMajor> a_rows(a);
  std::vector<Eigen::Triplet<double>> trip, trip_exact;
  for (int c = 0; c < pfull.outerSize(); ++c) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(pfull, c); it; ++it) {
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trip_exact.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    }
  }
  for (int j = 0; j < n; ++j) trip.emplace_back(j, j, kDelta);
  for (int r = 0; r < k; ++r) {
    const int i = active_rows[static_cast<std::size_t>(r)];
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a_rows, i); it; ++it) {
      trip.emplace_back(n + r, static_cast<int>(it.col()), it.value());
      trip.emplace_back(static_cast<int>(it.col()), n + r, it.value());
      trip_exact.emplace_back(n + r, static_cast<int>(it.col()), it.value());
      trip_exact.emplace_back(static_cast<int>(it.col()), n + r, it.value());
    }
    trip.emplace_back(n + r, n + r, -kDelta);
  }
  Eigen::SparseMatrix<double> kkt(n + k, n + k);
  kkt.setFromTriplets(trip.begin(), trip.end());

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(kkt);
  if (lu.info() != Eigen::Success) return false;

  Eigen::VectorXd rhs(n + k);
  rhs.head(n) = -p.q;
  for (int r = 0; r < k; ++r) {
    const int i = active_rows[static_cast<std::size_t>(r)];
    rhs[n + r] = at_upper[static_cast<std::size_t>(r)] ? p.ub[i] : p.lb[i];
  }

  // the regularization perturbs the system; a few refinement passes heal it
  Eigen::SparseMatrix<double> exact(n + k, n + k);
  exact.setFromTriplets(trip_exact.begin(), trip_exact.end());
  Eigen::VectorXd t = lu.solve(rhs);
  for (int refine = 0; refine < 3; ++refine) t += lu.solve(rhs - exact * t);

  QpSolution cand = sol;
  cand.z = t.head(n);
  cand.y = Eigen::VectorXd::Zero(m);
  for (int r = 0; r < k; ++r) cand.y[active_rows[static_cast<std::size_t>(r)]] = -t[n + r];

  // accept only if the polished point is feasible and strictly tighter
  const KktResiduals before = kkt_residuals(p, sol);
  const KktResiduals after = kkt_residuals(p, cand);
  if (after.primal <= std::max(before.primal, 1e-9) && after.dual <= std::max(before.dual, 1e-9) &&
      after.primal <= 1e-7 && after.dual <= 1e-7) {
    cand.primal_residual = after.primal;
    cand.dual_residual = after.dual;
    sol = cand;
    return true;
  }
  return false;
}

}  // namespace

QpSolution solve_qp(const QpProblem& p, const QpSolution* warm, double eps_abs, double eps_rel, int max_iter) {
  validate(p);
  const int n = p.n, m = p.m;

  Eigen::SparseMatrix<double> pfull = full_p(p);
  Eigen::SparseMatrix<double> a(m, n);
  a.setFromTriplets(p.a.begin(), p.a.end());
  Eigen::VectorXd q = p.q;

  const Scaling sc = ruiz_equilibrate(pfull, a, q);
  Eigen::VectorXd lb(m), ub(m);
  for (int i = 0; i < m; ++i) {
    lb[i] = std::isfinite(p.lb[i]) ? sc.e[i] * p.lb[i] : p.lb[i];
    ub[i] = std::isfinite(p.ub[i]) ? sc.e[i] * p.ub[i] : p.ub[i];
  }
  const Eigen::VectorXd d_inv = sc.d.cwiseInverse();
  const Eigen::VectorXd e_inv = sc.e.cwiseInverse();

  Eigen::VectorXd rho(m);
  for (int i = 0; i < m; ++i) {
    const bool eq = std::isfinite(p.lb[i]) && std::isfinite(p.ub[i]) && (p.ub[i] - p.lb[i]) < 1e-12;
    rho[i] = eq ? kRho0 * kRhoEqScale : kRho0;
  }

  ReducedKkt kkt;
  kkt.dense = n < kDenseThreshold;
  kkt.factor(pfull, a, rho);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);  // scaled, internal sign
  if (warm && warm->z.size() == n) {
    x = d_inv.cwiseProduct(warm->z);
    if (warm->y.size() == m) y = -sc.c * e_inv.cwiseProduct(warm->y);
    if (m > 0) z = (a * x).cwiseMax(lb).cwiseMin(ub);
  }

  QpSolution sol;
  Eigen::VectorXd x_prev = x, y_prev = y;

  for (int iter = 1; iter <= max_iter; ++iter) {
    x_prev = x;
    y_prev = y;

    Eigen::VectorXd rhs = kSigma * x - q;
    if (m > 0) rhs += a.transpose() * (rho.cwiseProduct(z) - y);
    const Eigen::VectorXd x_tilde = kkt.solve(rhs);
    x = kRelax * x_tilde + (1.0 - kRelax) * x;

    if (m > 0) {
      const Eigen::VectorXd z_tilde = a * x_tilde;
      const Eigen::VectorXd z_relaxed = kRelax * z_tilde + (1.0 - kRelax) * z;
      const Eigen::VectorXd z_shifted = z_relaxed + y.cwiseQuotient(rho);
      z = z_shifted.cwiseMax(lb).cwiseMin(ub);
      y = rho.cwiseProduct(z_shifted - z);
    }

    if (iter % kCheckEvery != 0 && iter != max_iter) continue;

    // residuals in the units of the original (unscaled) problem
    const Eigen::VectorXd ax_s = m > 0 ? Eigen::VectorXd(a * x) : Eigen::VectorXd();
    const Eigen::VectorXd px_s = pfull * x;
    const Eigen::VectorXd aty_s = m > 0 ? Eigen::VectorXd(a.transpose() * y) : Eigen::VectorXd::Zero(n);

    const Eigen::VectorXd ax_u = m > 0 ? Eigen::VectorXd(e_inv.cwiseProduct(ax_s)) : Eigen::VectorXd();
    const Eigen::VectorXd z_u = m > 0 ? Eigen::VectorXd(e_inv.cwiseProduct(z)) : Eigen::VectorXd();
    const Eigen::VectorXd px_u = d_inv.cwiseProduct(px_s) / sc.c;
    const Eigen::VectorXd aty_u = d_inv.cwiseProduct(aty_s) / sc.c;
    const Eigen::VectorXd q_u = d_inv.cwiseProduct(q) / sc.c;

    const double r_prim = m > 0 ? inf_norm(ax_u - z_u) : 0.0;
    const double r_dual = inf_norm(px_u + q_u + aty_u);
    const double eps_prim = eps_abs + eps_rel * std::max(inf_norm(ax_u), inf_norm(z_u));
    const double eps_dual = eps_abs + eps_rel * std::max({inf_norm(px_u), inf_norm(aty_u), inf_norm(q_u)});

    sol.iterations = iter;
    sol.primal_residual = r_prim;
    sol.dual_residual = r_dual;

    if (r_prim <= eps_prim && r_dual <= eps_dual) {
      sol.status = QpStatus::Solved;
      break;
    }

    // infeasibility certificates from one-iteration differences (scaled
    // problem; diagonal scaling preserves feasibility status)
    const Eigen::VectorXd dy = y - y_prev;
    const double dy_norm = inf_norm(dy);
    if (m > 0 && dy_norm > 1e-14) {
      bool cert = inf_norm(a.transpose() * dy) <= kInfeasTol * dy_norm;
      if (cert) {
        double support = 0.0;
        for (int i = 0; i < m; ++i) {
          if (dy[i] > kInfeasTol * dy_norm) {
            if (!std::isfinite(ub[i])) { cert = false; break; }
            support += ub[i] * dy[i];
          } else if (dy[i] < -kInfeasTol * dy_norm) {
            if (!std::isfinite(lb[i])) { cert = false; break; }
            support += lb[i] * dy[i];
          }
        }
        if (cert && support <= -kInfeasTol * dy_norm) {
          sol.status = QpStatus::PrimalInfeasible;
          break;
        }
      }
    }
    const Eigen::VectorXd dx = x - x_prev;
    const double dx_norm = inf_norm(dx);
    if (dx_norm > 1e-14) {
      bool cert = inf_norm(pfull * dx) <= kInfeasTol * dx_norm && q.dot(dx) <= -kInfeasTol * dx_norm;
      if (cert && m > 0) {
        const Eigen::VectorXd adx = a * dx;
        for (int i = 0; i < m; ++i) {
          if (std::isfinite(ub[i]) && adx[i] > kInfeasTol * dx_norm) { cert = false; break; }
          if (std::isfinite(lb[i]) && adx[i] < -kInfeasTol * dx_norm) { cert = false; break; }
        }
      }
      if (cert) {
        sol.status = QpStatus::DualInfeasible;
        break;
      }
    }

    if (iter % kRhoUpdateEvery == 0 && m > 0 && r_dual > 0.0) {
      const double prim_rel = r_prim / std::max({inf_norm(ax_u), inf_norm(z_u), 1e-10});
      const double dual_rel = r_dual / std::max({inf_norm(px_u), inf_norm(aty_u), inf_norm(q_u), 1e-10});
      const double ratio = std::sqrt(prim_rel / std::max(dual_rel, 1e-16));
      if (ratio > 5.0 || ratio < 0.2) {
        for (int i = 0; i < m; ++i) {
          rho[i] = std::clamp(rho[i] * ratio, kRhoMin, kRhoMax);
        }
        kkt.factor(pfull, a, rho);
      }
    }

    if (iter == max_iter) sol.status = QpStatus::MaxIter;
  }
  if (sol.iterations == 0) sol.iterations = max_iter;

  sol.z = sc.d.cwiseProduct(x);
  sol.y = -sc.e.cwiseProduct(y) / sc.c;  // unscale and flip to the documented convention

  // polish a solved point, or rescue a near-converged MaxIter iterate whose
  // active set is already trustworthy
  const bool near = sol.primal_residual <= 1e-3 && sol.dual_residual <= 1e-3;
  if (sol.status == QpStatus::Solved || (sol.status == QpStatus::MaxIter && near)) {
    Eigen::SparseMatrix<double> pfull_orig = full_p(p);
    Eigen::SparseMatrix<double> a_orig(m, n);
    a_orig.setFromTriplets(p.a.begin(), p.a.end());
    if (polish(p, pfull_orig, a_orig, sol)) sol.status = QpStatus::Solved;
  }
  return sol;
}

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& sol) {
  validate(p);
  const Eigen::SparseMatrix<double> pf = full_p(p);
  Eigen::SparseMatrix<double> a(p.m, p.n);
  a.setFromTriplets(p.a.begin(), p.a.end());

  KktResiduals r;
  Eigen::VectorXd stat = pf * sol.z + p.q;
  if (p.m > 0) stat -= a.transpose() * sol.y;
  r.dual = inf_norm(stat);

  if (p.m > 0) {
    const Eigen::VectorXd az = a * sol.z;
    for (int i = 0; i < p.m; ++i) {
      r.primal = std::max({r.primal, az[i] - p.ub[i], p.lb[i] - az[i]});
      const double y_lo = std::max(sol.y[i], 0.0);   // presses on the lower bound
      const double y_hi = std::max(-sol.y[i], 0.0);  // presses on the upper bound
      const double slack_lo = std::isfinite(p.lb[i]) ? std::abs(az[i] - p.lb[i]) : 1.0;
      const double slack_hi = std::isfinite(p.ub[i]) ? std::abs(az[i] - p.ub[i]) : 1.0;
      r.complementarity = std::max({r.complementarity, y_lo * slack_lo, y_hi * slack_hi});
    }
    r.primal = std::max(r.primal, 0.0);
  }
  return r;
}

}  // namespace safety_horizon

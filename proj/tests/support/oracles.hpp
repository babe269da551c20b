#pragma once

// Test-only oracles, kept independent of the implementation paths they
// check: an exhaustive active-set QP solver, numerical Lagrangian dynamics
// for the two-link arm built from forward kinematics alone, the analytic
// double-integrator safety value, and small sampling helpers.

#include "safety_horizon/models.hpp"
#include "safety_horizon/qp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oracles {

inline std::string config_dir() { return SAFETY_HORIZON_CONFIG_DIR; }

inline std::string config_path(const std::string& system) { return config_dir() + "/" + system + ".json"; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

inline Eigen::VectorXd uniform_vector(std::mt19937_64& rng, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Eigen::VectorXd v(lo.size());
  for (int i = 0; i < v.size(); ++i) v[i] = uniform(rng, lo[i], hi[i]);
  return v;
}

/// Analytic converged safety value for the 1D double integrator with
/// l(x, v) = x and |u| <= u_max.
inline double double_integrator_value(double x, double v, double u_max = 1.0) {
  const double braking = std::max(0.0, -v);
  return x - braking * braking / (2.0 * u_max);
}

/// Exhaustive active-set enumeration for small dense strictly convex QPs
/// min 0.5 z'Pz + q'z s.t. lb <= Az <= ub. Tries every assignment of rows
/// to {inactive, at lower, at upper} (equality rows are pinned, one-sided
/// rows branch two ways), solves the equality-constrained system, and
/// returns the unique KKT-consistent candidate.
inline std::optional<Eigen::VectorXd> active_set_solve(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                                                       const Eigen::MatrixXd& A, const Eigen::VectorXd& lb,
                                                       const Eigen::VectorXd& ub, double tol = 1e-7) {
  const int n = static_cast<int>(P.rows());
  const int m = static_cast<int>(A.rows());

  // per-row candidate states: 0 inactive, 1 at lower, 2 at upper
  std::vector<std::vector<int>> options(static_cast<std::size_t>(m));
  double combos = 1.0;
  for (int i = 0; i < m; ++i) {
    auto& opt = options[static_cast<std::size_t>(i)];
    const bool lo = std::isfinite(lb[i]), hi = std::isfinite(ub[i]);
    if (lo && hi && ub[i] - lb[i] < 1e-14) {
      opt = {1};
    } else {
      opt.push_back(0);
      if (lo) opt.push_back(1);
      if (hi) opt.push_back(2);
    }
    combos *= static_cast<double>(opt.size());
  }
  if (combos > 2e6) throw std::runtime_error("active_set_solve: enumeration too large");

  std::vector<int> state(static_cast<std::size_t>(m), 0);
  std::vector<int> cursor(static_cast<std::size_t>(m), 0);
  std::optional<Eigen::VectorXd> found;

  const std::function<void(int)> recurse = [&](int row) {
    if (found) return;
    if (row == m) {
      int n_active = 0;
      for (int i = 0; i < m; ++i) {
        if (state[static_cast<std::size_t>(i)] != 0) ++n_active;
      }
      if (n_active > n) return;

      Eigen::MatrixXd act(n_active, n);
      Eigen::VectorXd rhs(n_active);
      int r = 0;
      for (int i = 0; i < m; ++i) {
        if (state[static_cast<std::size_t>(i)] == 0) continue;
        act.row(r) = A.row(i);
        rhs[r] = state[static_cast<std::size_t>(i)] == 1 ? lb[i] : ub[i];
        ++r;
      }

      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + n_active, n + n_active);
      kkt.topLeftCorner(n, n) = P;
      if (n_active > 0) {
        kkt.topRightCorner(n, n_active) = act.transpose();
        kkt.bottomLeftCorner(n_active, n) = act;
      }
      Eigen::VectorXd full_rhs(n + n_active);
      full_rhs.head(n) = -q;
      full_rhs.tail(n_active) = rhs;
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (!lu.isInvertible()) return;
      const Eigen::VectorXd sol = lu.solve(full_rhs);
      const Eigen::VectorXd z = sol.head(n);
      const Eigen::VectorXd lambda = sol.tail(n_active);

      const Eigen::VectorXd az = A * z;
      for (int i = 0; i < m; ++i) {
        if (az[i] < lb[i] - tol || az[i] > ub[i] + tol) return;
      }
      // stationarity is Pz + q + act' lambda = 0: upper-active rows need
      // lambda >= 0, lower-active rows <= 0 (equalities are free)
      r = 0;
      for (int i = 0; i < m; ++i) {
        if (state[static_cast<std::size_t>(i)] == 0) continue;
        const bool equality = std::isfinite(lb[i]) && std::isfinite(ub[i]) && ub[i] - lb[i] < 1e-14;
        if (!equality) {
          if (state[static_cast<std::size_t>(i)] == 2 && lambda[r] < -tol) return;
          if (state[static_cast<std::size_t>(i)] == 1 && lambda[r] > tol) return;
        }
        ++r;
      }
      found = z;
      return;
    }
    for (int opt : options[static_cast<std::size_t>(row)]) {
      state[static_cast<std::size_t>(row)] = opt;
      recurse(row + 1);
      if (found) return;
    }
  };
  recurse(0);
  return found;
}

/// Two-link-arm accelerations derived numerically from the Lagrangian:
/// kinetic energy comes from finite-difference tip Jacobians, the mass
/// matrix from the quadratic form of the kinetic energy, and the bias from
/// finite differences of dL/dqdot and dL/dq. Shares nothing with the
/// closed-form implementation except forward kinematics.
class TwoLinkLagrangianOracle {
public:
  explicit TwoLinkLagrangianOracle(const safety_horizon::SystemConfig& cfg)
      : l1_(cfg.link1), l2_(cfg.link2), m1_(cfg.mass1), m2_(cfg.mass2 + cfg.payload), g_(cfg.gravity) {}

  Eigen::Vector2d acceleration(const Eigen::Vector2d& q, const Eigen::Vector2d& dq, const Eigen::Vector2d& tau) const {
    const Eigen::Matrix2d m = mass_matrix(q);
    const Eigen::Vector2d bias = bias_term(q, dq);
    return m.inverse() * (tau - bias);
  }

private:
  static constexpr double kStep = 1e-5;

  Eigen::Vector2d tip1(const Eigen::Vector2d& q) const {
    return {l1_ * std::cos(q[0]), l1_ * std::sin(q[0])};
  }
  Eigen::Vector2d tip2(const Eigen::Vector2d& q) const { return safety_horizon::two_link_fk(l1_, l2_, q); }

  template <typename Fk>
  Eigen::Matrix2d jacobian(Fk fk, const Eigen::Vector2d& q) const {
    Eigen::Matrix2d j;
    for (int i = 0; i < 2; ++i) {
      Eigen::Vector2d qp = q, qm = q;
      qp[i] += kStep;
      qm[i] -= kStep;
      j.col(i) = (fk(qp) - fk(qm)) / (2.0 * kStep);
    }
    return j;
  }

  double kinetic(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const {
    const Eigen::Matrix2d j1 = jacobian([this](const Eigen::Vector2d& qq) { return tip1(qq); }, q);
    const Eigen::Matrix2d j2 = jacobian([this](const Eigen::Vector2d& qq) { return tip2(qq); }, q);
    const Eigen::Vector2d v1 = j1 * dq;
    const Eigen::Vector2d v2 = j2 * dq;
    return 0.5 * m1_ * v1.squaredNorm() + 0.5 * m2_ * v2.squaredNorm();
  }

  double potential(const Eigen::Vector2d& q) const { return g_ * (m1_ * tip1(q)[1] + m2_ * tip2(q)[1]); }

  double lagrangian(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const {
    return kinetic(q, dq) - potential(q);
  }

  Eigen::Matrix2d mass_matrix(const Eigen::Vector2d& q) const {
    // kinetic energy is the quadratic form 0.5 dq' M dq
    Eigen::Matrix2d m;
    const Eigen::Vector2d e0(1.0, 0.0), e1(0.0, 1.0);
    m(0, 0) = 2.0 * kinetic(q, e0);
    m(1, 1) = 2.0 * kinetic(q, e1);
    m(0, 1) = kinetic(q, e0 + e1) - kinetic(q, e0) - kinetic(q, e1);
    m(1, 0) = m(0, 1);
    return m;
  }

  Eigen::Vector2d dl_ddq(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const {
    Eigen::Vector2d out;
    for (int i = 0; i < 2; ++i) {
      Eigen::Vector2d dp = dq, dm = dq;
      dp[i] += kStep;
      dm[i] -= kStep;
      out[i] = (lagrangian(q, dp) - lagrangian(q, dm)) / (2.0 * kStep);
    }
    return out;
  }

  Eigen::Vector2d dl_dq(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const {
    Eigen::Vector2d out;
    for (int i = 0; i < 2; ++i) {
      Eigen::Vector2d qp = q, qm = q;
      qp[i] += kStep;
      qm[i] -= kStep;
      out[i] = (lagrangian(qp, dq) - lagrangian(qm, dq)) / (2.0 * kStep);
    }
    return out;
  }

  /// Euler-Lagrange bias: d/dt(dL/ddq) at qddot = 0 minus dL/dq, which
  /// collects Coriolis, centrifugal and gravity torques.
  Eigen::Vector2d bias_term(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const {
    Eigen::Vector2d out;
    const Eigen::Vector2d qp = q + kStep * dq;
    const Eigen::Vector2d qm = q - kStep * dq;
    out = (dl_ddq(qp, dq) - dl_ddq(qm, dq)) / (2.0 * kStep) - dl_dq(q, dq);
    return out;
  }

  double l1_, l2_, m1_, m2_, g_;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace oracles

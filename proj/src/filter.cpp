#include "safety_horizon/filter.hpp"

#include "safety_horizon/qp.hpp"

#include <cmath>
#include <limits>

namespace safety_horizon {

Eigen::VectorXd filter_control(const ControlAffineSystem& system, const FilterConfig& config,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& u_nom,
                               FilterDiagnostics* diag) {
  config.validate();
  const int n_u = system.control_dim();
  const ControlBox& box = system.controls();
  const Eigen::VectorXd u_ref = box.clip(u_nom);

  Eigen::VectorXd grad(system.state_dim());
  config.value_fn->gradient(x, grad);
  const double v = config.value_fn->value(x);

  Eigen::VectorXd a(system.state_dim());
  Eigen::MatrixXd b(system.state_dim(), n_u);
  system.drift(x, a);
  system.input_matrix(x, b);

  // rate condition grad.(a + B u) >= -gamma V, linear in u
  const Eigen::VectorXd coeff = b.transpose() * grad;
  const double rhs = -config.gamma * v - grad.dot(a);

  // reachability of the rate inside the box decides feasibility exactly
  double best_rate = 0.0;
  for (int j = 0; j < n_u; ++j) best_rate += std::max(coeff[j] * box.lower[j], coeff[j] * box.upper[j]);
  if (best_rate < rhs) {
    if (diag) {
      diag->fallback = true;
      diag->constraint_active = true;
    }
    return optimal_safe_control(system, x, grad);
  }

  QpProblem qp;
  qp.n = n_u;
  qp.m = n_u + 1;
  qp.q = -2.0 * u_ref;
  qp.lb.resize(qp.m);
  qp.ub.resize(qp.m);
  for (int j = 0; j < n_u; ++j) {
    qp.p_upper.emplace_back(j, j, 2.0);
    qp.a.emplace_back(j, j, 1.0);
    qp.lb[j] = box.lower[j];
    qp.ub[j] = box.upper[j];
  }
  for (int j = 0; j < n_u; ++j) {
    if (coeff[j] != 0.0) qp.a.emplace_back(n_u, j, coeff[j]);
  }
  qp.lb[n_u] = rhs;
  qp.ub[n_u] = std::numeric_limits<double>::infinity();

  const QpSolution sol = solve_qp(qp, nullptr, 1e-8, 1e-8, 20000);
  if (diag) {
    diag->qp_iterations = sol.iterations;
    diag->fallback = false;
  }
  if (sol.status != QpStatus::Solved) {
    // feasibility was established above; treat a solver stall as a fallback
    if (diag) diag->fallback = true;
    return optimal_safe_control(system, x, grad);
  }
  const Eigen::VectorXd u = box.clip(sol.z);
  if (diag) diag->constraint_active = (u - u_ref).norm() > 1e-6;
  return u;
}

}  // namespace safety_horizon

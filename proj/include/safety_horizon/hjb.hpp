#pragma once

#include "safety_horizon/grid.hpp"
#include "safety_horizon/models.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace safety_horizon {

/// Settings for the time-marching solve of the safety variational
/// inequality. The convergence test is on max-norm change per unit of
/// backward time, which makes it CFL-invariant.
struct HjbConfig {
  double cfl = 0.5;
  double convergence_tol = 1e-4;
  int max_steps = 20000;
  int workers = 0;  // <= 0: resolve from environment / hardware
  /// Optional per-sweep observer (step index, residual per unit time,
  /// current node values). Used by tests; adds an O(nodes) copy per sweep.
  std::function<void(int, double, const std::vector<double>&)> observer;

  void validate() const {
    if (!(cfl > 0.0 && cfl <= 1.0)) throw std::invalid_argument("HjbConfig: cfl must be in (0, 1]");
    if (!(convergence_tol > 0.0)) throw std::invalid_argument("HjbConfig: convergence_tol must be positive");
    if (max_steps < 1) throw std::invalid_argument("HjbConfig: max_steps must be positive");
  }
};

struct ConvergenceReport {
  int steps = 0;
  double residual = 0.0;  // max-norm change per unit time at the last sweep
  double wall_time_s = 0.0;
  bool converged = false;
};

/// Converged safety value function on a grid. Non-negative values mark the
/// safe set; node values never exceed the constraint margin l.
struct ValueFunction {
  GridField field;
  double epsilon_default = 0.05;
  std::string system_name;
  HjbConfig solve_config;
  ConvergenceReport report;

  double value(const Eigen::Ref<const Eigen::VectorXd>& x, bool* clamped = nullptr) const {
    return field.interpolate(x, clamped);
  }
  void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out,
                bool* clamped = nullptr) const {
    field.gradient(x, out, clamped);
  }
};

/// max over admissible u of p . f(x, u); bang-bang in each control
/// component because the dynamics are control-affine.
double hamiltonian(const ControlAffineSystem& system, const Eigen::VectorXd& x, const Eigen::VectorXd& p);

/// argmax of the Hamiltonian; components with |p.B_j| <= 1e-12 take the box
/// midpoint so rollouts do not chatter on ties.
Eigen::VectorXd optimal_safe_control(const ControlAffineSystem& system, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& p);

/// Per-axis Lax-Friedrichs dissipation coefficients: the maximum of |f_i|
/// over grid nodes and box-extreme controls.
Eigen::VectorXd lf_dissipation(const ControlAffineSystem& system, const GridField& grid);

/// Marches the variational inequality backward in time from V = l until the
/// max-norm change per unit time drops below the tolerance. Non-convergence
/// within max_steps is reported in the result, not thrown.
ValueFunction solve_converged(const ControlAffineSystem& system, const std::vector<AxisSpec>& grid_spec,
                              const HjbConfig& config = {});

bool safe_set_membership(const ValueFunction& v, const Eigen::VectorXd& x, double eps);

struct Trajectory {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> controls;
  std::vector<double> times;
  double min_constraint = 0.0;
};

/// Closed-loop rollout of the optimal safe policy u*(x) = argmax of the
/// Hamiltonian at the interpolated value gradient.
Trajectory safe_policy_rollout(const ControlAffineSystem& system, const ValueFunction& v,
                               const Eigen::VectorXd& x0, double duration, double dt);

/// Finite-horizon enumeration oracle: the best min-over-time constraint
/// margin over all piecewise-constant control sequences drawn from a grid
/// of the control box. Refuses enumerations beyond 1e7 sequences.
double brute_force_value(const ControlAffineSystem& system, const Eigen::VectorXd& x, double horizon,
                         int n_segments, int controls_per_axis);

}  // namespace safety_horizon

#pragma once

#include "safety_horizon/hjb.hpp"
#include "safety_horizon/models.hpp"
#include "safety_horizon/qp.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace safety_horizon {

/// Terminal constraint V_s(x_h) >= epsilon on the interpolated safety value
/// function. Absent means the plain state-constrained formulation, which
/// instead keeps l(x_h) >= 0 on the final state.
struct TerminalSafetyValue {
  const ValueFunction* value_fn = nullptr;
  double epsilon = 0.05;
};

struct MpcConfig {
  int horizon = 8;
  double dt = 0.04;
  int control_horizon = 1;
  int max_scp_iters = 15;
  double scp_tol = 1e-4;
  double trust_region = 0.5;
  double slack_penalty = 100.0;
  std::optional<TerminalSafetyValue> terminal;

  void validate(const ControlAffineSystem& system) const;
};

struct ScpIterationLog {
  int iteration = 0;
  double merit = 0.0;
  double objective = 0.0;
  double violation = 0.0;  // L1 total used inside the merit
  double step_norm = 0.0;
  double trust_radius = 0.0;
  bool accepted = false;
  int qp_iterations = 0;
  QpStatus qp_status = QpStatus::MaxIter;
};

/// One trajectory-optimization solution: h+1 states, h controls,
/// convergence diagnostics and the worst nonlinear constraint residual.
struct ScpResult {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> controls;
  int iterations = 0;
  bool converged = false;
  double max_violation = 0.0;
  double objective = 0.0;
  std::vector<ScpIterationLog> per_iteration_log;
};

/// Variable and row layout of the convex subproblem, exposed so tests can
/// address individual constraints. Variables: state deviations, control
/// deviations, split dynamics slacks (nu+ - nu-), then inequality slacks.
/// Rows: initial-state pin, linearized dynamics, control box intersected
/// with the trust region, state trust region (k >= 1), linearized state
/// constraints, optional terminal row, then nonnegativity of nu and s.
struct SubproblemLayout {
  int h = 0, n_x = 0, n_u = 0;
  bool has_terminal_value = false;  // safety-value row at k == h
  int n_state_rows = 0;             // linearized l rows (includes k == h when no terminal value)
  int n_vars = 0, n_rows = 0;

  int x_offset(int k) const { return k * n_x; }
  int u_offset(int k) const { return (h + 1) * n_x + k * n_u; }
  int nu_pos_offset(int k) const { return (h + 1) * n_x + h * n_u + k * n_x; }
  int nu_neg_offset(int k) const { return (h + 1) * n_x + h * n_u + h * n_x + k * n_x; }
  int slack_offset(int i) const { return (h + 1) * n_x + h * n_u + 2 * h * n_x + i; }

  int init_row(int i) const { return i; }
  int dyn_row(int k, int i) const { return n_x + k * n_x + i; }
  int ctrl_row(int k, int j) const { return n_x + h * n_x + k * n_u + j; }
  int trust_row(int k, int i) const { return n_x + h * n_x + h * n_u + (k - 1) * n_x + i; }
  int state_row(int i) const { return n_x + h * n_x + h * n_u + h * n_x + i; }
  int terminal_row() const { return state_row(n_state_rows); }
  int nu_bound_row(int i) const { return state_row(n_state_rows) + (has_terminal_value ? 1 : 0) + i; }
  int slack_bound_row(int i) const { return nu_bound_row(2 * h * n_x) + i; }
};

SubproblemLayout subproblem_layout(const ControlAffineSystem& system, const MpcConfig& config);

/// Assembles the Gauss-Newton trust-region subproblem around the reference
/// trajectory. Feasible by construction: zero deviations with slacks
/// absorbing defects and violations always satisfy every row.
QpProblem build_subproblem(const ControlAffineSystem& system, const MpcConfig& config, const ScpResult& reference,
                           const Eigen::VectorXd& x0);

/// Sequential convex programming with an exact L1 penalty merit test and
/// trust-region halving on rejected iterates.
ScpResult solve_scp(const ControlAffineSystem& system, const MpcConfig& config, const Eigen::VectorXd& x0,
                    const ScpResult& guess);

/// Shifts the previous solution by the control horizon, repeats the last
/// control, rolls out the tail and pins the first state to the new state.
ScpResult warm_start(const ControlAffineSystem& system, const MpcConfig& config, const ScpResult& previous,
                     const Eigen::VectorXd& x_new);

/// Constant-state cold-start guess with the system's hold control.
ScpResult cold_start_guess(const ControlAffineSystem& system, const MpcConfig& config, const Eigen::VectorXd& x0);

/// True nonlinear trajectory measures used by the merit test and reporting.
struct TrajectoryMeasures {
  double objective = 0.0;
  double violation_l1 = 0.0;
  double max_violation = 0.0;
};
TrajectoryMeasures measure_trajectory(const ControlAffineSystem& system, const MpcConfig& config,
                                      const std::vector<Eigen::VectorXd>& states,
                                      const std::vector<Eigen::VectorXd>& controls);

/// Receding-horizon controller with warm starting across steps.
class MpcController {
public:
  MpcController(const ControlAffineSystem& system, MpcConfig config);

  struct StepResult {
    std::vector<Eigen::VectorXd> controls;  // exactly control_horizon entries
    int scp_iterations = 0;
    double plan_ms = 0.0;
    bool converged = false;
    double max_violation = 0.0;
    double terminal_value = 0.0;  // interpolated V_s at the planned final state, 0 when unused
  };

  StepResult step(const Eigen::VectorXd& x);
  void reset() { previous_.reset(); }
  const std::optional<ScpResult>& previous() const { return previous_; }
  const MpcConfig& config() const { return config_; }

private:
  const ControlAffineSystem& system_;
  MpcConfig config_;
  std::optional<ScpResult> previous_;
};

/// Finite-horizon estimate of the safety value from the smoothed-penalty
/// optimal control problem with objective sum_k exp(-alpha l(x_k)); returns
/// the min of l along the optimized trajectory. SCP failure is reported
/// through the optional flag and the best-so-far estimate is returned.
double approx_safety_value(const ControlAffineSystem& system, const Eigen::VectorXd& x, int horizon_steps,
                           double dt, double alpha = 10.0, bool* scp_converged = nullptr);

}  // namespace safety_horizon

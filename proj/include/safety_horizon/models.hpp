#pragma once

#include "safety_horizon/grid.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace safety_horizon {

/// Residuals within this distance of zero count a control constraint as
/// active in the benchmark metrics.
inline constexpr double kActiveControlTol = 1e-6;

/// Componentwise control bounds; the admissible set is the box
/// [lower, upper] and the constraint residuals are (u - lower, upper - u).
struct ControlBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  Eigen::VectorXd midpoint() const { return 0.5 * (lower + upper); }
  Eigen::VectorXd clip(const Eigen::VectorXd& u) const { return u.cwiseMax(lower).cwiseMin(upper); }
  bool contains(const Eigen::VectorXd& u, double tol = 0.0) const {
    return ((u - lower).minCoeff() >= -tol) && ((upper - u).minCoeff() >= -tol);
  }
  void validate() const;
};

struct Obstacle {
  Eigen::Vector2d center;
  double radius = 0.0;
};

/// Parsed per-system JSON config: dynamics parameters, grid domain for the
/// value function, obstacle geometry and the task goal.
struct SystemConfig {
  std::string system;
  std::vector<AxisSpec> grid;
  std::optional<Obstacle> obstacle;
  Eigen::VectorXd goal;
  // dynamics / cost parameters with per-system meaning
  double u_max = 1.0;
  double a_max = 1.0;
  double speed = 1.0;
  double omega_max = 1.0;
  double w_u = 1e-2;
  double w_v = 1e-2;
  // two-link arm
  double link1 = 1.0, link2 = 1.0;
  double mass1 = 1.0, mass2 = 1.0, payload = 0.0;
  double gravity = 9.81;
  Eigen::VectorXd tau_max;

  std::string dump_json() const;
};

SystemConfig load_system_config(const std::string& path);
SystemConfig parse_system_config(const std::string& json_text);

/// Continuous-time control-affine benchmark system
///   xdot = drift(x) + input_matrix(x) * u,  u in a box,
/// with a state-constraint margin l (>= 0 iff safe) and a distance-to-goal
/// task cost. Instances are immutable after construction; every method is a
/// pure function of its arguments.
class ControlAffineSystem {
public:
  virtual ~ControlAffineSystem() = default;

  const std::string& name() const { return config_.system; }
  int state_dim() const { return n_x_; }
  int control_dim() const { return n_u_; }
  const ControlBox& controls() const { return controls_; }
  const SystemConfig& config() const { return config_; }

  virtual void drift(const Eigen::VectorXd& x, Eigen::VectorXd& out) const = 0;
  virtual void input_matrix(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const = 0;

  /// Signed state-constraint margin l(x); >= 0 iff the state is admissible.
  virtual double constraint(const Eigen::VectorXd& x) const = 0;

  /// Distance term of the task cost (|FK(q) - p_d| for the arm, |p - p_d|
  /// for point systems). goal_residual exposes the underlying residual and
  /// its Jacobian for Gauss-Newton models.
  virtual double goal_distance(const Eigen::VectorXd& x) const = 0;
  virtual void goal_residual(const Eigen::VectorXd& x, Eigen::VectorXd& e, Eigen::MatrixXd* jac) const = 0;

  /// Control held to keep the system near rest; zero for point systems,
  /// box-clipped gravity compensation for the arm. Used for cold starts.
  virtual Eigen::VectorXd hold_control(const Eigen::VectorXd& x) const;

  /// Normalizes periodic state components (heading angle for the Dubins
  /// car); identity elsewhere. Applied to measured states in rollouts.
  virtual Eigen::VectorXd wrap_state(const Eigen::VectorXd& x) const { return x; }

  Eigen::VectorXd dynamics(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

  /// Classical RK4 step with zero-order-hold control.
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt) const;

  /// Control-box residuals (u - lower, upper - u), length 2*n_u.
  Eigen::VectorXd control_constraint(const Eigen::VectorXd& u) const;
  int active_control_count(const Eigen::VectorXd& u, double tol = kActiveControlTol) const;

  double running_cost(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;
  double terminal_cost(const Eigen::VectorXd& x) const;
  /// Per-state quadratic regularizer weights (w_v on velocity components).
  const Eigen::VectorXd& state_cost_weights() const { return state_weights_; }
  double control_cost_weight() const { return config_.w_u; }

  /// Central finite differences (step 1e-6) of step(), running/terminal
  /// cost and l. The SCP subproblem and its tests consume these.
  void step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt, Eigen::MatrixXd& A,
                      Eigen::MatrixXd& B) const;
  Eigen::VectorXd constraint_gradient(const Eigen::VectorXd& x) const;
  void running_cost_gradients(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& gx,
                              Eigen::VectorXd& gu) const;
  Eigen::VectorXd terminal_cost_gradient(const Eigen::VectorXd& x) const;

protected:
  ControlAffineSystem(SystemConfig config, int n_x, int n_u, ControlBox controls, Eigen::VectorXd state_weights);
  void check_state(const Eigen::VectorXd& x) const;
  void check_control(const Eigen::VectorXd& u) const;

  SystemConfig config_;
  int n_x_;
  int n_u_;
  ControlBox controls_;
  Eigen::VectorXd state_weights_;
};

std::unique_ptr<ControlAffineSystem> make_system(const SystemConfig& config);
std::unique_ptr<ControlAffineSystem> load_system(const std::string& config_path);

/// Planar two-link forward kinematics (shared with tests and configs).
Eigen::Vector2d two_link_fk(double l1, double l2, const Eigen::Vector2d& q);

/// The five desk-scale benchmark systems, loaded from a config directory.
struct BenchmarkSuite {
  std::vector<std::unique_ptr<ControlAffineSystem>> systems;
  static const std::vector<std::string>& names();
  static BenchmarkSuite load(const std::string& config_dir);
};

}  // namespace safety_horizon

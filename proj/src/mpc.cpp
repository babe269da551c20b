#include "safety_horizon/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace safety_horizon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDistanceFloor = 1e-2;  // Gauss-Newton curvature floor for the norm cost
constexpr double kTinyDiag = 1e-8;
constexpr double kQpEpsAbs = 1e-4;
constexpr double kQpEpsRel = 1e-4;
constexpr int kQpMaxIter = 2000;
constexpr int kMaxRejections = 5;
constexpr double kExpClamp = 30.0;

/// Internal objective selection: the task cost, or the exponential
/// state-constraint penalty used by the approximate safety OCP (which also
/// drops the state-constraint rows).
struct ObjectiveSpec {
  bool task = true;
  double exp_alpha = 0.0;
};

SubproblemLayout make_layout(const ControlAffineSystem& system, const MpcConfig& config, bool with_state_rows) {
  SubproblemLayout lay;
  lay.h = config.horizon;
  lay.n_x = system.state_dim();
  lay.n_u = system.control_dim();
  lay.has_terminal_value = with_state_rows && config.terminal.has_value();
  lay.n_state_rows = with_state_rows ? (config.terminal ? lay.h : lay.h + 1) : 0;
  const int n_slacks = lay.n_state_rows + (lay.has_terminal_value ? 1 : 0);
  lay.n_vars = (lay.h + 1) * lay.n_x + lay.h * lay.n_u + 2 * lay.h * lay.n_x + n_slacks;
  lay.n_rows = lay.n_x + lay.h * lay.n_x + lay.h * lay.n_u + lay.h * lay.n_x + lay.n_state_rows +
               (lay.has_terminal_value ? 1 : 0) + 2 * lay.h * lay.n_x + n_slacks;
  return lay;
}

void add_symmetric_block(std::vector<Eigen::Triplet<double>>& t, int offset, const Eigen::MatrixXd& block) {
  for (int i = 0; i < block.rows(); ++i) {
    for (int j = i; j < block.cols(); ++j) {
      if (block(i, j) != 0.0) t.emplace_back(offset + i, offset + j, block(i, j));
    }
  }
}

QpProblem assemble(const ControlAffineSystem& system, const MpcConfig& config, const ScpResult& ref,
                   const Eigen::VectorXd& x0, double trust_radius, const ObjectiveSpec& objective,
                   const SubproblemLayout& lay) {
  const int h = lay.h, n_x = lay.n_x, n_u = lay.n_u;
  const double mu = config.slack_penalty;

  QpProblem qp;
  qp.n = lay.n_vars;
  qp.m = lay.n_rows;
  qp.q = Eigen::VectorXd::Zero(qp.n);
  qp.lb = Eigen::VectorXd::Constant(qp.m, -kInf);
  qp.ub = Eigen::VectorXd::Constant(qp.m, kInf);

  for (int i = 0; i < qp.n; ++i) qp.p_upper.emplace_back(i, i, kTinyDiag);

  // objective
  if (objective.task) {
    Eigen::VectorXd e;
    Eigen::MatrixXd jac;
    for (int k = 0; k <= h; ++k) {
      const Eigen::VectorXd& xk = ref.states[static_cast<std::size_t>(k)];
      system.goal_residual(xk, e, &jac);
      const double denom = std::max(e.norm(), kDistanceFloor);
      qp.q.segment(lay.x_offset(k), n_x) += jac.transpose() * e / denom;
      add_symmetric_block(qp.p_upper, lay.x_offset(k), Eigen::MatrixXd(jac.transpose() * jac / denom));
      const Eigen::VectorXd& w = system.state_cost_weights();
      qp.q.segment(lay.x_offset(k), n_x) += 2.0 * w.cwiseProduct(xk);
      for (int i = 0; i < n_x; ++i) {
        if (w[i] != 0.0) qp.p_upper.emplace_back(lay.x_offset(k) + i, lay.x_offset(k) + i, 2.0 * w[i]);
      }
      if (k < h) {
        const Eigen::VectorXd& uk = ref.controls[static_cast<std::size_t>(k)];
        const double wu = system.control_cost_weight();
        qp.q.segment(lay.u_offset(k), n_u) += 2.0 * wu * uk;
        for (int j = 0; j < n_u; ++j) qp.p_upper.emplace_back(lay.u_offset(k) + j, lay.u_offset(k) + j, 2.0 * wu);
      }
    }
  } else {
    const double alpha = objective.exp_alpha;
    for (int k = 0; k <= h; ++k) {
      const Eigen::VectorXd& xk = ref.states[static_cast<std::size_t>(k)];
      const double lk = system.constraint(xk);
      const Eigen::VectorXd g = system.constraint_gradient(xk);
      const double w = std::exp(std::clamp(-alpha * lk, -kExpClamp, kExpClamp));
      qp.q.segment(lay.x_offset(k), n_x) += -alpha * w * g;
      add_symmetric_block(qp.p_upper, lay.x_offset(k), Eigen::MatrixXd(0.5 * alpha * alpha * w * g * g.transpose()));
    }
  }

  // initial-state pin
  for (int i = 0; i < n_x; ++i) {
    qp.a.emplace_back(lay.init_row(i), lay.x_offset(0) + i, 1.0);
    const double rhs = x0[i] - ref.states[0][i];
    qp.lb[lay.init_row(i)] = rhs;
    qp.ub[lay.init_row(i)] = rhs;
  }

  // linearized dynamics with split slacks: A_k dx_k + B_k du_k - dx_{k+1} + nu+ - nu- = -d_k
  Eigen::MatrixXd A, B;
  for (int k = 0; k < h; ++k) {
    const Eigen::VectorXd& xk = ref.states[static_cast<std::size_t>(k)];
    const Eigen::VectorXd& uk = ref.controls[static_cast<std::size_t>(k)];
    system.step_jacobians(xk, uk, config.dt, A, B);
    const Eigen::VectorXd defect = system.step(xk, uk, config.dt) - ref.states[static_cast<std::size_t>(k) + 1];
    for (int i = 0; i < n_x; ++i) {
      const int row = lay.dyn_row(k, i);
      for (int j = 0; j < n_x; ++j) {
        if (A(i, j) != 0.0) qp.a.emplace_back(row, lay.x_offset(k) + j, A(i, j));
      }
      for (int j = 0; j < n_u; ++j) {
        if (B(i, j) != 0.0) qp.a.emplace_back(row, lay.u_offset(k) + j, B(i, j));
      }
      qp.a.emplace_back(row, lay.x_offset(k + 1) + i, -1.0);
      qp.a.emplace_back(row, lay.nu_pos_offset(k) + i, 1.0);
      qp.a.emplace_back(row, lay.nu_neg_offset(k) + i, -1.0);
      qp.lb[row] = -defect[i];
      qp.ub[row] = -defect[i];
    }
  }

  // control box intersected with the trust region (both contain du = 0)
  const ControlBox& box = system.controls();
  for (int k = 0; k < h; ++k) {
    const Eigen::VectorXd& uk = ref.controls[static_cast<std::size_t>(k)];
    for (int j = 0; j < n_u; ++j) {
      const int row = lay.ctrl_row(k, j);
      qp.a.emplace_back(row, lay.u_offset(k) + j, 1.0);
      qp.lb[row] = std::max(box.lower[j] - uk[j], -trust_radius);
      qp.ub[row] = std::min(box.upper[j] - uk[j], trust_radius);
      if (qp.lb[row] > qp.ub[row]) {  // reference outside the box; keep the row feasible
        const double mid = 0.5 * (qp.lb[row] + qp.ub[row]);
        qp.lb[row] = mid;
        qp.ub[row] = mid;
      }
    }
  }

  // state trust region, k >= 1 (k = 0 is pinned)
  for (int k = 1; k <= h; ++k) {
    for (int i = 0; i < n_x; ++i) {
      const int row = lay.trust_row(k, i);
      qp.a.emplace_back(row, lay.x_offset(k) + i, 1.0);
      qp.lb[row] = -trust_radius;
      qp.ub[row] = trust_radius;
    }
  }

  // linearized state constraint l(x) >= 0 with slack, and terminal handling
  for (int idx = 0; idx < lay.n_state_rows; ++idx) {
    const int k = idx;  // rows cover k = 0..h-1, plus k = h when no terminal value function
    const int row = lay.state_row(idx);
    const Eigen::VectorXd& xk = ref.states[static_cast<std::size_t>(k)];
    const Eigen::VectorXd g = system.constraint_gradient(xk);
    for (int i = 0; i < n_x; ++i) {
      if (g[i] != 0.0) qp.a.emplace_back(row, lay.x_offset(k) + i, g[i]);
    }
    qp.a.emplace_back(row, lay.slack_offset(idx), 1.0);
    qp.lb[row] = -system.constraint(xk);
    qp.q[lay.slack_offset(idx)] += mu;
  }
  if (lay.has_terminal_value) {
    const int row = lay.terminal_row();
    const ValueFunction& vf = *config.terminal->value_fn;
    const Eigen::VectorXd& xh = ref.states[static_cast<std::size_t>(h)];
    Eigen::VectorXd g(n_x);
    vf.gradient(xh, g);
    const double vh = vf.value(xh);
    for (int i = 0; i < n_x; ++i) {
      if (g[i] != 0.0) qp.a.emplace_back(row, lay.x_offset(h) + i, g[i]);
    }
    const int slack = lay.slack_offset(lay.n_state_rows);
    qp.a.emplace_back(row, slack, 1.0);
    qp.lb[row] = config.terminal->epsilon - vh;
    qp.q[slack] += mu;
  }

  // nonnegativity of the split dynamics slacks and the constraint slacks
  for (int k = 0; k < h; ++k) {
    for (int i = 0; i < n_x; ++i) {
      const int rp = lay.nu_bound_row(k * n_x + i);
      qp.a.emplace_back(rp, lay.nu_pos_offset(k) + i, 1.0);
      qp.lb[rp] = 0.0;
      const int rm = lay.nu_bound_row(h * n_x + k * n_x + i);
      qp.a.emplace_back(rm, lay.nu_neg_offset(k) + i, 1.0);
      qp.lb[rm] = 0.0;
      qp.q[lay.nu_pos_offset(k) + i] += mu;
      qp.q[lay.nu_neg_offset(k) + i] += mu;
    }
  }
  const int n_slacks = lay.n_state_rows + (lay.has_terminal_value ? 1 : 0);
  for (int i = 0; i < n_slacks; ++i) {
    const int row = lay.slack_bound_row(i);
    qp.a.emplace_back(row, lay.slack_offset(i), 1.0);
    qp.lb[row] = 0.0;
  }

  return qp;
}

TrajectoryMeasures measure(const ControlAffineSystem& system, const MpcConfig& config,
                           const std::vector<Eigen::VectorXd>& states, const std::vector<Eigen::VectorXd>& controls,
                           const ObjectiveSpec& objective, bool with_state_rows) {
  const int h = config.horizon;
  TrajectoryMeasures out;

  if (objective.task) {
    for (int k = 0; k < h; ++k)
      out.objective += system.running_cost(states[static_cast<std::size_t>(k)], controls[static_cast<std::size_t>(k)]);
    out.objective += system.terminal_cost(states[static_cast<std::size_t>(h)]);
  } else {
    for (int k = 0; k <= h; ++k) {
      out.objective +=
          std::exp(std::clamp(-objective.exp_alpha * system.constraint(states[static_cast<std::size_t>(k)]),
                              -kExpClamp, kExpClamp));
    }
  }

  const ControlBox& box = system.controls();
  for (int k = 0; k < h; ++k) {
    const Eigen::VectorXd defect =
        system.step(states[static_cast<std::size_t>(k)], controls[static_cast<std::size_t>(k)], config.dt) -
        states[static_cast<std::size_t>(k) + 1];
    out.violation_l1 += defect.cwiseAbs().sum();
    out.max_violation = std::max(out.max_violation, defect.cwiseAbs().maxCoeff());
    const Eigen::VectorXd& u = controls[static_cast<std::size_t>(k)];
    const double box_viol = std::max((box.lower - u).maxCoeff(), (u - box.upper).maxCoeff());
    out.max_violation = std::max(out.max_violation, box_viol);
  }
  if (with_state_rows) {
    const int last_l = config.terminal ? h - 1 : h;
    for (int k = 0; k <= last_l; ++k) {
      const double v = std::max(0.0, -system.constraint(states[static_cast<std::size_t>(k)]));
      out.violation_l1 += v;
      out.max_violation = std::max(out.max_violation, v);
    }
    if (config.terminal) {
      const double vh = config.terminal->value_fn->value(states[static_cast<std::size_t>(h)]);
      const double v = std::max(0.0, config.terminal->epsilon - vh);
      out.violation_l1 += v;
      out.max_violation = std::max(out.max_violation, v);
    }
  }
  return out;
}

void validate_shape(const ControlAffineSystem& system, const MpcConfig& config, const ScpResult& traj) {
  if (static_cast<int>(traj.states.size()) != config.horizon + 1 ||
      static_cast<int>(traj.controls.size()) != config.horizon)
    throw std::invalid_argument("scp: reference trajectory shape does not match the horizon");
  for (const auto& x : traj.states) {
    if (x.size() != system.state_dim()) throw std::invalid_argument("scp: reference state dimension mismatch");
  }
  for (const auto& u : traj.controls) {
    if (u.size() != system.control_dim()) throw std::invalid_argument("scp: reference control dimension mismatch");
  }
}

ScpResult solve_scp_impl(const ControlAffineSystem& system, const MpcConfig& config, const Eigen::VectorXd& x0,
                         const ScpResult& guess, const ObjectiveSpec& objective, bool with_state_rows) {
  config.validate(system);
  validate_shape(system, config, guess);
  if (x0.size() != system.state_dim()) throw std::invalid_argument("scp: x0 dimension mismatch");

  const SubproblemLayout lay = make_layout(system, config, with_state_rows);
  const int h = config.horizon, n_x = lay.n_x, n_u = lay.n_u;

  ScpResult ref = guess;
  ref.per_iteration_log.clear();
  ref.iterations = 0;
  for (auto& u : ref.controls) u = system.controls().clip(u);
  ref.states[0] = x0;

  TrajectoryMeasures cur = measure(system, config, ref.states, ref.controls, objective, with_state_rows);
  double trust = config.trust_region;
  QpSolution warm;
  bool have_warm = false;
  bool converged_step = false;
  int rejections = 0;

  while (ref.iterations < config.max_scp_iters) {
    const QpProblem qp = assemble(system, config, ref, x0, trust, objective, lay);
    const QpSolution sol = solve_qp(qp, have_warm ? &warm : nullptr, kQpEpsAbs, kQpEpsRel, kQpMaxIter);
    ref.iterations += 1;

    ScpIterationLog log;
    log.iteration = ref.iterations;
    log.trust_radius = trust;
    log.qp_iterations = sol.iterations;
    log.qp_status = sol.status;

    if (sol.status != QpStatus::Solved) {
      log.merit = cur.objective + config.slack_penalty * cur.violation_l1;
      log.objective = cur.objective;
      log.violation = cur.violation_l1;
      ref.per_iteration_log.push_back(log);
      break;  // failed subproblem: return best-so-far
    }
    warm = sol;
    have_warm = true;

    // candidate trajectory with controls projected onto the box
    std::vector<Eigen::VectorXd> cand_states(ref.states);
    std::vector<Eigen::VectorXd> cand_controls(ref.controls);
    double step_norm = 0.0;
    for (int k = 0; k <= h; ++k) {
      const Eigen::VectorXd dx = sol.z.segment(lay.x_offset(k), n_x);
      cand_states[static_cast<std::size_t>(k)] += dx;
      step_norm = std::max(step_norm, dx.cwiseAbs().maxCoeff());
    }
    for (int k = 0; k < h; ++k) {
      const Eigen::VectorXd du = sol.z.segment(lay.u_offset(k), n_u);
      cand_controls[static_cast<std::size_t>(k)] =
          system.controls().clip(cand_controls[static_cast<std::size_t>(k)] + du);
      step_norm = std::max(step_norm, du.cwiseAbs().maxCoeff());
    }

    const TrajectoryMeasures cand = measure(system, config, cand_states, cand_controls, objective, with_state_rows);
    const double merit_cur = cur.objective + config.slack_penalty * cur.violation_l1;
    const double merit_cand = cand.objective + config.slack_penalty * cand.violation_l1;

    log.step_norm = step_norm;
    log.objective = cand.objective;
    log.violation = cand.violation_l1;
    log.merit = merit_cand;
    log.accepted = merit_cand <= merit_cur;
    ref.per_iteration_log.push_back(log);

    if (log.accepted) {
      ref.states = std::move(cand_states);
      ref.controls = std::move(cand_controls);
      cur = cand;
      rejections = 0;
      trust = config.trust_region;
    } else {
      rejections += 1;
      trust *= 0.5;
      if (rejections >= kMaxRejections) break;
    }

    if (step_norm < config.scp_tol) {
      converged_step = true;
      break;
    }
  }

  cur = measure(system, config, ref.states, ref.controls, objective, with_state_rows);
  ref.objective = cur.objective;
  ref.max_violation = cur.max_violation;
  ref.converged = converged_step && cur.max_violation <= 1e-4;
  return ref;
}

}  // namespace

void MpcConfig::validate(const ControlAffineSystem& system) const {
  (void)system;
  if (horizon < 1) throw std::invalid_argument("MpcConfig: horizon must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("MpcConfig: dt must be positive");
  if (control_horizon < 1 || control_horizon >= horizon + 1)
    throw std::invalid_argument("MpcConfig: need 1 <= control_horizon <= horizon");
  if (!(trust_region > 0.0)) throw std::invalid_argument("MpcConfig: trust_region must be positive");
  if (!(slack_penalty > 0.0)) throw std::invalid_argument("MpcConfig: slack_penalty must be positive");
  if (terminal && terminal->value_fn == nullptr)
    throw std::invalid_argument("MpcConfig: terminal constraint requires a value function");
}

SubproblemLayout subproblem_layout(const ControlAffineSystem& system, const MpcConfig& config) {
  return make_layout(system, config, true);
}

QpProblem build_subproblem(const ControlAffineSystem& system, const MpcConfig& config, const ScpResult& reference,
                           const Eigen::VectorXd& x0) {
  config.validate(system);
  validate_shape(system, config, reference);
  return assemble(system, config, reference, x0, config.trust_region, ObjectiveSpec{true, 0.0},
                  make_layout(system, config, true));
}

ScpResult solve_scp(const ControlAffineSystem& system, const MpcConfig& config, const Eigen::VectorXd& x0,
                    const ScpResult& guess) {
  return solve_scp_impl(system, config, x0, guess, ObjectiveSpec{true, 0.0}, true);
}

TrajectoryMeasures measure_trajectory(const ControlAffineSystem& system, const MpcConfig& config,
                                      const std::vector<Eigen::VectorXd>& states,
                                      const std::vector<Eigen::VectorXd>& controls) {
  return measure(system, config, states, controls, ObjectiveSpec{true, 0.0}, true);
}

ScpResult warm_start(const ControlAffineSystem& system, const MpcConfig& config, const ScpResult& previous,
                     const Eigen::VectorXd& x_new) {
  validate_shape(system, config, previous);
  const int h = config.horizon, c = config.control_horizon;
  ScpResult guess;
  guess.states.resize(static_cast<std::size_t>(h) + 1);
  guess.controls.resize(static_cast<std::size_t>(h));
  for (int k = 0; k + c <= h; ++k) guess.states[static_cast<std::size_t>(k)] = previous.states[static_cast<std::size_t>(k + c)];
  for (int k = 0; k + c <= h - 1; ++k)
    guess.controls[static_cast<std::size_t>(k)] = previous.controls[static_cast<std::size_t>(k + c)];
  const Eigen::VectorXd last = previous.controls.back();
  for (int k = h - c; k < h; ++k) {
    guess.controls[static_cast<std::size_t>(k)] = last;
    guess.states[static_cast<std::size_t>(k) + 1] =
        system.step(guess.states[static_cast<std::size_t>(k)], last, config.dt);
  }
  guess.states[0] = x_new;
  return guess;
}

ScpResult cold_start_guess(const ControlAffineSystem& system, const MpcConfig& config, const Eigen::VectorXd& x0) {
  ScpResult guess;
  const Eigen::VectorXd hold = system.hold_control(x0);
  guess.states.assign(static_cast<std::size_t>(config.horizon) + 1, x0);
  guess.controls.assign(static_cast<std::size_t>(config.horizon), hold);
  return guess;
}

MpcController::MpcController(const ControlAffineSystem& system, MpcConfig config)
    : system_(system), config_(std::move(config)) {
  config_.validate(system_);
}

MpcController::StepResult MpcController::step(const Eigen::VectorXd& x) {
  const auto t0 = std::chrono::steady_clock::now();
  const ScpResult guess = previous_ ? warm_start(system_, config_, *previous_, x)
                                    : cold_start_guess(system_, config_, x);
  ScpResult res = solve_scp(system_, config_, x, guess);

  StepResult out;
  out.scp_iterations = res.iterations;
  out.converged = res.converged;
  out.max_violation = res.max_violation;
  if (config_.terminal) out.terminal_value = config_.terminal->value_fn->value(res.states.back());
  out.controls.assign(res.controls.begin(), res.controls.begin() + config_.control_horizon);
  previous_ = std::move(res);
  out.plan_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double approx_safety_value(const ControlAffineSystem& system, const Eigen::VectorXd& x, int horizon_steps,
                           double dt, double alpha, bool* scp_converged) {
  if (!(alpha > 0.0)) throw std::invalid_argument("approx_safety_value: alpha must be positive");
  MpcConfig cfg;
  cfg.horizon = horizon_steps;
  cfg.dt = dt;
  cfg.control_horizon = 1;
  cfg.max_scp_iters = 20;
  cfg.scp_tol = 1e-4;
  cfg.trust_region = 1.0;
  cfg.slack_penalty = 100.0;

  // dynamically consistent hold rollout as the initial guess
  ScpResult guess;
  guess.states.resize(static_cast<std::size_t>(horizon_steps) + 1);
  guess.controls.resize(static_cast<std::size_t>(horizon_steps));
  guess.states[0] = x;
  for (int k = 0; k < horizon_steps; ++k) {
    guess.controls[static_cast<std::size_t>(k)] = system.hold_control(guess.states[static_cast<std::size_t>(k)]);
    guess.states[static_cast<std::size_t>(k) + 1] =
        system.step(guess.states[static_cast<std::size_t>(k)], guess.controls[static_cast<std::size_t>(k)], dt);
  }

  const ScpResult res = solve_scp_impl(system, cfg, x, guess, ObjectiveSpec{false, alpha}, false);
  if (scp_converged) *scp_converged = res.converged;
  double min_l = std::numeric_limits<double>::infinity();
  for (const auto& xs : res.states) min_l = std::min(min_l, system.constraint(xs));
  return min_l;
}

}  // namespace safety_horizon

#include "safety_horizon/hjb.hpp"

#include "safety_horizon/parallel.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>

namespace safety_horizon {

double hamiltonian(const ControlAffineSystem& system, const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
  if (p.size() != system.state_dim()) throw std::invalid_argument("hamiltonian: costate dimension mismatch");
  Eigen::VectorXd a(system.state_dim());
  Eigen::MatrixXd b(system.state_dim(), system.control_dim());
  system.drift(x, a);
  system.input_matrix(x, b);
  double h = p.dot(a);
  const ControlBox& box = system.controls();
  for (int j = 0; j < system.control_dim(); ++j) {
    const double pb = p.dot(b.col(j));
    h += std::max(pb * box.lower[j], pb * box.upper[j]);
  }
  return h;
}

Eigen::VectorXd optimal_safe_control(const ControlAffineSystem& system, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& p) {
  Eigen::VectorXd a(system.state_dim());
  Eigen::MatrixXd b(system.state_dim(), system.control_dim());
  system.drift(x, a);
  system.input_matrix(x, b);
  const ControlBox& box = system.controls();
  Eigen::VectorXd u(system.control_dim());
  for (int j = 0; j < system.control_dim(); ++j) {
    const double pb = p.dot(b.col(j));
    if (pb > 1e-12) {
      u[j] = box.upper[j];
    } else if (pb < -1e-12) {
      u[j] = box.lower[j];
    } else {
      u[j] = 0.5 * (box.lower[j] + box.upper[j]);
    }
  }
  return u;
}

Eigen::VectorXd lf_dissipation(const ControlAffineSystem& system, const GridField& grid) {
  const int d = system.state_dim();
  if (grid.dim() != d) throw std::invalid_argument("lf_dissipation: grid dimension mismatch");
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd a(d);
  Eigen::MatrixXd b(d, system.control_dim());
  const ControlBox& box = system.controls();
  grid.for_each_node([&](std::size_t, const std::vector<int>&, const Eigen::VectorXd& x) {
    system.drift(x, a);
    system.input_matrix(x, b);
    for (int i = 0; i < d; ++i) {
      // extreme values of f_i over the control box, reached at a vertex
      double hi = a[i], lo = a[i];
      for (int j = 0; j < system.control_dim(); ++j) {
        hi += std::max(b(i, j) * box.lower[j], b(i, j) * box.upper[j]);
        lo += std::min(b(i, j) * box.lower[j], b(i, j) * box.upper[j]);
      }
      alpha[i] = std::max(alpha[i], std::max(std::abs(hi), std::abs(lo)));
    }
  });
  if (alpha.maxCoeff() <= 0.0) throw std::runtime_error("lf_dissipation: degenerate dynamics (all-zero speeds)");
  return alpha;
}

namespace {

/// Workspace for the sweep kernel; one per worker thread.
struct SweepWorkspace {
  Eigen::VectorXd x, a, pbar;
  Eigen::MatrixXd b;
  std::vector<int> idx;
};

}  // namespace

ValueFunction solve_converged(const ControlAffineSystem& system, const std::vector<AxisSpec>& grid_spec,
                              const HjbConfig& config) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();

  GridField field(grid_spec);
  const int d = field.dim();
  if (d != system.state_dim()) throw std::invalid_argument("solve_converged: grid dimension mismatch");

  // terminal condition V = l, evaluated once per node
  std::vector<double> l_values(field.size());
  field.for_each_node([&](std::size_t flat, const std::vector<int>&, const Eigen::VectorXd& x) {
    l_values[flat] = system.constraint(x);
  });
  field.set_values(l_values);

  const Eigen::VectorXd alpha = lf_dissipation(system, field);
  double cfl_sum = 0.0;
  for (int i = 0; i < d; ++i) cfl_sum += alpha[i] / field.axis(i).spacing();
  const double dt = config.cfl / cfl_sum;

  const int workers = resolve_worker_count(config.workers);
  std::vector<double> old_values = l_values;
  std::vector<double> new_values(field.size());

  // per-axis strides and node counts for the kernel
  std::vector<std::size_t> strides(static_cast<std::size_t>(d));
  std::vector<int> counts(static_cast<std::size_t>(d));
  std::vector<double> inv_spacing(static_cast<std::size_t>(d));
  std::vector<double> spacing(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    strides[static_cast<std::size_t>(i)] = field.stride(i);
    counts[static_cast<std::size_t>(i)] = field.axis(i).n;
    spacing[static_cast<std::size_t>(i)] = field.axis(i).spacing();
    inv_spacing[static_cast<std::size_t>(i)] = 1.0 / field.axis(i).spacing();
  }

  ConvergenceReport report;
  const double stop_residual = config.convergence_tol;  // in change-per-unit-time units

  for (int step = 1; step <= config.max_steps; ++step) {
    std::atomic<bool> saw_nan{false};
    std::vector<double> worker_residual(static_cast<std::size_t>(workers), 0.0);
    std::atomic<int> worker_slot{0};

    parallel_for(field.size(), workers, [&](std::size_t begin, std::size_t end) {
      const int slot = worker_slot.fetch_add(1);
      SweepWorkspace ws;
      ws.x.resize(d);
      ws.a.resize(d);
      ws.pbar.resize(d);
      ws.b.resize(d, system.control_dim());
      ws.idx.assign(static_cast<std::size_t>(d), 0);
      std::size_t rem = begin;
      for (int i = 0; i < d; ++i) {
        ws.idx[static_cast<std::size_t>(i)] = static_cast<int>(rem / strides[static_cast<std::size_t>(i)]);
        rem %= strides[static_cast<std::size_t>(i)];
        ws.x[i] = field.axis(i).coord(ws.idx[static_cast<std::size_t>(i)]);
      }
      double local_res = 0.0;
      const ControlBox& box = system.controls();

      for (std::size_t flat = begin; flat < end; ++flat) {
        const double vc = old_values[flat];
        double dissipation = 0.0;
        for (int i = 0; i < d; ++i) {
          const int k = ws.idx[static_cast<std::size_t>(i)];
          const std::size_t s = strides[static_cast<std::size_t>(i)];
          const double inv = inv_spacing[static_cast<std::size_t>(i)];
          // slope-extrapolating ghost at the domain edge: both one-sided
          // differences collapse to the interior one there
          double dm, dp;
          if (k == 0) {
            dp = (old_values[flat + s] - vc) * inv;
            dm = dp;
          } else if (k == counts[static_cast<std::size_t>(i)] - 1) {
            dm = (vc - old_values[flat - s]) * inv;
            dp = dm;
          } else {
            dm = (vc - old_values[flat - s]) * inv;
            dp = (old_values[flat + s] - vc) * inv;
          }
          ws.pbar[i] = 0.5 * (dm + dp);
          // smoothing orientation: the update marches V += dt * H, so the
          // jump term must add curvature for the scheme to stay monotone
          dissipation += 0.5 * alpha[i] * (dp - dm);
        }

        system.drift(ws.x, ws.a);
        system.input_matrix(ws.x, ws.b);
        double ham = ws.pbar.dot(ws.a);
        for (int j = 0; j < system.control_dim(); ++j) {
          double pb = 0.0;
          for (int i = 0; i < d; ++i) pb += ws.pbar[i] * ws.b(i, j);
          ham += std::max(pb * box.lower[j], pb * box.upper[j]);
        }

        const double candidate = vc + dt * (ham + dissipation);
        const double next = std::min(l_values[flat], candidate);
        if (!std::isfinite(next)) saw_nan.store(true);
        new_values[flat] = next;
        local_res = std::max(local_res, std::abs(next - vc));

        for (int i = d - 1; i >= 0; --i) {
          int& k = ws.idx[static_cast<std::size_t>(i)];
          if (++k < counts[static_cast<std::size_t>(i)]) {
            ws.x[i] = field.axis(i).coord(k);
            break;
          }
          k = 0;
          ws.x[i] = field.axis(i).coord(0);
        }
      }
      worker_residual[static_cast<std::size_t>(slot)] = local_res;
    });

    if (saw_nan.load()) throw std::runtime_error("solve_converged: sweep produced a non-finite value");

    double max_change = 0.0;
    for (double r : worker_residual) max_change = std::max(max_change, r);
    old_values.swap(new_values);

    report.steps = step;
    report.residual = max_change / dt;
    if (config.observer) config.observer(step, report.residual, old_values);
    if (max_change < config.convergence_tol * dt) {
      report.converged = true;
      break;
    }
  }
  if (report.residual < stop_residual) report.converged = true;

  field.set_values(std::move(old_values));
  field.compute_node_gradients(workers);

  ValueFunction vf;
  vf.field = std::move(field);
  vf.system_name = system.name();
  vf.solve_config = config;
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  vf.report = report;
  return vf;
}

bool safe_set_membership(const ValueFunction& v, const Eigen::VectorXd& x, double eps) {
  return v.value(x) >= eps;
}

Trajectory safe_policy_rollout(const ControlAffineSystem& system, const ValueFunction& v,
                               const Eigen::VectorXd& x0, double duration, double dt) {
  if (!(dt > 0.0) || !(duration > 0.0)) throw std::invalid_argument("safe_policy_rollout: need positive duration and dt");
  Trajectory traj;
  const int n_steps = static_cast<int>(std::llround(duration / dt));
  Eigen::VectorXd x = system.wrap_state(x0);
  Eigen::VectorXd grad(system.state_dim());
  traj.states.push_back(x);
  traj.times.push_back(0.0);
  traj.min_constraint = system.constraint(x);
  for (int k = 0; k < n_steps; ++k) {
    v.gradient(x, grad);
    const Eigen::VectorXd u = optimal_safe_control(system, x, grad);
    x = system.wrap_state(system.step(x, u, dt));
    traj.controls.push_back(u);
    traj.states.push_back(x);
    traj.times.push_back(dt * static_cast<double>(k + 1));
    traj.min_constraint = std::min(traj.min_constraint, system.constraint(x));
  }
  return traj;
}

namespace {

struct BruteForceContext {
  const ControlAffineSystem* system;
  double segment_duration;
  double substep;
  int n_segments;
  std::vector<Eigen::VectorXd> levels;  // all control grid points, size levels_per_axis^n_u
  double best;
};

/// min of l along one ZOH segment from x (excluding the entry state, which
/// the caller has already counted).
double rollout_segment(const BruteForceContext& ctx, Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  double min_l = std::numeric_limits<double>::infinity();
  double remaining = ctx.segment_duration;
  while (remaining > 1e-12) {
    const double dt = std::min(ctx.substep, remaining);
    x = ctx.system->step(x, u, dt);
    min_l = std::min(min_l, ctx.system->constraint(x));
    remaining -= dt;
  }
  return min_l;
}

void enumerate_segments(BruteForceContext& ctx, const Eigen::VectorXd& x, double min_so_far, int depth) {
  if (depth == ctx.n_segments) {
    ctx.best = std::max(ctx.best, min_so_far);
    return;
  }
  // bound: the running minimum can only decrease, so prune dominated prefixes
  if (min_so_far <= ctx.best) return;
  for (const auto& u : ctx.levels) {
    Eigen::VectorXd xs = x;
    const double seg_min = rollout_segment(ctx, xs, u);
    enumerate_segments(ctx, xs, std::min(min_so_far, seg_min), depth + 1);
  }
}

}  // namespace

double brute_force_value(const ControlAffineSystem& system, const Eigen::VectorXd& x, double horizon,
                         int n_segments, int controls_per_axis) {
  if (n_segments < 1 || controls_per_axis < 2)
    throw std::invalid_argument("brute_force_value: need >= 1 segment and >= 2 control levels");
  const int n_u = system.control_dim();
  double log_sequences = static_cast<double>(n_u) * static_cast<double>(n_segments) *
                         std::log(static_cast<double>(controls_per_axis));
  if (log_sequences > std::log(1e7))
    throw std::runtime_error("brute_force_value: enumeration budget exceeded (more than 1e7 sequences)");

  BruteForceContext ctx;
  ctx.system = &system;
  ctx.n_segments = n_segments;
  ctx.segment_duration = horizon / static_cast<double>(n_segments);
  ctx.substep = std::min(0.02, ctx.segment_duration);
  ctx.best = -std::numeric_limits<double>::infinity();

  // control grid: tensor product of per-axis levels, extremes included
  const ControlBox& box = system.controls();
  std::vector<std::vector<double>> axis_levels(static_cast<std::size_t>(n_u));
  for (int j = 0; j < n_u; ++j) {
    for (int k = 0; k < controls_per_axis; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(controls_per_axis - 1);
      axis_levels[static_cast<std::size_t>(j)].push_back(box.lower[j] + t * (box.upper[j] - box.lower[j]));
    }
  }
  std::vector<int> digit(static_cast<std::size_t>(n_u), 0);
  const std::size_t n_points = static_cast<std::size_t>(std::pow(controls_per_axis, n_u));
  for (std::size_t p = 0; p < n_points; ++p) {
    Eigen::VectorXd u(n_u);
    for (int j = 0; j < n_u; ++j) u[j] = axis_levels[static_cast<std::size_t>(j)][static_cast<std::size_t>(digit[static_cast<std::size_t>(j)])];
    ctx.levels.push_back(u);
    for (int j = n_u - 1; j >= 0; --j) {
      int& dd = digit[static_cast<std::size_t>(j)];
      if (++dd < controls_per_axis) break;
      dd = 0;
    }
  }

  const double initial = system.constraint(x);
  enumerate_segments(ctx, x, initial, 0);
  return ctx.best;
}

}  // namespace safety_horizon

#include "safety_horizon/models.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace safety_horizon;

namespace {

std::unique_ptr<ControlAffineSystem> load(const std::string& name) {
  return load_system(oracles::config_path(name));
}

Eigen::VectorXd vec(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("dynamics of the analytic systems") {
  const auto integ = load("integrator1d");
  CHECK(integ->dynamics(vec({0.3}), vec({-1.0}))[0] == doctest::Approx(-1.0));

  const auto di = load("double_integrator1d");
  const Eigen::VectorXd xdot = di->dynamics(vec({1.0, 2.0}), vec({0.5}));
  CHECK(xdot[0] == doctest::Approx(2.0));
  CHECK(xdot[1] == doctest::Approx(0.5));
}

TEST_CASE("dimension mismatches are contract violations") {
  const auto di = load("double_integrator1d");
  CHECK_THROWS_AS(di->dynamics(vec({1.0}), vec({0.5})), std::invalid_argument);
  CHECK_THROWS_AS(di->dynamics(vec({1.0, 2.0}), vec({0.5, 0.1})), std::invalid_argument);
  CHECK_THROWS_AS(di->constraint(vec({1.0, 2.0, 3.0})), std::invalid_argument);
}

TEST_CASE("arm accelerations match the numerical Lagrangian oracle") {
  const auto arm = load("two_link_arm");
  const oracles::TwoLinkLagrangianOracle oracle(arm->config());

  // gravity-only case at rest
  {
    const Eigen::VectorXd x = vec({0.0, 0.0, 0.0, 0.0});
    const Eigen::VectorXd qdd = arm->dynamics(x, vec({0.0, 0.0})).tail(2);
    const Eigen::Vector2d expect = oracle.acceleration({0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0});
    CHECK(qdd[0] == doctest::Approx(expect[0]).epsilon(1e-5));
    CHECK(qdd[1] == doctest::Approx(expect[1]).epsilon(1e-5));
  }

  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector2d q(oracles::uniform(rng, -1.5, 2.0), oracles::uniform(rng, -2.5, 0.2));
    const Eigen::Vector2d dq(oracles::uniform(rng, -2.0, 2.0), oracles::uniform(rng, -2.0, 2.0));
    const Eigen::Vector2d tau(oracles::uniform(rng, -30.0, 30.0), oracles::uniform(rng, -15.0, 15.0));
    Eigen::VectorXd x(4);
    x << q, dq;
    Eigen::VectorXd u(2);
    u << tau;
    const Eigen::VectorXd qdd = arm->dynamics(x, u).tail(2);
    const Eigen::Vector2d expect = oracle.acceleration(q, dq, tau);
    CHECK(std::abs(qdd[0] - expect[0]) / std::max(1.0, std::abs(expect[0])) < 1e-4);
    CHECK(std::abs(qdd[1] - expect[1]) / std::max(1.0, std::abs(expect[1])) < 1e-4);
  }
}

TEST_CASE("rk4 step is exact on the analytic systems") {
  const auto integ = load("integrator1d");
  CHECK(integ->step(vec({0.0}), vec({1.0}), 0.04)[0] == doctest::Approx(0.04).epsilon(1e-14));

  const auto di = load("double_integrator1d");
  const Eigen::VectorXd next = di->step(vec({0.0, 0.0}), vec({1.0}), 0.1);
  CHECK(next[0] == doctest::Approx(0.005).epsilon(1e-14));
  CHECK(next[1] == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("arm rk4 step matches a fine-substep reference") {
  const auto arm = load("two_link_arm");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd x(4);
    x << oracles::uniform(rng, -1.0, 1.5), oracles::uniform(rng, -2.0, 0.0), oracles::uniform(rng, -1.0, 1.0),
        oracles::uniform(rng, -1.0, 1.0);
    Eigen::VectorXd u(2);
    u << oracles::uniform(rng, -20.0, 20.0), oracles::uniform(rng, -10.0, 10.0);

    const Eigen::VectorXd coarse = arm->step(x, u, 0.01);
    Eigen::VectorXd fine = x;
    for (int k = 0; k < 10; ++k) fine = arm->step(fine, u, 0.001);
    CHECK((coarse - fine).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("rk4 order: halving dt cuts the one-step error by at least 8x") {
  const auto arm = load("two_link_arm");
  Eigen::VectorXd x(4);
  x << 0.8, -1.2, 0.5, -0.3;
  Eigen::VectorXd u(2);
  u << 5.0, -2.0;

  auto reference = [&](double dt) {
    Eigen::VectorXd r = x;
    const int n = 100;
    for (int k = 0; k < n; ++k) r = arm->step(r, u, dt / n);
    return r;
  };
  const double dt = 0.08;
  const double err_full = (arm->step(x, u, dt) - reference(dt)).norm();
  const Eigen::VectorXd two_half = arm->step(arm->step(x, u, dt / 2), u, dt / 2);
  const double err_half = (two_half - reference(dt)).norm();
  CHECK(err_full / std::max(err_half, 1e-300) >= 8.0);
}

TEST_CASE("constraint margins") {
  const auto pm = load("point_mass2d");
  CHECK(pm->constraint(vec({0.5, 0.0, 0.0, 0.0})) == doctest::Approx(0.25));
  CHECK(pm->constraint(vec({0.25, 0.0, 1.0, -1.0})) == doctest::Approx(0.0));

  const auto arm = load("two_link_arm");
  const Eigen::Vector2d fk = two_link_fk(1.0, 1.0, {0.0, 0.0});
  CHECK(fk[0] == doctest::Approx(2.0));
  CHECK(fk[1] == doctest::Approx(0.0));
  const auto& obs = *arm->config().obstacle;
  const double expect = (fk - obs.center).norm() - obs.radius;
  CHECK(arm->constraint(vec({0.0, 0.0, 0.0, 0.0})) == doctest::Approx(expect));
}

TEST_CASE("control box residuals") {
  const auto pm = load("point_mass2d");
  const auto& box = pm->controls();
  const Eigen::VectorXd mid = box.midpoint();
  const Eigen::VectorXd r_mid = pm->control_constraint(mid);
  for (int i = 0; i < r_mid.size(); ++i) {
    CHECK(r_mid[i] == doctest::Approx(0.5 * (box.upper[i % 2] - box.lower[i % 2])));
  }

  const Eigen::VectorXd r_up = pm->control_constraint(box.upper);
  CHECK(r_up.tail(2).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(pm->active_control_count(box.upper) == 2);

  Eigen::VectorXd over = box.upper;
  over[0] += 0.1;
  const Eigen::VectorXd r_over = pm->control_constraint(over);
  CHECK(r_over[2] == doctest::Approx(-0.1));
  CHECK(pm->active_control_count(mid) == 0);
}

TEST_CASE("forward kinematics reference points") {
  const double pi = std::acos(-1.0);
  CHECK((two_link_fk(1.0, 1.0, {0.0, 0.0}) - Eigen::Vector2d(2.0, 0.0)).norm() < 1e-12);
  CHECK((two_link_fk(1.0, 1.0, {pi / 2, 0.0}) - Eigen::Vector2d(0.0, 2.0)).norm() < 1e-12);
  CHECK((two_link_fk(1.0, 1.0, {pi / 2, -pi / 2}) - Eigen::Vector2d(1.0, 1.0)).norm() < 1e-12);
}

TEST_CASE("costs vanish at the goal and reduce to the distance term") {
  const auto pm = load("point_mass2d");
  Eigen::VectorXd at_goal(4);
  at_goal << pm->config().goal[0], pm->config().goal[1], 0.0, 0.0;
  CHECK(pm->running_cost(at_goal, vec({0.0, 0.0})) == doctest::Approx(0.0));

  Eigen::VectorXd off(4);
  off << pm->config().goal[0] - 0.5, pm->config().goal[1], 0.0, 0.0;
  CHECK(pm->running_cost(off, vec({0.0, 0.0})) == doctest::Approx(0.5));

  // FK(0,0) = (2,0): zero cost when the goal sits there
  SystemConfig cfg = load_system_config(oracles::config_path("two_link_arm"));
  cfg.goal = vec({2.0, 0.0});
  const auto arm = make_system(cfg);
  CHECK(arm->terminal_cost(vec({0.0, 0.0, 0.0, 0.0})) == doctest::Approx(0.0));
}

TEST_CASE("discrete jacobians of the analytic systems are exact") {
  const auto integ = load("integrator1d");
  Eigen::MatrixXd A, B;
  integ->step_jacobians(vec({0.2}), vec({0.3}), 0.04, A, B);
  CHECK(A(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(B(0, 0) == doctest::Approx(0.04).epsilon(1e-9));

  const auto di = load("double_integrator1d");
  di->step_jacobians(vec({0.5, -0.2}), vec({0.1}), 0.1, A, B);
  CHECK(A(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(A(0, 1) == doctest::Approx(0.1).epsilon(1e-8));
  CHECK(A(1, 0) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(A(1, 1) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(B(0, 0) == doctest::Approx(0.005).epsilon(1e-5));
  CHECK(B(1, 0) == doctest::Approx(0.1).epsilon(1e-8));
}

TEST_CASE("arm jacobians agree with directional differences of step") {
  const auto arm = load("two_link_arm");
  std::mt19937_64 rng(31);
  const double dt = 0.04;
  Eigen::VectorXd x(4);
  x << 0.6, -1.0, 0.4, -0.2;
  Eigen::VectorXd u(2);
  u << 8.0, -3.0;
  Eigen::MatrixXd A, B;
  arm->step_jacobians(x, u, dt, A, B);

  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd dx =
        oracles::uniform_vector(rng, Eigen::VectorXd::Constant(4, -1.0), Eigen::VectorXd::Constant(4, 1.0));
    Eigen::VectorXd du =
        oracles::uniform_vector(rng, Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0));
    dx.normalize();
    du.normalize();
    const double h = 1e-5;
    const Eigen::VectorXd dir =
        (arm->step(x + h * dx, u + h * du, dt) - arm->step(x - h * dx, u - h * du, dt)) / (2.0 * h);
    const Eigen::VectorXd model = A * dx + B * du;
    CHECK((dir - model).norm() / std::max(1.0, dir.norm()) < 1e-4);
  }
}

TEST_CASE("dynamics are affine in the control") {
  std::mt19937_64 rng(41);
  for (const char* name : {"point_mass2d", "dubins_car", "two_link_arm"}) {
    const auto sys = load(name);
    const auto& box = sys->controls();
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd x(sys->state_dim());
      for (int i = 0; i < x.size(); ++i) {
        const auto& axis = sys->config().grid[static_cast<std::size_t>(i)];
        x[i] = oracles::uniform(rng, axis.min, axis.max);
      }
      const Eigen::VectorXd u1 = oracles::uniform_vector(rng, box.lower, box.upper);
      const Eigen::VectorXd u2 = oracles::uniform_vector(rng, box.lower, box.upper);
      const double lam = oracles::uniform(rng, 0.0, 1.0);
      const Eigen::VectorXd mix = sys->dynamics(x, lam * u1 + (1.0 - lam) * u2);
      const Eigen::VectorXd expect = lam * sys->dynamics(x, u1) + (1.0 - lam) * sys->dynamics(x, u2);
      CHECK((mix - expect).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("constraint margin is 1-Lipschitz in the measured position") {
  std::mt19937_64 rng(43);
  const auto pm = load("point_mass2d");
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd a(4), b(4);
    for (int i = 0; i < 4; ++i) {
      a[i] = oracles::uniform(rng, -1.5, 1.5);
      b[i] = oracles::uniform(rng, -1.5, 1.5);
    }
    const double gap = std::abs(pm->constraint(a) - pm->constraint(b));
    CHECK(gap <= (a.head<2>() - b.head<2>()).norm() + 1e-12);
  }

  const auto arm = load("two_link_arm");
  const double l1 = arm->config().link1, l2 = arm->config().link2;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd a(4), b(4);
    a << oracles::uniform(rng, -1.8, 2.2), oracles::uniform(rng, -2.8, 0.3), 0.0, 0.0;
    b << oracles::uniform(rng, -1.8, 2.2), oracles::uniform(rng, -2.8, 0.3), 0.0, 0.0;
    const double gap = std::abs(arm->constraint(a) - arm->constraint(b));
    const double fk_dist = (two_link_fk(l1, l2, a.head<2>()) - two_link_fk(l1, l2, b.head<2>())).norm();
    CHECK(gap <= fk_dist + 1e-12);
  }
}

TEST_CASE("config loading round-trips and validates") {
  const SystemConfig cfg = load_system_config(oracles::config_path("point_mass2d"));
  CHECK(cfg.system == "point_mass2d");
  CHECK(cfg.grid.size() == 4);
  CHECK(cfg.obstacle.has_value());
  CHECK(cfg.obstacle->radius == doctest::Approx(0.25));

  const SystemConfig reparsed = parse_system_config(cfg.dump_json());
  CHECK(reparsed.system == cfg.system);
  CHECK(reparsed.grid.size() == cfg.grid.size());
  CHECK(reparsed.a_max == doctest::Approx(cfg.a_max));

  SystemConfig bad = cfg;
  bad.system = "no_such_system";
  CHECK_THROWS_AS(make_system(bad), std::invalid_argument);

  const BenchmarkSuite suite = BenchmarkSuite::load(oracles::config_dir());
  CHECK(suite.systems.size() == 5);
  for (const auto& sys : suite.systems) {
    CHECK(static_cast<int>(sys->config().grid.size()) == sys->state_dim());
  }
}

TEST_CASE("hold control compensates gravity on the arm") {
  const auto arm = load("two_link_arm");
  Eigen::VectorXd x(4);
  x << 0.7, -0.9, 0.0, 0.0;
  const Eigen::VectorXd hold = arm->hold_control(x);
  const Eigen::VectorXd xdot = arm->dynamics(x, hold);
  CHECK(xdot.cwiseAbs().maxCoeff() < 1e-9);

  const auto pm = load("point_mass2d");
  CHECK(pm->hold_control(vec({0.5, 0.5, 0.0, 0.0})).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("dubins heading wraps into the principal interval") {
  const auto car = load("dubins_car");
  const double pi = std::acos(-1.0);
  Eigen::VectorXd x(3);
  x << 0.2, 0.1, pi + 0.3;
  const Eigen::VectorXd w = car->wrap_state(x);
  CHECK(w[2] == doctest::Approx(-pi + 0.3));
  CHECK(w.head<2>() == x.head<2>());
}

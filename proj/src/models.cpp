#include "safety_horizon/models.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>

namespace safety_horizon {

using nlohmann::json;

void ControlBox::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw std::invalid_argument("ControlBox: bound dimension mismatch");
  for (int i = 0; i < dim(); ++i) {
    if (!(lower[i] < upper[i])) throw std::invalid_argument("ControlBox: lower must be strictly below upper");
  }
}

namespace {

Eigen::VectorXd to_vector(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
  return v;
}

json from_vector(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

SystemConfig parse_system_config(const std::string& json_text) {
  json j = json::parse(json_text);
  SystemConfig cfg;
  cfg.system = j.at("system").get<std::string>();
  for (const auto& a : j.at("grid").at("axes")) {
    AxisSpec axis{a.at("min").get<double>(), a.at("max").get<double>(), a.at("n").get<int>()};
    axis.validate();
    cfg.grid.push_back(axis);
  }
  if (j.contains("obstacle") && !j["obstacle"].is_null()) {
    Obstacle obs;
    const auto& c = j["obstacle"].at("center");
    obs.center = Eigen::Vector2d(c.at(0).get<double>(), c.at(1).get<double>());
    obs.radius = j["obstacle"].at("radius").get<double>();
    if (obs.radius <= 0.0) throw std::invalid_argument("SystemConfig: obstacle radius must be positive");
    cfg.obstacle = obs;
  }
  cfg.goal = to_vector(j.at("goal"));
  const json params = j.value("params", json::object());
  auto get = [&params](const char* key, double fallback) { return params.value(key, fallback); };
  cfg.u_max = get("u_max", cfg.u_max);
  cfg.a_max = get("a_max", cfg.a_max);
  cfg.speed = get("speed", cfg.speed);
  cfg.omega_max = get("omega_max", cfg.omega_max);
  cfg.w_u = get("w_u", cfg.w_u);
  cfg.w_v = get("w_v", cfg.w_v);
  cfg.link1 = get("L1", cfg.link1);
  cfg.link2 = get("L2", cfg.link2);
  cfg.mass1 = get("m1", cfg.mass1);
  cfg.mass2 = get("m2", cfg.mass2);
  cfg.payload = get("payload", cfg.payload);
  cfg.gravity = get("gravity", cfg.gravity);
  if (params.contains("tau_max")) cfg.tau_max = to_vector(params["tau_max"]);
  return cfg;
}

SystemConfig load_system_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open system config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_system_config(ss.str());
}

std::string SystemConfig::dump_json() const {
  json j;
  j["system"] = system;
  json axes = json::array();
  for (const auto& a : grid) axes.push_back({{"min", a.min}, {"max", a.max}, {"n", a.n}});
  j["grid"] = {{"axes", axes}};
  if (obstacle) {
    j["obstacle"] = {{"center", {obstacle->center.x(), obstacle->center.y()}}, {"radius", obstacle->radius}};
  }
  j["goal"] = from_vector(goal);
  json params;
  params["u_max"] = u_max;
  params["a_max"] = a_max;
  params["speed"] = speed;
  params["omega_max"] = omega_max;
  params["w_u"] = w_u;
  params["w_v"] = w_v;
  params["L1"] = link1;
  params["L2"] = link2;
  params["m1"] = mass1;
  params["m2"] = mass2;
  params["payload"] = payload;
  params["gravity"] = gravity;
  if (tau_max.size() > 0) params["tau_max"] = from_vector(tau_max);
  j["params"] = params;
  return j.dump();
}

ControlAffineSystem::ControlAffineSystem(SystemConfig config, int n_x, int n_u, ControlBox controls,
                                         Eigen::VectorXd state_weights)
    : config_(std::move(config)), n_x_(n_x), n_u_(n_u), controls_(std::move(controls)),
      state_weights_(std::move(state_weights)) {
  controls_.validate();
  if (controls_.dim() != n_u_) throw std::invalid_argument(config_.system + ": control box dimension mismatch");
  if (static_cast<int>(config_.grid.size()) != n_x_)
    throw std::invalid_argument(config_.system + ": grid dimension must match the state dimension");
  if (state_weights_.size() != n_x_) throw std::invalid_argument(config_.system + ": state weight dimension mismatch");
}

void ControlAffineSystem::check_state(const Eigen::VectorXd& x) const {
  if (x.size() != n_x_) throw std::invalid_argument(config_.system + ": state dimension mismatch");
}

void ControlAffineSystem::check_control(const Eigen::VectorXd& u) const {
  if (u.size() != n_u_) throw std::invalid_argument(config_.system + ": control dimension mismatch");
}

Eigen::VectorXd ControlAffineSystem::hold_control(const Eigen::VectorXd& x) const {
  check_state(x);
  return controls_.clip(Eigen::VectorXd::Zero(n_u_));
}

Eigen::VectorXd ControlAffineSystem::dynamics(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  check_state(x);
  check_control(u);
  Eigen::VectorXd a(n_x_);
  Eigen::MatrixXd B(n_x_, n_u_);
  drift(x, a);
  input_matrix(x, B);
  return a + B * u;
}

Eigen::VectorXd ControlAffineSystem::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt) const {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const Eigen::VectorXd k1 = dynamics(x, u);
  const Eigen::VectorXd k2 = dynamics(x + 0.5 * dt * k1, u);
  const Eigen::VectorXd k3 = dynamics(x + 0.5 * dt * k2, u);
  const Eigen::VectorXd k4 = dynamics(x + dt * k3, u);
  Eigen::VectorXd next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw std::runtime_error(config_.system + ": integration produced a non-finite state");
  return next;
}

Eigen::VectorXd ControlAffineSystem::control_constraint(const Eigen::VectorXd& u) const {
  check_control(u);
  Eigen::VectorXd r(2 * n_u_);
  r.head(n_u_) = u - controls_.lower;
  r.tail(n_u_) = controls_.upper - u;
  return r;
}

int ControlAffineSystem::active_control_count(const Eigen::VectorXd& u, double tol) const {
  const Eigen::VectorXd r = control_constraint(u);
  int count = 0;
  for (int i = 0; i < r.size(); ++i) {
    if (r[i] <= tol) ++count;
  }
  return count;
}

double ControlAffineSystem::running_cost(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  check_control(u);
  return terminal_cost(x) + config_.w_u * u.squaredNorm();
}

double ControlAffineSystem::terminal_cost(const Eigen::VectorXd& x) const {
  check_state(x);
  return goal_distance(x) + state_weights_.dot(x.cwiseProduct(x));
}

namespace {
constexpr double kFdStep = 1e-6;
}

void ControlAffineSystem::step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
                                         Eigen::MatrixXd& A, Eigen::MatrixXd& B) const {
  A.resize(n_x_, n_x_);
  B.resize(n_x_, n_u_);
  Eigen::VectorXd xp = x, xm = x;
  for (int j = 0; j < n_x_; ++j) {
    xp[j] += kFdStep;
    xm[j] -= kFdStep;
    A.col(j) = (step(xp, u, dt) - step(xm, u, dt)) / (2.0 * kFdStep);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  Eigen::VectorXd up = u, um = u;
  for (int j = 0; j < n_u_; ++j) {
    up[j] += kFdStep;
    um[j] -= kFdStep;
    B.col(j) = (step(x, up, dt) - step(x, um, dt)) / (2.0 * kFdStep);
    up[j] = u[j];
    um[j] = u[j];
  }
}

Eigen::VectorXd ControlAffineSystem::constraint_gradient(const Eigen::VectorXd& x) const {
  check_state(x);
  Eigen::VectorXd g(n_x_);
  Eigen::VectorXd xp = x, xm = x;
  for (int j = 0; j < n_x_; ++j) {
    xp[j] += kFdStep;
    xm[j] -= kFdStep;
    g[j] = (constraint(xp) - constraint(xm)) / (2.0 * kFdStep);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

void ControlAffineSystem::running_cost_gradients(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                                 Eigen::VectorXd& gx, Eigen::VectorXd& gu) const {
  gx.resize(n_x_);
  gu.resize(n_u_);
  Eigen::VectorXd xp = x, xm = x;
  for (int j = 0; j < n_x_; ++j) {
    xp[j] += kFdStep;
    xm[j] -= kFdStep;
    gx[j] = (running_cost(xp, u) - running_cost(xm, u)) / (2.0 * kFdStep);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  Eigen::VectorXd up = u, um = u;
  for (int j = 0; j < n_u_; ++j) {
    up[j] += kFdStep;
    um[j] -= kFdStep;
    gu[j] = (running_cost(x, up) - running_cost(x, um)) / (2.0 * kFdStep);
    up[j] = u[j];
    um[j] = u[j];
  }
}

Eigen::VectorXd ControlAffineSystem::terminal_cost_gradient(const Eigen::VectorXd& x) const {
  Eigen::VectorXd g(n_x_);
  Eigen::VectorXd xp = x, xm = x;
  for (int j = 0; j < n_x_; ++j) {
    xp[j] += kFdStep;
    xm[j] -= kFdStep;
    g[j] = (terminal_cost(xp) - terminal_cost(xm)) / (2.0 * kFdStep);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

Eigen::Vector2d two_link_fk(double l1, double l2, const Eigen::Vector2d& q) {
  const double c1 = std::cos(q[0]), s1 = std::sin(q[0]);
  const double c12 = std::cos(q[0] + q[1]), s12 = std::sin(q[0] + q[1]);
  return {l1 * c1 + l2 * c12, l1 * s1 + l2 * s12};
}

namespace {

ControlBox symmetric_box(int n, double bound) {
  ControlBox box;
  box.lower = Eigen::VectorXd::Constant(n, -bound);
  box.upper = Eigen::VectorXd::Constant(n, bound);
  return box;
}

double obstacle_margin(const Obstacle& obs, const Eigen::Vector2d& p) {
  return (p - obs.center).norm() - obs.radius;
}

class Integrator1D final : public ControlAffineSystem {
public:
  explicit Integrator1D(SystemConfig cfg)
      : ControlAffineSystem(cfg, 1, 1, symmetric_box(1, cfg.u_max), Eigen::VectorXd::Zero(1)) {}

  void drift(const Eigen::VectorXd& x, Eigen::VectorXd& out) const override {
    check_state(x);
    out.setZero(1);
  }
  void input_matrix(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const override {
    check_state(x);
    out.setOnes(1, 1);
  }
  double constraint(const Eigen::VectorXd& x) const override {
    check_state(x);
    return 1.0 - std::abs(x[0]);
  }
  double goal_distance(const Eigen::VectorXd& x) const override {
    check_state(x);
    return std::abs(x[0] - config_.goal[0]);
  }
  void goal_residual(const Eigen::VectorXd& x, Eigen::VectorXd& e, Eigen::MatrixXd* jac) const override {
    check_state(x);
    e.resize(1);
    e[0] = x[0] - config_.goal[0];
    if (jac) jac->setOnes(1, 1);
  }
};

class DoubleIntegrator1D final : public ControlAffineSystem {
public:
  explicit DoubleIntegrator1D(SystemConfig cfg)
      : ControlAffineSystem(cfg, 2, 1, symmetric_box(1, cfg.u_max),
                            (Eigen::VectorXd(2) << 0.0, cfg.w_v).finished()) {}

  void drift(const Eigen::VectorXd& x, Eigen::VectorXd& out) const override {
    check_state(x);
    out.resize(2);
    out[0] = x[1];
    out[1] = 0.0;
  }
  void input_matrix(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const override {
    check_state(x);
    out.setZero(2, 1);
    out(1, 0) = 1.0;
  }
  double constraint(const Eigen::VectorXd& x) const override {
    check_state(x);
    return x[0];
  }
  double goal_distance(const Eigen::VectorXd& x) const override {
    check_state(x);
    return std::abs(x[0] - config_.goal[0]);
  }
  void goal_residual(const Eigen::VectorXd& x, Eigen::VectorXd& e, Eigen::MatrixXd* jac) const override {
    check_state(x);
    e.resize(1);
    e[0] = x[0] - config_.goal[0];
    if (jac) {
      jac->setZero(1, 2);
      (*jac)(0, 0) = 1.0;
    }
  }
};

class PointMass2D final : public ControlAffineSystem {
public:
  explicit PointMass2D(SystemConfig cfg)
      : ControlAffineSystem(cfg, 4, 2, symmetric_box(2, cfg.a_max),
                            (Eigen::VectorXd(4) << 0.0, 0.0, cfg.w_v, cfg.w_v).finished()) {
    if (!config_.obstacle) throw std::invalid_argument("point_mass2d: config requires an obstacle");
    if (config_.goal.size() != 2) throw std::invalid_argument("point_mass2d: goal must be 2D");
  }

  void drift(const Eigen::VectorXd& x, Eigen::VectorXd& out) const override {
    check_state(x);
    out.resize(4);
    out[0] = x[2];
    out[1] = x[3];
    out[2] = 0.0;
    out[3] = 0.0;
  }
  void input_matrix(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const override {
    check_state(x);
    out.setZero(4, 2);
    out(2, 0) = 1.0;
    out(3, 1) = 1.0;
  }
  double constraint(const Eigen::VectorXd& x) const override {
    check_state(x);
    return obstacle_margin(*config_.obstacle, x.head<2>());
  }
  double goal_distance(const Eigen::VectorXd& x) const override {
    check_state(x);
    return (x.head<2>() - config_.goal.head<2>()).norm();
  }
  void goal_residual(const Eigen::VectorXd& x, Eigen::VectorXd& e, Eigen::MatrixXd* jac) const override {
    check_state(x);
    e = x.head<2>() - config_.goal.head<2>();
    if (jac) {
      jac->setZero(2, 4);
      (*jac)(0, 0) = 1.0;
      (*jac)(1, 1) = 1.0;
    }
  }
};

class DubinsCar final : public ControlAffineSystem {
public:
  explicit DubinsCar(SystemConfig cfg)
      : ControlAffineSystem(cfg, 3, 1, symmetric_box(1, cfg.omega_max), Eigen::VectorXd::Zero(3)) {
    if (!config_.obstacle) throw std::invalid_argument("dubins_car: config requires an obstacle");
    if (config_.goal.size() != 2) throw std::invalid_argument("dubins_car: goal must be 2D");
  }

  void drift(const Eigen::VectorXd& x, Eigen::VectorXd& out) const override {
    check_state(x);
    out.resize(3);
    out[0] = config_.speed * std::cos(x[2]);
    out[1] = config_.speed * std::sin(x[2]);
    out[2] = 0.0;
  }
  void input_matrix(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const override {
    check_state(x);
    out.setZero(3, 1);
    out(2, 0) = 1.0;
  }
  double constraint(const Eigen::VectorXd& x) const override {
    check_state(x);
    return obstacle_margin(*config_.obstacle, x.head<2>());
  }
  double goal_distance(const Eigen::VectorXd& x) const override {
    check_state(x);
    return (x.head<2>() - config_.goal.head<2>()).norm();
  }
  void goal_residual(const Eigen::VectorXd& x, Eigen::VectorXd& e, Eigen::MatrixXd* jac) const override {
    check_state(x);
    e = x.head<2>() - config_.goal.head<2>();
    if (jac) {
      jac->setZero(2, 3);
      (*jac)(0, 0) = 1.0;
      (*jac)(1, 1) = 1.0;
    }
  }
  Eigen::VectorXd wrap_state(const Eigen::VectorXd& x) const override {
    check_state(x);
    Eigen::VectorXd w = x;
    w[2] = std::atan2(std::sin(x[2]), std::cos(x[2]));
    return w;
  }
};

class TwoLinkArm final : public ControlAffineSystem {
public:
  explicit TwoLinkArm(SystemConfig cfg)
      : ControlAffineSystem(cfg, 4, 2, make_box(cfg),
                            (Eigen::VectorXd(4) << 0.0, 0.0, cfg.w_v, cfg.w_v).finished()) {
    if (!config_.obstacle) throw std::invalid_argument("two_link_arm: config requires an obstacle");
    if (config_.goal.size() != 2) throw std::invalid_argument("two_link_arm: goal must be 2D");
  }

  void drift(const Eigen::VectorXd& x, Eigen::VectorXd& out) const override {
    check_state(x);
    Eigen::Matrix2d inv;
    Eigen::Vector2d bias;
    dynamics_terms(x, inv, bias);
    out.resize(4);
    out.head<2>() = x.tail<2>();
    out.tail<2>() = -(inv * bias);
  }
  void input_matrix(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const override {
    check_state(x);
    Eigen::Matrix2d inv;
    Eigen::Vector2d bias;
    dynamics_terms(x, inv, bias);
    out.setZero(4, 2);
    out.bottomRows<2>() = inv;
  }
  double constraint(const Eigen::VectorXd& x) const override {
    check_state(x);
    return obstacle_margin(*config_.obstacle, two_link_fk(config_.link1, config_.link2, x.head<2>()));
  }
  double goal_distance(const Eigen::VectorXd& x) const override {
    check_state(x);
    return (two_link_fk(config_.link1, config_.link2, x.head<2>()) - Eigen::Vector2d(config_.goal.head<2>())).norm();
  }
  void goal_residual(const Eigen::VectorXd& x, Eigen::VectorXd& e, Eigen::MatrixXd* jac) const override {
    check_state(x);
    e = two_link_fk(config_.link1, config_.link2, x.head<2>()) - Eigen::Vector2d(config_.goal.head<2>());
    if (jac) {
      const double l1 = config_.link1, l2 = config_.link2;
      const double s1 = std::sin(x[0]), c1 = std::cos(x[0]);
      const double s12 = std::sin(x[0] + x[1]), c12 = std::cos(x[0] + x[1]);
      jac->setZero(2, 4);
      (*jac)(0, 0) = -l1 * s1 - l2 * s12;
      (*jac)(0, 1) = -l2 * s12;
      (*jac)(1, 0) = l1 * c1 + l2 * c12;
      (*jac)(1, 1) = l2 * c12;
    }
  }
  Eigen::VectorXd hold_control(const Eigen::VectorXd& x) const override {
    check_state(x);
    return controls_.clip(gravity_torque(x.head<2>()));
  }

private:
  static ControlBox make_box(const SystemConfig& cfg) {
    if (cfg.tau_max.size() != 2) throw std::invalid_argument("two_link_arm: params.tau_max must have 2 entries");
    ControlBox box;
    box.lower = -cfg.tau_max;
    box.upper = cfg.tau_max;
    return box;
  }

  Eigen::Vector2d gravity_torque(const Eigen::Vector2d& q) const {
    const double m2e = config_.mass2 + config_.payload;
    const double g = config_.gravity, l1 = config_.link1, l2 = config_.link2;
    const double c1 = std::cos(q[0]), c12 = std::cos(q[0] + q[1]);
    Eigen::Vector2d tau;
    tau[0] = (config_.mass1 + m2e) * g * l1 * c1 + m2e * g * l2 * c12;
    tau[1] = m2e * g * l2 * c12;
    return tau;
  }

  // Point masses at the link tips; bias collects Coriolis/centrifugal and
  // gravity torques so qddot = Minv * (tau - bias).
  void dynamics_terms(const Eigen::VectorXd& x, Eigen::Matrix2d& minv, Eigen::Vector2d& bias) const {
    const double m1 = config_.mass1;
    const double m2e = config_.mass2 + config_.payload;
    const double l1 = config_.link1, l2 = config_.link2;
    const double c2 = std::cos(x[1]), s2 = std::sin(x[1]);
    const double dq1 = x[2], dq2 = x[3];

    Eigen::Matrix2d m;
    m(0, 0) = (m1 + m2e) * l1 * l1 + m2e * l2 * l2 + 2.0 * m2e * l1 * l2 * c2;
    m(0, 1) = m2e * l2 * l2 + m2e * l1 * l2 * c2;
    m(1, 0) = m(0, 1);
    m(1, 1) = m2e * l2 * l2;

    const double h = m2e * l1 * l2 * s2;
    Eigen::Vector2d coriolis;
    coriolis[0] = -h * (2.0 * dq1 * dq2 + dq2 * dq2);
    coriolis[1] = h * dq1 * dq1;

    bias = coriolis + gravity_torque(x.head<2>());
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    minv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    minv /= det;
  }
};

}  // namespace

std::unique_ptr<ControlAffineSystem> make_system(const SystemConfig& config) {
  if (config.system == "integrator1d") return std::make_unique<Integrator1D>(config);
  if (config.system == "double_integrator1d") return std::make_unique<DoubleIntegrator1D>(config);
  if (config.system == "point_mass2d") return std::make_unique<PointMass2D>(config);
  if (config.system == "dubins_car") return std::make_unique<DubinsCar>(config);
  if (config.system == "two_link_arm") return std::make_unique<TwoLinkArm>(config);
  throw std::invalid_argument("unknown system: " + config.system);
}

std::unique_ptr<ControlAffineSystem> load_system(const std::string& config_path) {
  return make_system(load_system_config(config_path));
}

const std::vector<std::string>& BenchmarkSuite::names() {
  static const std::vector<std::string> kNames = {"integrator1d", "double_integrator1d", "point_mass2d",
                                                  "dubins_car", "two_link_arm"};
  return kNames;
}

BenchmarkSuite BenchmarkSuite::load(const std::string& config_dir) {
  BenchmarkSuite suite;
  for (const auto& name : names()) {
    suite.systems.push_back(load_system(config_dir + "/" + name + ".json"));
  }
  return suite;
}

}  // namespace safety_horizon

#include "safety_horizon/bench.hpp"

#include "safety_horizon/parallel.hpp"

#include <json.hpp>

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace safety_horizon {

using nlohmann::json;
namespace fs = std::filesystem;

std::string method_name(Method m) {
  switch (m) {
    case Method::Vanilla: return "vanilla";
    case Method::Svmpc: return "svmpc";
    case Method::Filter: return "filter";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "vanilla") return Method::Vanilla;
  if (name == "svmpc") return Method::Svmpc;
  if (name == "filter") return Method::Filter;
  throw std::invalid_argument("unknown method: " + name);
}

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

/// Portable uniform double in [lo, hi): independent of the standard
/// library's distribution internals, so identical seeds give identical
/// samples everywhere.
double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<Eigen::VectorXd> sample_initial_states(const ControlAffineSystem& system, const ValueFunction& v, int n,
                                                   std::uint64_t seed, double margin) {
  if (margin < 0.0) throw std::invalid_argument("sample_initial_states: margin must be nonnegative");
  std::vector<Eigen::VectorXd> out;
  if (n <= 0) return out;
  const auto& axes = v.field.axes();
  if (static_cast<int>(axes.size()) != system.state_dim())
    throw std::invalid_argument("sample_initial_states: value-function grid does not match the system");

  std::mt19937_64 rng(seed);
  Eigen::VectorXd x(system.state_dim());
  constexpr std::size_t kMaxProposals = 1000000;
  for (std::size_t proposals = 0; proposals < kMaxProposals && static_cast<int>(out.size()) < n; ++proposals) {
    for (int i = 0; i < system.state_dim(); ++i) x[i] = uniform_in(rng, axes[static_cast<std::size_t>(i)].min, axes[static_cast<std::size_t>(i)].max);
    if (v.value(x) >= margin) out.push_back(x);
  }
  if (static_cast<int>(out.size()) < n)
    throw std::runtime_error("sample_initial_states: acceptance below 1% after 1e6 proposals; "
                             "check the domain and margin configuration");
  return out;
}

TrialResult run_trial(const ControlAffineSystem& system, const ValueFunction* vf, const TrialConfig& config,
                      const Eigen::VectorXd& x0) {
  if (config.task_seconds + 1e-9 < static_cast<double>(config.horizon) * config.dt)
    throw std::invalid_argument("run_trial: task_seconds must cover one planning horizon");
  if ((config.method == Method::Svmpc || config.method == Method::Filter) && vf == nullptr)
    throw std::invalid_argument("run_trial: method requires a value function");

  MpcConfig mpc;
  mpc.horizon = config.horizon;
  mpc.dt = config.dt;
  mpc.control_horizon = config.control_horizon;
  mpc.max_scp_iters = config.max_scp_iters;
  mpc.trust_region = config.trust_region;
  if (config.method == Method::Svmpc) mpc.terminal = TerminalSafetyValue{vf, config.epsilon};
  MpcController controller(system, mpc);

  FilterConfig fcfg;
  fcfg.gamma = config.gamma;
  fcfg.value_fn = vf;

  const int n_steps = static_cast<int>(std::llround(config.task_seconds / config.dt));
  TrialResult result;
  Eigen::VectorXd x = system.wrap_state(x0);
  result.min_constraint = system.constraint(x);
  result.steps.reserve(static_cast<std::size_t>(n_steps));

  int k = 0;
  while (k < n_steps) {
    const MpcController::StepResult plan = controller.step(x);
    result.planning_calls += 1;
    if (!plan.converged) result.failed_steps += 1;

    for (std::size_t i = 0; i < plan.controls.size() && k < n_steps; ++i, ++k) {
      Eigen::VectorXd u = plan.controls[i];
      double extra_ms = 0.0;
      if (config.method == Method::Filter) {
        const auto t0 = std::chrono::steady_clock::now();
        u = filter_control(system, fcfg, x, u);
        extra_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }

      TrialStep row;
      row.t = static_cast<double>(k) * config.dt;
      row.x = x;
      row.u = u;
      row.l = system.constraint(x);
      bool clamped = false;
      row.v = vf ? vf->value(x, &clamped) : std::numeric_limits<double>::quiet_NaN();
      row.clamped = clamped;
      row.scp_iters = plan.scp_iterations;
      row.plan_ms = plan.plan_ms + extra_ms;
      row.converged = plan.converged;
      row.planned = (i == 0);
      row.active_ctrl = system.active_control_count(u);
      row.dist_goal = system.goal_distance(x);
      row.dist_obs = row.l;
      result.steps.push_back(std::move(row));

      x = system.wrap_state(system.step(x, u, config.dt));
      result.min_constraint = std::min(result.min_constraint, system.constraint(x));
    }
  }
  result.final_state = x;
  result.safe = result.min_constraint >= 0.0;
  return result;
}

TrialResult run_trial(const TrialConfig& config, const Eigen::VectorXd& x0) {
  const auto system = load_system(config.system_config_path);
  std::optional<ValueFunction> vf;
  if (!config.value_function_path.empty()) vf = load_value_function(config.value_function_path);
  return run_trial(*system, vf ? &*vf : nullptr, config, x0);
}

namespace {

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

double step_mean(const TrialResult& trial, const std::function<double(const TrialStep&)>& f, bool planned_only) {
  double sum = 0.0;
  int count = 0;
  for (const auto& s : trial.steps) {
    if (planned_only && !s.planned) continue;
    sum += f(s);
    count += 1;
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

MetricsSummary compute_metrics(const std::vector<TrialResult>& results) {
  if (results.empty()) throw std::invalid_argument("compute_metrics: need at least one trial");
  MetricsSummary summary;
  summary.n_trials = static_cast<int>(results.size());
  std::vector<double> dist_goal, dist_obs, active, scp, plan;
  for (const auto& trial : results) {
    if (!trial.safe) continue;
    summary.n_safe += 1;
    dist_goal.push_back(step_mean(trial, [](const TrialStep& s) { return s.dist_goal; }, false));
    dist_obs.push_back(step_mean(trial, [](const TrialStep& s) { return s.dist_obs; }, false));
    active.push_back(step_mean(trial, [](const TrialStep& s) { return static_cast<double>(s.active_ctrl); }, false));
    scp.push_back(step_mean(trial, [](const TrialStep& s) { return static_cast<double>(s.scp_iters); }, true));
    plan.push_back(step_mean(trial, [](const TrialStep& s) { return s.plan_ms; }, true));
  }
  summary.safety_rate = static_cast<double>(summary.n_safe) / static_cast<double>(summary.n_trials);
  if (summary.n_safe > 0) {
    summary.dist_goal = mean_std(dist_goal);
    summary.dist_obs = mean_std(dist_obs);
    summary.active_ctrl = mean_std(active);
    summary.scp_iters = mean_std(scp);
    summary.plan_ms = mean_std(plan);
  }
  return summary;
}

void save_value_function(const ValueFunction& v, const std::string& path) {
  json header;
  header["version"] = 1;
  header["system"] = v.system_name;
  json axes = json::array();
  for (const auto& a : v.field.axes()) axes.push_back({{"min", a.min}, {"max", a.max}, {"n", a.n}});
  header["axes"] = axes;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_value_function: cannot open " + path);
  out << header.dump() << '\n';
  static_assert(sizeof(double) == 8);
  const auto& values = v.field.values();
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double d : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(bytes, 8);
    }
  }
  if (!out) throw std::runtime_error("save_value_function: write failed for " + path);
}

ValueFunction load_value_function(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_value_function: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw std::runtime_error("load_value_function: missing header line");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load_value_function: bad header: ") + e.what());
  }
  if (header.value("version", -1) != 1) throw std::runtime_error("load_value_function: unsupported version");

  std::vector<AxisSpec> axes;
  for (const auto& a : header.at("axes")) {
    axes.push_back(AxisSpec{a.at("min").get<double>(), a.at("max").get<double>(), a.at("n").get<int>()});
  }
  GridField field(axes);
  std::vector<double> values(field.size());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(values.size() * sizeof(double)))
    throw std::runtime_error("load_value_function: payload shorter than the header promises");
  if (in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("load_value_function: trailing bytes after the payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (double& d : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      std::uint64_t swapped = 0;
      for (int i = 0; i < 8; ++i) swapped |= ((bits >> (8 * i)) & 0xff) << (8 * (7 - i));
      std::memcpy(&d, &swapped, 8);
    }
  }
  field.set_values(std::move(values));
  field.compute_node_gradients();

  ValueFunction vf;
  vf.field = std::move(field);
  vf.system_name = header.value("system", "");
  return vf;
}

std::string trial_csv(const TrialResult& result) {
  std::ostringstream out;
  if (result.steps.empty()) return "";
  const int n_x = static_cast<int>(result.steps.front().x.size());
  const int n_u = static_cast<int>(result.steps.front().u.size());
  out << "t";
  for (int i = 0; i < n_x; ++i) out << ",x" << i;
  for (int j = 0; j < n_u; ++j) out << ",u" << j;
  out << ",l,V,scp_iters,plan_ms,converged,planned,active_ctrl,dist_goal,dist_obs,clamped\n";
  for (const auto& s : result.steps) {
    out << format_double(s.t);
    for (int i = 0; i < n_x; ++i) out << ',' << format_double(s.x[i]);
    for (int j = 0; j < n_u; ++j) out << ',' << format_double(s.u[j]);
    out << ',' << format_double(s.l) << ',' << format_double(s.v) << ',' << s.scp_iters << ','
        << format_double(s.plan_ms) << ',' << (s.converged ? 1 : 0) << ',' << (s.planned ? 1 : 0) << ','
        << s.active_ctrl << ',' << format_double(s.dist_goal) << ',' << format_double(s.dist_obs) << ','
        << (s.clamped ? 1 : 0) << '\n';
  }
  return out.str();
}

SuiteConfig load_suite_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open suite config: " + path);
  json j = json::parse(in);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  SuiteConfig cfg;
  for (const auto& s : j.at("systems")) cfg.system_paths.push_back(resolve(s.get<std::string>()));
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j["methods"]) cfg.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("horizons")) {
    cfg.horizons.clear();
    for (const auto& h : j["horizons"]) cfg.horizons.push_back(h.get<int>());
  }
  cfg.trials = j.value("trials", cfg.trials);
  cfg.task_seconds = j.value("task_seconds", cfg.task_seconds);
  cfg.dt = j.value("dt", cfg.dt);
  cfg.control_horizon = j.value("control_horizon", cfg.control_horizon);
  cfg.max_scp_iters = j.value("max_scp_iters", cfg.max_scp_iters);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("value_functions")) {
    for (const auto& [name, p] : j["value_functions"].items()) cfg.value_function_paths[name] = resolve(p.get<std::string>());
  }
  if (j.contains("trust_region")) {
    for (const auto& [name, v] : j["trust_region"].items()) cfg.trust_region[name] = v.get<double>();
  }
  if (j.contains("hjb")) {
    cfg.hjb.cfl = j["hjb"].value("cfl", cfg.hjb.cfl);
    cfg.hjb.convergence_tol = j["hjb"].value("tol", cfg.hjb.convergence_tol);
    cfg.hjb.max_steps = j["hjb"].value("max_steps", cfg.hjb.max_steps);
  }
  return cfg;
}

namespace {

bool axes_match(const std::vector<AxisSpec>& a, const std::vector<AxisSpec>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].min != b[i].min || a[i].max != b[i].max || a[i].n != b[i].n) return false;
  }
  return true;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

std::uint64_t hash_states(const std::vector<Eigen::VectorXd>& xs) {
  std::vector<double> flat;
  for (const auto& x : xs) {
    for (int i = 0; i < x.size(); ++i) flat.push_back(x[i]);
  }
  return fnv1a64(flat.data(), flat.size() * sizeof(double));
}

}  // namespace

BenchmarkReport run_benchmark(const SuiteConfig& config, const std::string& out_dir, int workers) {
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(fs::path(out_dir) / "trials");

  struct SystemEntry {
    std::unique_ptr<ControlAffineSystem> system;
    ValueFunction vf;
    std::string vf_path;
    std::vector<Eigen::VectorXd> x0s;
    double trust_region = 0.5;
  };
  std::vector<SystemEntry> entries;

  for (const auto& path : config.system_paths) {
    SystemEntry entry;
    entry.system = load_system(path);
    const std::string name = entry.system->name();
    entry.vf_path = config.value_function_paths.count(name)
                        ? config.value_function_paths.at(name)
                        : (fs::path(out_dir) / ("vf_" + name + ".bin")).string();
    bool have = false;
    if (fs::exists(entry.vf_path)) {
      ValueFunction vf = load_value_function(entry.vf_path);
      if (vf.system_name == name && axes_match(vf.field.axes(), entry.system->config().grid)) {
        entry.vf = std::move(vf);
        have = true;
      }
    }
    if (!have) {
      entry.vf = solve_converged(*entry.system, entry.system->config().grid, config.hjb);
      save_value_function(entry.vf, entry.vf_path);
    }
    const double margin = config.epsilon + 2.0 * entry.vf.field.max_spacing();
    entry.x0s = sample_initial_states(*entry.system, entry.vf, config.trials, config.seed, margin);
    if (config.trust_region.count(name)) entry.trust_region = config.trust_region.at(name);
    entries.push_back(std::move(entry));
  }

  struct WorkItem {
    int sys, method, horizon, trial;
  };
  std::vector<WorkItem> items;
  for (int s = 0; s < static_cast<int>(entries.size()); ++s) {
    for (int h = 0; h < static_cast<int>(config.horizons.size()); ++h) {
      for (int m = 0; m < static_cast<int>(config.methods.size()); ++m) {
        for (int t = 0; t < config.trials; ++t) items.push_back({s, m, h, t});
      }
    }
  }
  std::vector<TrialResult> results(items.size());

  const int n_workers = resolve_worker_count(workers);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= items.size()) break;
        const WorkItem& item = items[i];
        const SystemEntry& entry = entries[static_cast<std::size_t>(item.sys)];
        TrialConfig tc;
        tc.method = config.methods[static_cast<std::size_t>(item.method)];
        tc.horizon = config.horizons[static_cast<std::size_t>(item.horizon)];
        tc.task_seconds = config.task_seconds;
        tc.dt = config.dt;
        tc.seed = config.seed;
        tc.epsilon = config.epsilon;
        tc.gamma = config.gamma;
        tc.control_horizon = config.control_horizon;
        tc.max_scp_iters = config.max_scp_iters;
        tc.trust_region = entry.trust_region;
        results[i] = run_trial(*entry.system, &entry.vf, tc, entry.x0s[static_cast<std::size_t>(item.trial)]);

        char fname[256];
        std::snprintf(fname, sizeof(fname), "%s_%s_h%02d_t%03d.csv", entry.system->name().c_str(),
                      method_name(tc.method).c_str(), tc.horizon, item.trial);
        std::ofstream out(fs::path(out_dir) / "trials" / fname);
        out << trial_csv(results[i]);
      }
    });
  }
  for (auto& th : pool) th.join();

  BenchmarkReport report;
  report.out_dir = out_dir;
  // summary rows ordered by system, then horizon, then method
  for (int s = 0; s < static_cast<int>(entries.size()); ++s) {
    for (int h = 0; h < static_cast<int>(config.horizons.size()); ++h) {
      for (int m = 0; m < static_cast<int>(config.methods.size()); ++m) {
        std::vector<TrialResult> cell;
        for (std::size_t i = 0; i < items.size(); ++i) {
          if (items[i].sys == s && items[i].horizon == h && items[i].method == m) cell.push_back(results[i]);
        }
        SummaryRow row;
        row.system = entries[static_cast<std::size_t>(s)].system->name();
        row.method = config.methods[static_cast<std::size_t>(m)];
        row.horizon = config.horizons[static_cast<std::size_t>(h)];
        row.metrics = compute_metrics(cell);
        report.rows.push_back(std::move(row));
      }
    }
  }

  std::ofstream summary(fs::path(out_dir) / "summary.csv");
  summary << summary_csv_header();
  for (const auto& row : report.rows) summary << summary_csv_row(row);
  summary.close();

  json manifest;
  manifest["trials"] = config.trials;
  manifest["task_seconds"] = config.task_seconds;
  manifest["dt"] = config.dt;
  manifest["control_horizon"] = config.control_horizon;
  manifest["max_scp_iters"] = config.max_scp_iters;
  manifest["epsilon"] = config.epsilon;
  manifest["gamma"] = config.gamma;
  manifest["seed"] = config.seed;
  json horizons = json::array();
  for (int h : config.horizons) horizons.push_back(h);
  manifest["horizons"] = horizons;
  json methods = json::array();
  for (Method m : config.methods) methods.push_back(method_name(m));
  manifest["methods"] = methods;
  json systems = json::object();
  for (const auto& entry : entries) {
    json s;
    s["config"] = json::parse(entry.system->config().dump_json());
    s["value_function"] = entry.vf_path;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(hash_file(entry.vf_path)));
    s["value_function_hash"] = hash;
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(hash_states(entry.x0s)));
    s["x0_hash"] = hash;
    json x0s = json::array();
    for (const auto& x : entry.x0s) {
      json xs = json::array();
      for (int i = 0; i < x.size(); ++i) xs.push_back(x[i]);
      x0s.push_back(xs);
    }
    s["x0"] = x0s;
    systems[entry.system->name()] = s;
  }
  manifest["systems"] = systems;
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  manifest["wall_time_s"] = report.wall_time_s;
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << '\n';

  return report;
}

std::string summary_csv_header() {
  return "system,method,h,n_trials,safety_rate,avg_dist_goal_mean,avg_dist_goal_std,avg_dist_obs_mean,"
         "avg_dist_obs_std,avg_active_ctrl_mean,avg_active_ctrl_std,avg_scp_iters_mean,avg_scp_iters_std,"
         "avg_plan_ms_mean,avg_plan_ms_std\n";
}

namespace {

void append_optional(std::ostringstream& out, const std::optional<MeanStd>& m) {
  if (m) {
    out << ',' << format_double(m->mean) << ',' << format_double(m->stddev);
  } else {
    out << ",,";
  }
}

}  // namespace

std::string summary_csv_row(const SummaryRow& row) {
  std::ostringstream out;
  out << row.system << ',' << method_name(row.method) << ',' << row.horizon << ',' << row.metrics.n_trials << ','
      << format_double(row.metrics.safety_rate);
  append_optional(out, row.metrics.dist_goal);
  append_optional(out, row.metrics.dist_obs);
  append_optional(out, row.metrics.active_ctrl);
  append_optional(out, row.metrics.scp_iters);
  append_optional(out, row.metrics.plan_ms);
  out << '\n';
  return out.str();
}

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open summary csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty summary csv: " + path);
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(15);
    SummaryRow row;
    row.system = cells[0];
    row.method = parse_method(cells[1]);
    row.horizon = std::stoi(cells[2]);
    row.metrics.n_trials = std::stoi(cells[3]);
    row.metrics.safety_rate = std::stod(cells[4]);
    row.metrics.n_safe = static_cast<int>(std::llround(row.metrics.safety_rate * row.metrics.n_trials));
    auto opt = [&cells](std::size_t i) -> std::optional<MeanStd> {
      if (cells[i].empty()) return std::nullopt;
      return MeanStd{std::stod(cells[i]), std::stod(cells[i + 1])};
    };
    row.metrics.dist_goal = opt(5);
    row.metrics.dist_obs = opt(7);
    row.metrics.active_ctrl = opt(9);
    row.metrics.scp_iters = opt(11);
    row.metrics.plan_ms = opt(13);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_mean_std(double mean, double stddev, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f\xC2\xB1%.*f", decimals, mean, decimals, stddev);
  return buf;
}

namespace {

std::string format_cell(const std::optional<MeanStd>& m, int decimals, bool best) {
  if (!m) return "n/a";
  return format_mean_std(m->mean, m->stddev, decimals) + (best ? "*" : " ");
}

}  // namespace

std::string render_report_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  char line[320];
  std::snprintf(line, sizeof(line), "%-20s %-3s %-8s %-7s %-17s %-17s %-15s %-15s %-17s\n", "system", "h", "method",
                "safety", "dist_goal", "dist_obs", "active_ctrl", "scp_iters", "plan_ms");
  out << line;

  for (std::size_t i = 0; i < rows.size();) {
    // group = same system and horizon
    std::size_t j = i;
    while (j < rows.size() && rows[j].system == rows[i].system && rows[j].horizon == rows[i].horizon) ++j;

    double best_safety = -1.0, best_goal = 1e300, best_obs = -1e300, best_active = 1e300, best_scp = 1e300,
           best_plan = 1e300;
    for (std::size_t k = i; k < j; ++k) {
      const MetricsSummary& m = rows[k].metrics;
      best_safety = std::max(best_safety, m.safety_rate);
      if (m.dist_goal) best_goal = std::min(best_goal, m.dist_goal->mean);
      if (m.dist_obs) best_obs = std::max(best_obs, m.dist_obs->mean);
      if (m.active_ctrl) best_active = std::min(best_active, m.active_ctrl->mean);
      if (m.scp_iters) best_scp = std::min(best_scp, m.scp_iters->mean);
      if (m.plan_ms) best_plan = std::min(best_plan, m.plan_ms->mean);
    }
    for (std::size_t k = i; k < j; ++k) {
      const MetricsSummary& m = rows[k].metrics;
      char safety[32];
      std::snprintf(safety, sizeof(safety), "%.0f%%%s", 100.0 * m.safety_rate,
                    m.safety_rate == best_safety ? "*" : " ");
      std::snprintf(line, sizeof(line), "%-20s %-3d %-8s %-7s %-17s %-17s %-15s %-15s %-17s\n",
                    rows[k].system.c_str(), rows[k].horizon, method_name(rows[k].method).c_str(), safety,
                    format_cell(m.dist_goal, 4, m.dist_goal && m.dist_goal->mean == best_goal).c_str(),
                    format_cell(m.dist_obs, 4, m.dist_obs && m.dist_obs->mean == best_obs).c_str(),
                    format_cell(m.active_ctrl, 3, m.active_ctrl && m.active_ctrl->mean == best_active).c_str(),
                    format_cell(m.scp_iters, 3, m.scp_iters && m.scp_iters->mean == best_scp).c_str(),
                    format_cell(m.plan_ms, 3, m.plan_ms && m.plan_ms->mean == best_plan).c_str());
      out << line;
    }
    i = j;
  }
  return out.str();
}

std::string render_report_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << summary_csv_header();
  for (const auto& row : rows) out << summary_csv_row(row);
  return out.str();
}

}  // namespace safety_horizon

#pragma once

#include "safety_horizon/filter.hpp"
#include "safety_horizon/hjb.hpp"
#include "safety_horizon/models.hpp"
#include "safety_horizon/mpc.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace safety_horizon {

enum class Method { Vanilla, Svmpc, Filter };
std::string method_name(Method m);
Method parse_method(const std::string& name);

/// One closed-loop rollout configuration. The seed and the configs fully
/// determine the trial.
struct TrialConfig {
  std::string system_config_path;
  Method method = Method::Vanilla;
  int horizon = 8;
  double task_seconds = 15.0;
  double dt = 0.04;
  std::uint64_t seed = 0;
  std::string value_function_path;
  double epsilon = 0.05;
  double gamma = 1.0;
  int control_horizon = 1;
  int max_scp_iters = 15;
  double trust_region = 0.5;
};

struct TrialStep {
  double t = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd u;
  double l = 0.0;
  double v = 0.0;  // NaN when no value function is attached
  int scp_iters = 0;
  double plan_ms = 0.0;
  bool converged = true;
  bool planned = false;  // true on rows where a planning call happened
  int active_ctrl = 0;
  double dist_goal = 0.0;
  double dist_obs = 0.0;
  bool clamped = false;
};

struct TrialResult {
  std::vector<TrialStep> steps;
  Eigen::VectorXd final_state;
  double min_constraint = 0.0;
  bool safe = false;
  int planning_calls = 0;
  int failed_steps = 0;  // planning calls that did not converge
};

/// Rejection-samples states uniformly over the value-function grid domain,
/// accepting interpolated V >= margin. Deterministic given the seed.
std::vector<Eigen::VectorXd> sample_initial_states(const ControlAffineSystem& system, const ValueFunction& v, int n,
                                                   std::uint64_t seed, double margin);

/// Closed-loop rollout. Planning failures apply the best-so-far controls
/// and are recorded; they never abort the trial.
TrialResult run_trial(const ControlAffineSystem& system, const ValueFunction* vf, const TrialConfig& config,
                      const Eigen::VectorXd& x0);
TrialResult run_trial(const TrialConfig& config, const Eigen::VectorXd& x0);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

/// The six benchmark metrics. Non-safety metrics cover collision-free
/// trials only and are absent when there is none.
struct MetricsSummary {
  int n_trials = 0;
  int n_safe = 0;
  double safety_rate = 0.0;
  std::optional<MeanStd> dist_goal, dist_obs, active_ctrl, scp_iters, plan_ms;
};

MetricsSummary compute_metrics(const std::vector<TrialResult>& results);

/// Value-function wire format: one JSON header line
/// {"version":1,"system":...,"axes":[...]} then raw little-endian doubles,
/// row-major with the last axis fastest. Round-trips are bit-exact.
void save_value_function(const ValueFunction& v, const std::string& path);
ValueFunction load_value_function(const std::string& path);

std::string trial_csv(const TrialResult& result);

/// Benchmark suite configuration (JSON file; paths resolve relative to the
/// file's directory).
struct SuiteConfig {
  std::vector<std::string> system_paths;
  std::vector<Method> methods = {Method::Vanilla, Method::Svmpc, Method::Filter};
  std::vector<int> horizons = {6, 8, 10, 12, 15};
  int trials = 100;
  double task_seconds = 15.0;
  double dt = 0.04;
  int control_horizon = 1;
  int max_scp_iters = 15;
  double epsilon = 0.05;
  double gamma = 1.0;
  std::uint64_t seed = 1;
  std::map<std::string, std::string> value_function_paths;  // per system name
  std::map<std::string, double> trust_region;               // per system name
  HjbConfig hjb;
};

SuiteConfig load_suite_config(const std::string& path);

struct SummaryRow {
  std::string system;
  Method method = Method::Vanilla;
  int horizon = 0;
  MetricsSummary metrics;
};

struct BenchmarkReport {
  std::vector<SummaryRow> rows;
  std::string out_dir;
  double wall_time_s = 0.0;
};

/// Runs every system x method x horizon cell with a shared per-system
/// initial-state list, writes per-trial CSVs, summary.csv and
/// manifest.json. Value functions are loaded from their configured paths or
/// solved and cached on first use.
BenchmarkReport run_benchmark(const SuiteConfig& config, const std::string& out_dir, int workers = 0);

std::string summary_csv_header();
std::string summary_csv_row(const SummaryRow& row);
std::vector<SummaryRow> read_summary_csv(const std::string& path);

/// Table II style cell: mean+-std at fixed decimals (4 for meters, 3 for
/// counts and milliseconds).
std::string format_mean_std(double mean, double stddev, int decimals);

/// Comparison table over one or more summary files, with best-in-group
/// markers per metric, plus the combined CSV.
std::string render_report_table(const std::vector<SummaryRow>& rows);
std::string render_report_csv(const std::vector<SummaryRow>& rows);

std::uint64_t fnv1a64(const void* data, std::size_t bytes);

}  // namespace safety_horizon

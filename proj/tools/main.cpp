#include "safety_horizon/bench.hpp"
#include "safety_horizon/hjb.hpp"
#include "safety_horizon/models.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace safety_horizon;

Eigen::VectorXd parse_csv_vector(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  Eigen::VectorXd v(static_cast<int>(vals.size()));
  for (int i = 0; i < v.size(); ++i) v[i] = vals[static_cast<std::size_t>(i)];
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Per-step CSV in the run-command format: t, x..., u..., l, V, scp_iters,
/// plan_ms, converged.
std::string run_csv(const TrialResult& result) {
  std::ostringstream out;
  if (result.steps.empty()) return "";
  const int n_x = static_cast<int>(result.steps.front().x.size());
  const int n_u = static_cast<int>(result.steps.front().u.size());
  out << "t";
  for (int i = 0; i < n_x; ++i) out << ",x" << i;
  for (int j = 0; j < n_u; ++j) out << ",u" << j;
  out << ",l,V,scp_iters,plan_ms,converged\n";
  for (const auto& s : result.steps) {
    out << format_double(s.t);
    for (int i = 0; i < n_x; ++i) out << ',' << format_double(s.x[i]);
    for (int j = 0; j < n_u; ++j) out << ',' << format_double(s.u[j]);
    out << ',' << format_double(s.l) << ',' << format_double(s.v) << ',' << s.scp_iters << ','
        << format_double(s.plan_ms) << ',' << (s.converged ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety value functions on grids and safety-value MPC benchmarks"};
  app.require_subcommand(1);

  // solve-value
  auto* solve = app.add_subcommand("solve-value", "Solve the safety value function on the system's grid");
  std::string solve_system, solve_out;
  HjbConfig hjb;
  solve->add_option("--system", solve_system, "system config JSON")->required();
  solve->add_option("--out", solve_out, "output value-function file")->required();
  solve->add_option("--cfl", hjb.cfl, "CFL number in (0,1]");
  solve->add_option("--tol", hjb.convergence_tol, "max-norm change per unit time at convergence");
  solve->add_option("--max-steps", hjb.max_steps, "backward sweep limit");
  solve->add_option("--workers", hjb.workers, "sweep worker threads (0 = auto)");

  // run
  auto* run = app.add_subcommand("run", "Closed-loop rollout of one method from a given state");
  std::string run_system, run_method = "vanilla", run_vf, run_x0, run_out;
  TrialConfig trial;
  run->add_option("--system", run_system, "system config JSON")->required();
  run->add_option("--method", run_method, "vanilla|svmpc|filter")->required();
  run->add_option("--vf", run_vf, "value-function file (required for svmpc/filter)");
  run->add_option("--x0", run_x0, "initial state, comma separated")->required();
  run->add_option("--horizon", trial.horizon, "planning horizon steps")->required();
  run->add_option("--task-seconds", trial.task_seconds, "task horizon in seconds")->required();
  run->add_option("--dt", trial.dt, "control timestep");
  run->add_option("--epsilon", trial.epsilon, "terminal value buffer");
  run->add_option("--gamma", trial.gamma, "filter blending gain");
  run->add_option("--control-horizon", trial.control_horizon, "controls applied per replan");
  run->add_option("--max-scp-iters", trial.max_scp_iters, "SCP iteration cap");
  run->add_option("--trust-region", trial.trust_region, "SCP trust-region radius");
  run->add_option("--out", run_out, "write CSV here instead of stdout");

  // bench
  auto* bench = app.add_subcommand("bench", "Run the benchmark suite");
  std::string bench_config, bench_out;
  int bench_workers = 0;
  bench->add_option("--config", bench_config, "suite config JSON")->required();
  bench->add_option("--out", bench_out, "output directory")->required();
  bench->add_option("--workers", bench_workers, "trial worker threads (0 = auto)");

  // report
  auto* report = app.add_subcommand("report", "Render comparison tables from benchmark summaries");
  std::vector<std::string> report_dirs;
  std::string report_csv;
  report->add_option("dirs", report_dirs, "benchmark output directories or summary.csv paths")->required();
  report->add_option("--csv", report_csv, "also write the combined CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) {
      const auto system = load_system(solve_system);
      const ValueFunction vf = solve_converged(*system, system->config().grid, hjb);
      save_value_function(vf, solve_out);
      nlohmann::json side;
      side["steps"] = vf.report.steps;
      side["residual"] = vf.report.residual;
      side["wall_time_s"] = vf.report.wall_time_s;
      side["converged"] = vf.report.converged;
      std::ofstream sidecar(solve_out + ".report.json");
      sidecar << side.dump(2) << '\n';
      std::cerr << "solved " << system->name() << ": steps=" << vf.report.steps
                << " residual=" << vf.report.residual << " wall=" << vf.report.wall_time_s << "s"
                << (vf.report.converged ? "" : " (not converged)") << "\n";
    } else if (run->parsed()) {
      const auto system = load_system(run_system);
      trial.method = parse_method(run_method);
      std::optional<ValueFunction> vf;
      if (!run_vf.empty()) vf = load_value_function(run_vf);
      const TrialResult result = run_trial(*system, vf ? &*vf : nullptr, trial, parse_csv_vector(run_x0));
      const std::string csv = run_csv(result);
      if (run_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(run_out);
        out << csv;
      }
      std::cerr << (result.safe ? "safe" : "UNSAFE") << " min_l=" << result.min_constraint
                << " failed_steps=" << result.failed_steps << "\n";
    } else if (bench->parsed()) {
      const SuiteConfig cfg = load_suite_config(bench_config);
      const BenchmarkReport rep = run_benchmark(cfg, bench_out, bench_workers);
      std::cout << render_report_table(rep.rows);
      std::cerr << "benchmark finished in " << rep.wall_time_s << "s, output in " << rep.out_dir << "\n";
    } else if (report->parsed()) {
      std::vector<SummaryRow> rows;
      for (const auto& dir : report_dirs) {
        const std::string path = dir.size() > 4 && dir.substr(dir.size() - 4) == ".csv" ? dir : dir + "/summary.csv";
        const auto part = read_summary_csv(path);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      std::cout << render_report_table(rows);
      if (!report_csv.empty()) {
        std::ofstream out(report_csv);
        out << render_report_csv(rows);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

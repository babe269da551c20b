#pragma once

#include "safety_horizon/hjb.hpp"
#include "safety_horizon/models.hpp"

#include <Eigen/Core>

namespace safety_horizon {

/// Smooth-blending safety filter: minimally perturbs a nominal control so
/// the safety value function decreases no faster than -gamma * V_s.
struct FilterConfig {
  double gamma = 1.0;  // 1/seconds
  const ValueFunction* value_fn = nullptr;

  void validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("FilterConfig: gamma must be positive");
    if (value_fn == nullptr) throw std::invalid_argument("FilterConfig: value function required");
  }
};

struct FilterDiagnostics {
  bool fallback = false;          // rate condition unreachable in the box
  bool constraint_active = false; // output differs from the nominal control
  int qp_iterations = 0;
};

/// Solves min |u - u_nom|^2 s.t. dV.(a + Bu) >= -gamma V, u in the box.
/// When the box cannot achieve the required rate, falls back to the optimal
/// safe control (the least-restrictive choice) and flags it.
Eigen::VectorXd filter_control(const ControlAffineSystem& system, const FilterConfig& config,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& u_nom,
                               FilterDiagnostics* diag = nullptr);

}  // namespace safety_horizon

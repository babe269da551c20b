#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <optional>
#include <vector>

namespace safety_horizon {

/// Convex quadratic program
///   min 0.5 z'Pz + q'z   s.t.  lb <= Az <= ub
/// with P given as upper-triangle triplets and A as general triplets.
/// Rows with lb == ub are equalities; +-infinity bounds are allowed.
struct QpProblem {
  int n = 0;  // variables
  int m = 0;  // constraint rows
  std::vector<Eigen::Triplet<double>> p_upper;
  Eigen::VectorXd q;
  std::vector<Eigen::Triplet<double>> a;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
};

enum class QpStatus { Solved, MaxIter, PrimalInfeasible, DualInfeasible };

/// Dual sign convention: stationarity is Pz + q - A'y = 0 with y >= 0 on
/// active lower bounds and y <= 0 on active upper bounds.
struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd y;
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

/// Operator-splitting (ADMM) solve with fixed penalty plus periodic penalty
/// rescaling. Linear systems use a dense factorization below 200 variables
/// and a sparse one elsewhere. A previous solution warm-starts the iterates.
QpSolution solve_qp(const QpProblem& p, const QpSolution* warm = nullptr, double eps_abs = 1e-6,
                    double eps_rel = 1e-6, int max_iter = 20000);

struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

/// Max-norm residuals of stationarity, primal feasibility and complementary
/// slackness. A multiplier pressing on an infinite bound contributes its own
/// magnitude to the complementarity term.
KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& sol);

/// 0.5 z'Pz + q'z
double qp_objective(const QpProblem& p, const Eigen::VectorXd& z);

}  // namespace safety_horizon

#pragma once

#include <stdexcept>

#include "psm/core.hpp"

namespace psm {

template <typename Scalar>
Scalar soft_threshold(Scalar a, Scalar t)
{
  Scalar const m = std::abs(a) - t;
  if (!(m > Scalar(0))) { return Scalar(0); }
  return a > Scalar(0) ? m : -m;
}

/// Observation-weighted, l1-penalised GLM problem
///
///   (1/W) sum_i w_i [ -y_i eta_i + g(eta_i) ] + lambda * sum_{j penalised} |beta_j|
///
/// with eta_i = offset_i + intercept + x_i' beta and W = sum_i w_i. The design
/// matrix, outcomes and weights are referenced, not copied.
struct WeightedGlmProblem
{
  WeightedGlmProblem(GlmFamily family_, Eigen::Ref<Matrix const> x_, Eigen::Ref<Vector const> y_,
                     Eigen::Ref<Vector const> weights_, double lambda_ = 0.0)
    : family(family_), x(x_), y(y_), weights(weights_), lambda(lambda_)
  {}

  GlmFamily family;
  Eigen::Ref<Matrix const> x;
  Eigen::Ref<Vector const> y;
  Eigen::Ref<Vector const> weights;
  double lambda = 0.0;
  /// Empty means no offset.
  Vector offset;
  /// Empty means every feature is penalised.
  Eigen::Array<bool, Eigen::Dynamic, 1> penalize_mask;
  /// Unpenalised intercept.
  bool intercept = true;

  Index rows() const { return x.rows(); }
  Index features() const { return x.cols(); }
  bool penalized(Index j) const { return penalize_mask.size() == 0 || penalize_mask(j); }
  /// Throws std::invalid_argument when the problem is malformed.
  void validate() const;
};

struct SolverOptions
{
  double tol_cd = 1e-9;   // max coordinate change, standardised scale
  double kkt_tol = 1e-5;
  int max_sweeps = 1000;  // per IRLS step
  int max_irls = 100;
  double min_working_weight = 1e-5;
};

struct LassoSolution
{
  Vector beta;
  double intercept = 0.0;
  double objective = 0.0;
  int n_iters = 0;
  double kkt_max_violation = 0.0;
  /// Objective after each outer IRLS step, starting with the initial point.
  std::vector<double> objective_trace;
};

class SolverFailure : public std::runtime_error
{
public:
  SolverFailure(std::string const &what, LassoSolution best)
    : std::runtime_error(what), best_(std::move(best))
  {}
  LassoSolution const &best() const { return best_; }

private:
  LassoSolution best_;
};

/// Linear predictor offset + intercept + X beta.
Vector linear_predictor(WeightedGlmProblem const &prob, Vector const &beta, double intercept);

/// Penalised objective. Coefficients that are exactly zero contribute nothing
/// even when lambda is infinite.
double glm_objective(WeightedGlmProblem const &prob, Vector const &beta, double intercept);

struct GlmScore
{
  Vector slopes;       // s_j = (1/W) sum_i w_i (g'(eta_i) - y_i) x_ij
  double intercept = 0.0;
};

/// Gradient of the unpenalised weighted loss.
GlmScore glm_score(WeightedGlmProblem const &prob, Vector const &beta, double intercept);

/// Maximum violation of the lasso stationarity conditions (intercept counted
/// as unpenalised when fit).
double kkt_residual(WeightedGlmProblem const &prob, Vector const &beta, double intercept = 0.0);

/// Cyclic coordinate descent on the IRLS quadratic approximation, with a
/// backtracking step on the exact objective so the outer iterations never
/// increase it. `warm` (optional) supplies the starting point.
LassoSolution solve_weighted_lasso_glm(WeightedGlmProblem const &prob, SolverOptions const &opts = {},
                                       LassoSolution const *warm = nullptr);

} // namespace psm

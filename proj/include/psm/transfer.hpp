#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psm/core.hpp"
#include "psm/glm.hpp"
#include "psm/lca.hpp"

namespace psm {

/// Per-class penalty, or automatic selection by cross-validation when empty.
/// A single value is broadcast to every class. +infinity is allowed and
/// shrinks the whole class column (intercept included) to zero in the
/// correction stage.
struct LambdaSpec
{
  std::optional<Vector> values;

  static LambdaSpec automatic() { return {}; }
  static LambdaSpec fixed(double v) { return {Vector::Constant(1, v)}; }
  static LambdaSpec per_class(Vector v) { return {std::move(v)}; }

  bool is_auto() const { return !values.has_value(); }
  Vector resolve(Index classes) const;
};

/// Default CV multiplier grid: 10 log-spaced values in [0.01, 10].
Vector default_lambda_multipliers();

struct TransferConfig
{
  LambdaSpec lambda_pool = LambdaSpec::automatic();
  LambdaSpec lambda_bias = LambdaSpec::automatic();
  double tau = 1e-4;
  int max_iter = 100;
  bool one_step = false;
  int cv_folds = 5;
  /// Candidate lambda = multiplier * sqrt(log p / n_eff).
  Vector lambda_multipliers = default_lambda_multipliers();
  bool intercept = true;
  SolverOptions solver;
  LcaFitConfig lca;
  std::uint64_t seed = 7; // cross-validation folds

  void validate() const;
  int iterations() const { return one_step ? 1 : max_iter; }
};

struct EmTrace
{
  /// Penalised marginal objective after each M-step.
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
};

struct JointEstimate
{
  CoefficientMatrix pooled;
  MembershipMatrix weights; // weights used in the final M-step
  EmTrace trace;
  Vector lambda;
  std::vector<std::string> warnings;
};

struct BiasCorrection
{
  CoefficientMatrix correction;
  Matrix weights;
  EmTrace trace;
  Vector lambda;
  std::vector<std::string> warnings;
};

struct TransferFit
{
  CoefficientMatrix pooled;
  CoefficientMatrix correction;
  CoefficientMatrix target;
  MembershipMatrix refined_weights; // joint stage, all studies
  Matrix target_weights;            // correction stage, target rows
  LcaModel lca;
  EmTrace joint_trace;
  EmTrace bias_trace;
  Vector lambda_pool;
  Vector lambda_bias;
  GlmFamily family;
  std::vector<std::string> warnings;

  Index classes() const { return target.classes(); }
  Index features() const { return target.features(); }
};

enum class TuningStage
{
  pool,
  bias
};

/// Bayes refinement of prior memberships `v` (n x C) by the
/// outcome densities under coefficients `coef` (+ `offset` when given).
Matrix refine_weights(GlmFamily const &family, Matrix const &v, Matrix const &x, Vector const &y,
                      CoefficientMatrix const &coef, CoefficientMatrix const *offset = nullptr);

/// Study-wise refine_weights over a collection.
MembershipMatrix e_step_weights(GlmFamily const &family, MembershipMatrix const &v, CoefficientMatrix const &coef,
                                StudyCollection const &data, CoefficientMatrix const *offset = nullptr);

/// (phi / n) * sum_i -log sum_c v_ic f(y_i | eta_ic) + sum_c lambda_c |beta_c|_1,
/// with eta_ic = x_i'(beta_c + offset_c) + intercepts.
double marginal_objective(GlmFamily const &family, Matrix const &v, Matrix const &x, Vector const &y,
                          CoefficientMatrix const &coef, Vector const &lambda,
                          CoefficientMatrix const *offset = nullptr);

/// Joint-estimation EM over all studies (pooled working model).
JointEstimate joint_estimate(StudyCollection const &data, MembershipMatrix const &v, TransferConfig const &config,
                             GlmFamily const &family);

/// Correction EM on the target study with B_hat held fixed as an offset.
BiasCorrection bias_correct(Study const &target, Matrix const &v0, CoefficientMatrix const &pooled,
                            TransferConfig const &config, GlmFamily const &family);

/// LCA -> initial memberships -> joint estimation -> bias correction.
/// `lca` skips the mixture fit when supplied.
TransferFit fit_targeted_psm(StudyCollection const &data, Index classes, TransferConfig const &config,
                             GlmFamily const &family, LcaModel const *lca = nullptr);

/// Membership-weighted average of the class-wise mean predictions, using the
/// target study's mixing proportions for the membership posterior.
double predict_risk_one(TransferFit const &fit, Eigen::Ref<Vector const> x_new, Eigen::Ref<Vector const> z_new);
Vector predict_risk(TransferFit const &fit, Matrix const &x_new, Matrix const &z_new);

/// Cross-validated per-class lambda. Candidates are multiplier *
/// sqrt(log p / n_eff), n_eff being the total row count of `data` (all
/// studies for the pool stage, the target alone for the bias stage). Folds
/// are stratified within study. `offset` is required for the bias stage.
Vector auto_tune_lambda(StudyCollection const &data, MembershipMatrix const &v, GlmFamily const &family,
                        TuningStage stage, TransferConfig const &config, CoefficientMatrix const *offset = nullptr);

/// lambda scale sqrt(log p / n_eff).
double lambda_scale(Index p, Index n_eff);

} // namespace psm

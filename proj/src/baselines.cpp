#include "psm/baselines.hpp"

#include <stdexcept>

namespace psm {

std::string to_string(MethodId m)
{
  switch (m) {
  case MethodId::targeted_psm: return "targeted_psm";
  case MethodId::targeted_psm_1: return "targeted_psm_1";
  case MethodId::lca_glm: return "lca_glm";
  case MethodId::trans_glm: return "trans_glm";
  case MethodId::naive_lasso: return "naive_lasso";
  }
  return "unknown";
}

MethodId parse_method(std::string const &name)
{
  for (MethodId m : kAllMethods) {
    if (to_string(m) == name) { return m; }
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

bool has_subpopulations(MethodId m)
{
  return m == MethodId::targeted_psm || m == MethodId::targeted_psm_1 || m == MethodId::lca_glm;
}

namespace {

LcaModel trivial_lca(Index studies, Index q)
{
  LcaModel m;
  m.prevalences = Matrix::Constant(1, q, 0.5);
  m.mixing = Matrix::Ones(studies, 1);
  return m;
}

StudyCollection only_target(Study const &target)
{
  StudyCollection only;
  only.target = target;
  only.target.id = 0;
  only.p = target.x.cols();
  only.q = target.z.cols();
  return only;
}

} // namespace

CoefficientMatrix fit_naive_lasso(Study const &target, GlmFamily const &family, LambdaSpec const &lambda,
                                  TransferConfig const &config)
{
  StudyCollection const only = only_target(target);
  MembershipMatrix v;
  v.probs.push_back(Matrix::Ones(target.size(), 1));
  double const lam = lambda.is_auto() ? auto_tune_lambda(only, v, family, TuningStage::pool, config)[0]
                                      : lambda.resolve(1)[0];
  Vector const w = Vector::Ones(target.size());
  double const n = static_cast<double>(target.size());
  WeightedGlmProblem prob(family, target.x, target.y, w, lam * n / w.sum());
  prob.intercept = config.intercept;
  LassoSolution const sol = solve_weighted_lasso_glm(prob, config.solver);
  CoefficientMatrix out = CoefficientMatrix::zeros(target.x.cols(), 1, CoefficientRole::target_B0);
  out.values.col(0) = sol.beta;
  out.intercepts[0] = sol.intercept;
  return out;
}

TransferFit fit_lca_glm(Study const &target, Index classes, GlmFamily const &family, TransferConfig const &config)
{
  config.validate();
  StudyCollection const only = only_target(target);
  TransferFit fit;
  fit.family = family;
  fit.lca = fit_lca(only, classes, config.lca);
  fit.warnings = fit.lca.warnings;
  MembershipMatrix const v = initial_memberships(fit.lca, only);
  JointEstimate joint = joint_estimate(only, v, config, family);
  fit.pooled = std::move(joint.pooled);
  fit.correction = CoefficientMatrix::zeros(only.p, classes, CoefficientRole::correction_Delta);
  fit.target = {fit.pooled.values + fit.correction.values, fit.pooled.intercepts + fit.correction.intercepts,
                CoefficientRole::target_B0};
  fit.refined_weights = joint.weights;
  fit.target_weights = v.probs.front();
  fit.joint_trace = std::move(joint.trace);
  fit.lambda_pool = std::move(joint.lambda);
  fit.lambda_bias = Vector::Constant(classes, std::numeric_limits<double>::infinity());
  fit.warnings.insert(fit.warnings.end(), joint.warnings.begin(), joint.warnings.end());
  return fit;
}

TransferFit fit_trans_glm_full(StudyCollection const &data, GlmFamily const &family, TransferConfig const &config)
{
  if (data.num_sources() < 1) { throw std::invalid_argument("fit_trans_glm: at least one source study required"); }
  LcaModel const single = trivial_lca(data.num_studies(), data.q);
  return fit_targeted_psm(data, 1, config, family, &single);
}

CoefficientMatrix fit_trans_glm(StudyCollection const &data, GlmFamily const &family, TransferConfig const &config)
{
  return fit_trans_glm_full(data, family, config).target;
}

TransferFit single_class_fit(CoefficientMatrix const &coef, GlmFamily const &family, Index q)
{
  if (coef.classes() != 1) { throw std::invalid_argument("single_class_fit: expected one column"); }
  TransferFit fit;
  fit.family = family;
  fit.lca = trivial_lca(1, q);
  fit.pooled = coef;
  fit.pooled.role = CoefficientRole::pooled_B;
  fit.correction = CoefficientMatrix::zeros(coef.features(), 1, CoefficientRole::correction_Delta);
  fit.target = coef;
  fit.target.role = CoefficientRole::target_B0;
  return fit;
}

TransferFit fit_method(MethodId method, StudyCollection const &data, Index classes, GlmFamily const &family,
                       TransferConfig const &config, LcaModel const *lca)
{
  switch (method) {
  case MethodId::targeted_psm: return fit_targeted_psm(data, classes, config, family, lca);
  case MethodId::targeted_psm_1: {
    TransferConfig one = config;
    one.one_step = true;
    return fit_targeted_psm(data, classes, one, family, lca);
  }
  case MethodId::lca_glm: return fit_lca_glm(data.target, classes, family, config);
  case MethodId::trans_glm: return fit_trans_glm_full(data, family, config);
  case MethodId::naive_lasso:
    return single_class_fit(fit_naive_lasso(data.target, family, config.lambda_pool, config), family, data.q);
  }
  throw std::invalid_argument("fit_method: unknown method");
}

} // namespace psm

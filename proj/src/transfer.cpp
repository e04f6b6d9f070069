#include "psm/transfer.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "psm/rng.hpp"

namespace psm {

Vector LambdaSpec::resolve(Index classes) const
{
  if (!values) { throw std::logic_error("lambda is 'auto' and has not been tuned"); }
  Vector out;
  if (values->size() == 1) {
    out = Vector::Constant(classes, (*values)[0]);
  } else if (values->size() == classes) {
    out = *values;
  } else {
    throw std::invalid_argument("lambda vector length must be 1 or the class count");
  }
  for (Index c = 0; c < out.size(); ++c) {
    if (std::isnan(out[c]) || out[c] < 0.0) { throw std::invalid_argument("lambda must be >= 0"); }
  }
  return out;
}

Vector default_lambda_multipliers()
{
  return Vector::LinSpaced(10, std::log10(0.01), std::log10(10.0)).unaryExpr([](double e) {
    return std::pow(10.0, e);
  });
}

void TransferConfig::validate() const
{
  if (!(tau > 0.0)) { throw std::invalid_argument("tau must be > 0"); }
  if (max_iter < 1) { throw std::invalid_argument("max_iter must be >= 1"); }
  if ((lambda_pool.is_auto() || lambda_bias.is_auto()) && cv_folds < 2) {
    throw std::invalid_argument("cv_folds must be >= 2 when lambda is auto");
  }
  if (lambda_multipliers.size() < 1 || (lambda_multipliers.array() <= 0.0).any()) {
    throw std::invalid_argument("lambda multiplier grid must be non-empty and positive");
  }
}

double lambda_scale(Index p, Index n_eff)
{
  return std::sqrt(std::log(static_cast<double>(std::max<Index>(p, 2))) / static_cast<double>(n_eff));
}

namespace {

/// n x C linear predictors.
Matrix class_predictors(Matrix const &x, CoefficientMatrix const &coef, CoefficientMatrix const *offset)
{
  Matrix eta = x * coef.values;
  eta.rowwise() += coef.intercepts;
  if (offset != nullptr) {
    eta.noalias() += x * offset->values;
    eta.rowwise() += offset->intercepts;
  }
  return eta;
}

Matrix log_densities(GlmFamily const &family, Matrix const &eta, Vector const &y)
{
  Matrix out(eta.rows(), eta.cols());
  for (Index c = 0; c < eta.cols(); ++c) {
    for (Index i = 0; i < eta.rows(); ++i) { out(i, c) = glm_log_density(family, y[i], eta(i, c)); }
  }
  return out;
}

double l1_penalty(CoefficientMatrix const &coef, Vector const &lambda)
{
  double pen = 0.0;
  for (Index c = 0; c < coef.classes(); ++c) {
    double const norm = coef.values.col(c).lpNorm<1>();
    if (norm != 0.0) { pen += lambda[c] * norm; }
  }
  return pen;
}

double frobenius(CoefficientMatrix const &a)
{
  return std::sqrt(a.values.squaredNorm() + a.intercepts.squaredNorm());
}

double frobenius_diff(CoefficientMatrix const &a, CoefficientMatrix const &b)
{
  return std::sqrt((a.values - b.values).squaredNorm() + (a.intercepts - b.intercepts).squaredNorm());
}

/// ||next - prev|| / ||prev|| <= tau, or ||next|| <= tau when prev is zero.
bool converged(CoefficientMatrix const &prev, CoefficientMatrix const &next, double tau)
{
  double const denom = frobenius(prev);
  if (denom == 0.0) { return frobenius(next) <= tau; }
  return frobenius_diff(next, prev) / denom <= tau;
}

/// One penalised M-step: for each class, minimise
///   (1/n) sum_i w_ic L(y_i, eta_ic) + lambda_c |beta_c|_1,
/// i.e. the solver's W-normalised loss with penalty lambda_c * n / W_c.
/// Classes with infinite lambda and `zero_on_inf` are set to zero outright.
CoefficientMatrix m_step(GlmFamily const &family, Matrix const &x, Vector const &y, Matrix const &weights,
                         Vector const &lambda, CoefficientMatrix const *warm, Matrix const *offsets,
                         TransferConfig const &config, CoefficientRole role, bool zero_on_inf,
                         std::vector<std::string> &warnings, std::string const &context)
{
  Index const n = x.rows();
  Index const p = x.cols();
  Index const C = weights.cols();
  CoefficientMatrix out = warm ? *warm : CoefficientMatrix::zeros(p, C, role);
  out.role = role;
  for (Index c = 0; c < C; ++c) {
    if (zero_on_inf && std::isinf(lambda[c])) {
      out.values.col(c).setZero();
      out.intercepts[c] = 0.0;
      continue;
    }
    double const mass = weights.col(c).sum();
    if (mass < 10.0 * static_cast<double>(p) * kProbClip) {
      warnings.push_back(context + ": class " + std::to_string(c + 1) + " has negligible weight; coefficients frozen");
      continue;
    }
    WeightedGlmProblem prob(family, x, y, weights.col(c), lambda[c] * static_cast<double>(n) / mass);
    prob.intercept = config.intercept;
    if (offsets != nullptr) { prob.offset = offsets->col(c); }
    LassoSolution start;
    LassoSolution const *init = nullptr;
    if (warm != nullptr) {
      start.beta = warm->values.col(c);
      start.intercept = warm->intercepts[c];
      init = &start;
    }
    try {
      LassoSolution const sol = solve_weighted_lasso_glm(prob, config.solver, init);
      out.values.col(c) = sol.beta;
      out.intercepts[c] = sol.intercept;
    } catch (SolverFailure const &e) {
      throw SolverFailure(context + ", class " + std::to_string(c + 1) + ": " + e.what(), e.best());
    }
  }
  return out;
}

CoefficientMatrix add(CoefficientMatrix const &a, CoefficientMatrix const &b, CoefficientRole role)
{
  return {a.values + b.values, a.intercepts + b.intercepts, role};
}

} // namespace

Matrix refine_weights(GlmFamily const &family, Matrix const &v, Matrix const &x, Vector const &y,
                      CoefficientMatrix const &coef, CoefficientMatrix const *offset)
{
  if (v.rows() != x.rows() || v.cols() != coef.classes() || x.cols() != coef.features()) {
    throw std::invalid_argument("refine_weights: dimension mismatch");
  }
  Matrix const eta = class_predictors(x, coef, offset);
  Matrix logw = log_densities(family, eta, y);
  logw.array() += v.array().log();
  return normalise_log_rows(logw, true);
}

MembershipMatrix e_step_weights(GlmFamily const &family, MembershipMatrix const &v, CoefficientMatrix const &coef,
                                StudyCollection const &data, CoefficientMatrix const *offset)
{
  if (static_cast<Index>(v.probs.size()) != data.num_studies()) {
    throw std::invalid_argument("e_step_weights: membership blocks do not match study count");
  }
  MembershipMatrix out;
  out.stage = MembershipStage::refined_w;
  for (Index k = 0; k < data.num_studies(); ++k) {
    auto const &s = data.study(k);
    out.probs.push_back(refine_weights(family, v.probs[static_cast<std::size_t>(k)], s.x, s.y, coef, offset));
  }
  return out;
}

double marginal_objective(GlmFamily const &family, Matrix const &v, Matrix const &x, Vector const &y,
                          CoefficientMatrix const &coef, Vector const &lambda, CoefficientMatrix const *offset)
{
  Matrix const eta = class_predictors(x, coef, offset);
  Matrix logw = log_densities(family, eta, y);
  logw.array() += v.array().log();
  double nll = 0.0;
  for (Index i = 0; i < logw.rows(); ++i) {
    double const m = logw.row(i).maxCoeff();
    nll -= m + std::log((logw.row(i).array() - m).exp().sum());
  }
  // Only the coefficients being estimated are penalised.
  return family.dispersion * nll / static_cast<double>(x.rows()) + l1_penalty(coef, lambda);
}

JointEstimate joint_estimate(StudyCollection const &data, MembershipMatrix const &v, TransferConfig const &config,
                             GlmFamily const &family)
{
  config.validate();
  if (static_cast<Index>(v.probs.size()) != data.num_studies()) {
    throw std::invalid_argument("joint_estimate: memberships do not cover every study");
  }
  Index const C = v.classes();
  JointEstimate out;
  out.lambda = config.lambda_pool.is_auto()
                 ? auto_tune_lambda(data, v, family, TuningStage::pool, config)
                 : config.lambda_pool.resolve(C);

  StackedRows const rows = stack_studies(data);
  Matrix const prior = v.stacked();
  Matrix weights = prior;
  std::optional<CoefficientMatrix> current;
  int const M = config.iterations();
  for (int t = 1; t <= M; ++t) {
    if (t > 1) { weights = refine_weights(family, prior, rows.x, rows.y, *current); }
    CoefficientMatrix next =
      m_step(family, rows.x, rows.y, weights, out.lambda, current ? &*current : nullptr, nullptr, config,
             CoefficientRole::pooled_B, false, out.warnings, "joint estimation, iteration " + std::to_string(t));
    out.trace.objective.push_back(marginal_objective(family, prior, rows.x, rows.y, next, out.lambda));
    out.trace.iterations = t;
    bool const stop = current && converged(*current, next, config.tau);
    current = std::move(next);
    if (stop) {
      out.trace.converged = true;
      break;
    }
  }
  out.pooled = std::move(*current);

  out.weights.stage = M == 1 ? MembershipStage::initial_v : MembershipStage::refined_w;
  for (Index k = 0; k < data.num_studies(); ++k) {
    Index const start = rows.offsets[static_cast<std::size_t>(k)];
    out.weights.probs.push_back(weights.middleRows(start, data.study(k).size()));
  }
  return out;
}

BiasCorrection bias_correct(Study const &target, Matrix const &v0, CoefficientMatrix const &pooled,
                            TransferConfig const &config, GlmFamily const &family)
{
  config.validate();
  Index const C = pooled.classes();
  Index const p = pooled.features();
  if (v0.rows() != target.size() || v0.cols() != C || target.x.cols() != p) {
    throw std::invalid_argument("bias_correct: dimension mismatch");
  }
  BiasCorrection out;
  if (config.lambda_bias.is_auto()) {
    StudyCollection only;
    only.target = target;
    only.p = target.x.cols();
    only.q = target.z.cols();
    MembershipMatrix v;
    v.probs.push_back(v0);
    out.lambda = auto_tune_lambda(only, v, family, TuningStage::bias, config, &pooled);
  } else {
    out.lambda = config.lambda_bias.resolve(C);
  }

  Matrix offsets = target.x * pooled.values;
  offsets.rowwise() += pooled.intercepts;

  out.correction = CoefficientMatrix::zeros(p, C, CoefficientRole::correction_Delta);
  out.weights = v0;
  if (out.lambda.array().isInf().all()) { return out; }

  Matrix weights = v0;
  std::optional<CoefficientMatrix> current;
  int const M = config.iterations();
  for (int t = 1; t <= M; ++t) {
    if (t > 1) { weights = refine_weights(family, v0, target.x, target.y, pooled, &*current); }
    CoefficientMatrix next = m_step(family, target.x, target.y, weights, out.lambda, current ? &*current : nullptr,
                                    &offsets, config, CoefficientRole::correction_Delta, true, out.warnings,
                                    "bias correction, iteration " + std::to_string(t));
    out.trace.objective.push_back(
      marginal_objective(family, v0, target.x, target.y, next, out.lambda, &pooled));
    out.trace.iterations = t;
    bool const stop = current && converged(*current, next, config.tau);
    current = std::move(next);
    if (stop) {
      out.trace.converged = true;
      break;
    }
  }
  out.correction = std::move(*current);
  out.weights = std::move(weights);
  return out;
}

TransferFit fit_targeted_psm(StudyCollection const &data, Index classes, TransferConfig const &config,
                             GlmFamily const &family, LcaModel const *lca)
{
  config.validate();
  TransferFit fit;
  fit.family = family;
  if (lca != nullptr) {
    if (lca->classes() != classes || lca->studies() != data.num_studies() || lca->indicators() != data.q) {
      throw std::invalid_argument("fit_targeted_psm: supplied LCA model does not match the data");
    }
    fit.lca = *lca;
  } else {
    fit.lca = fit_lca(data, classes, config.lca);
  }
  fit.warnings = fit.lca.warnings;

  MembershipMatrix const v = initial_memberships(fit.lca, data);
  JointEstimate joint = joint_estimate(data, v, config, family);
  BiasCorrection bias = bias_correct(data.target, v.probs.front(), joint.pooled, config, family);

  fit.pooled = std::move(joint.pooled);
  fit.correction = std::move(bias.correction);
  fit.target = add(fit.pooled, fit.correction, CoefficientRole::target_B0);
  fit.refined_weights = std::move(joint.weights);
  fit.target_weights = std::move(bias.weights);
  fit.joint_trace = std::move(joint.trace);
  fit.bias_trace = std::move(bias.trace);
  fit.lambda_pool = std::move(joint.lambda);
  fit.lambda_bias = std::move(bias.lambda);
  fit.warnings.insert(fit.warnings.end(), joint.warnings.begin(), joint.warnings.end());
  fit.warnings.insert(fit.warnings.end(), bias.warnings.begin(), bias.warnings.end());
  return fit;
}

Vector predict_risk(TransferFit const &fit, Matrix const &x_new, Matrix const &z_new)
{
  if (x_new.cols() != fit.features() || z_new.cols() != fit.lca.indicators() || x_new.rows() != z_new.rows()) {
    throw std::invalid_argument("predict_risk: dimension mismatch");
  }
  Matrix const post = class_posterior(fit.lca.prevalences, fit.lca.mixing.row(0), z_new);
  Matrix eta = x_new * fit.target.values;
  eta.rowwise() += fit.target.intercepts;
  Vector out(x_new.rows());
  for (Index i = 0; i < x_new.rows(); ++i) {
    double r = 0.0;
    for (Index c = 0; c < eta.cols(); ++c) { r += post(i, c) * fit.family.mean(eta(i, c)); }
    out[i] = r;
  }
  return out;
}

double predict_risk_one(TransferFit const &fit, Eigen::Ref<Vector const> x_new, Eigen::Ref<Vector const> z_new)
{
  return predict_risk(fit, Matrix(x_new.transpose()), Matrix(z_new.transpose()))[0];
}

namespace {

/// Fold id per stacked row, stratified within study.
std::vector<int> assign_folds(StackedRows const &rows, int folds, Rng &rng)
{
  std::vector<int> fold(static_cast<std::size_t>(rows.y.size()));
  for (std::size_t k = 0; k + 1 < rows.offsets.size(); ++k) {
    std::vector<Index> idx(static_cast<std::size_t>(rows.offsets[k + 1] - rows.offsets[k]));
    std::iota(idx.begin(), idx.end(), rows.offsets[k]);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      fold[static_cast<std::size_t>(idx[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
    }
  }
  return fold;
}

bool single_valued(Vector const &y, std::vector<int> const &fold, int f, bool held_out)
{
  bool seen0 = false, seen1 = false;
  for (Index i = 0; i < y.size(); ++i) {
    if ((fold[static_cast<std::size_t>(i)] == f) != held_out) { continue; }
    (y[i] != 0.0 ? seen1 : seen0) = true;
  }
  return !(seen0 && seen1);
}

Matrix take_rows(Matrix const &m, std::vector<Index> const &idx)
{
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) { out.row(static_cast<Index>(i)) = m.row(idx[i]); }
  return out;
}

Vector take(Vector const &v, std::vector<Index> const &idx)
{
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) { out[static_cast<Index>(i)] = v[idx[i]]; }
  return out;
}

} // namespace

Vector auto_tune_lambda(StudyCollection const &data, MembershipMatrix const &v, GlmFamily const &family,
                        TuningStage stage, TransferConfig const &config, CoefficientMatrix const *offset)
{
  Index const C = v.classes();
  Index const n = data.total_size();
  double const scale = lambda_scale(data.p, n);
  Vector mult = config.lambda_multipliers;
  std::sort(mult.data(), mult.data() + mult.size(), std::greater<>());
  if (mult.size() == 1) { return Vector::Constant(C, mult[0] * scale); }
  if (stage == TuningStage::bias && offset == nullptr) {
    throw std::invalid_argument("auto_tune_lambda: bias stage requires the pooled estimate as offset");
  }
  if (config.cv_folds < 2) { throw std::invalid_argument("auto_tune_lambda: cv_folds must be >= 2"); }

  StackedRows const rows = stack_studies(data);
  Matrix const prior = v.stacked();
  Matrix offsets;
  if (stage == TuningStage::bias) {
    offsets = rows.x * offset->values;
    offsets.rowwise() += offset->intercepts;
  }

  std::vector<int> fold;
  int const folds = config.cv_folds;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 5) {
      throw std::runtime_error("auto_tune_lambda: could not form non-degenerate folds after 5 attempts");
    }
    Rng rng = make_stream(config.seed, "cv-folds", static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(attempt));
    fold = assign_folds(rows, folds, rng);
    bool ok = true;
    if (family.kind == FamilyKind::logistic) {
      for (int f = 0; f < folds && ok; ++f) {
        ok = !single_valued(rows.y, fold, f, true) && !single_valued(rows.y, fold, f, false);
      }
    }
    if (ok) { break; }
  }

  Index const G = mult.size();
  Matrix loss = Matrix::Zero(C, G);
  std::vector<std::string> ignored;
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) { (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i); }
    Matrix const x_tr = take_rows(rows.x, train);
    Vector const y_tr = take(rows.y, train);
    Matrix const x_te = take_rows(rows.x, test);
    Vector const y_te = take(rows.y, test);
    for (Index c = 0; c < C; ++c) {
      Vector const w_tr = take(prior.col(c), train);
      Vector const w_te = take(prior.col(c), test);
      double const mass = w_tr.sum();
      if (!(mass > 0.0)) { continue; }
      WeightedGlmProblem prob(family, x_tr, y_tr, w_tr);
      prob.intercept = config.intercept;
      Vector off_te;
      if (stage == TuningStage::bias) {
        prob.offset = take(offsets.col(c), train);
        off_te = take(offsets.col(c), test);
      }
      std::optional<LassoSolution> warm;
      for (Index g = 0; g < G; ++g) {
        prob.lambda = mult[g] * scale * static_cast<double>(train.size()) / mass;
        try {
          LassoSolution sol = solve_weighted_lasso_glm(prob, config.solver, warm ? &*warm : nullptr);
          Vector eta = x_te * sol.beta;
          eta.array() += sol.intercept;
          if (off_te.size()) { eta += off_te; }
          double l = 0.0;
          for (Index i = 0; i < eta.size(); ++i) { l += w_te[i] * neg_log_lik_glm(family, y_te[i], eta[i]); }
          loss(c, g) += l;
          warm = std::move(sol);
        } catch (SolverFailure const &) {
          loss(c, g) = std::numeric_limits<double>::infinity();
        }
      }
    }
  }

  Vector out(C);
  for (Index c = 0; c < C; ++c) {
    Index best = 0;
    for (Index g = 1; g < G; ++g) {
      if (loss(c, g) < loss(c, best)) { best = g; }
    }
    out[c] = mult[best] * scale;
  }
  return out;
}

} // namespace psm

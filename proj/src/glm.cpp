#include "psm/glm.hpp"

#include <algorithm>
#include <limits>

namespace psm {

void WeightedGlmProblem::validate() const
{
  Index const n = x.rows();
  if (y.size() != n || weights.size() != n) {
    throw std::invalid_argument("weighted GLM: y, X and weight lengths differ");
  }
  if (offset.size() != 0 && offset.size() != n) {
    throw std::invalid_argument("weighted GLM: offset length differs from row count");
  }
  if (penalize_mask.size() != 0 && penalize_mask.size() != x.cols()) {
    throw std::invalid_argument("weighted GLM: penalize mask length differs from feature count");
  }
  if (std::isnan(lambda) || lambda < 0.0) { throw std::invalid_argument("weighted GLM: lambda must be >= 0"); }
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    double const w = weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) { throw std::invalid_argument("weighted GLM: weights must be finite and >= 0"); }
    total += w;
  }
  if (!(total > 0.0)) { throw std::invalid_argument("weighted GLM: at least one weight must be positive"); }
}

Vector linear_predictor(WeightedGlmProblem const &prob, Vector const &beta, double intercept)
{
  Vector eta = prob.x * beta;
  eta.array() += intercept;
  if (prob.offset.size() != 0) { eta += prob.offset; }
  return eta;
}

namespace {

double weighted_loss(WeightedGlmProblem const &prob, Vector const &eta, double total_weight)
{
  double loss = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    double const w = prob.weights[i];
    if (w == 0.0) { continue; }
    loss += w * (-prob.y[i] * eta[i] + prob.family.log_partition(eta[i]));
  }
  return loss / total_weight;
}

double penalty(WeightedGlmProblem const &prob, Vector const &beta)
{
  double pen = 0.0;
  for (Index j = 0; j < beta.size(); ++j) {
    if (prob.penalized(j) && beta[j] != 0.0) { pen += prob.lambda * std::abs(beta[j]); }
  }
  return pen;
}

} // namespace

double glm_objective(WeightedGlmProblem const &prob, Vector const &beta, double intercept)
{
  Vector const eta = linear_predictor(prob, beta, intercept);
  return weighted_loss(prob, eta, prob.weights.sum()) + penalty(prob, beta);
}

GlmScore glm_score(WeightedGlmProblem const &prob, Vector const &beta, double intercept)
{
  Vector const eta = linear_predictor(prob, beta, intercept);
  Vector resid(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    resid[i] = prob.weights[i] * (prob.family.mean(eta[i]) - prob.y[i]);
  }
  double const W = prob.weights.sum();
  GlmScore s;
  s.slopes = prob.x.transpose() * resid / W;
  s.intercept = resid.sum() / W;
  return s;
}

double kkt_residual(WeightedGlmProblem const &prob, Vector const &beta, double intercept)
{
  GlmScore const s = glm_score(prob, beta, intercept);
  double worst = prob.intercept ? std::abs(s.intercept) : 0.0;
  for (Index j = 0; j < beta.size(); ++j) {
    double const a = std::abs(s.slopes[j]);
    double v;
    if (!prob.penalized(j)) {
      v = a;
    } else if (beta[j] != 0.0) {
      // stationarity: s_j = -lambda * sign(beta_j)
      v = std::abs(s.slopes[j] + prob.lambda * (beta[j] > 0.0 ? 1.0 : -1.0));
    } else {
      v = std::max(a - prob.lambda, 0.0);
    }
    worst = std::max(worst, v);
  }
  return worst;
}

namespace {

/// State of coordinate descent on the weighted quadratic
///   (1/2) sum_i u_i (r_i - delta eta_i)^2 + lambda |beta|_1
/// where ur = u .* r is kept up to date.
struct QuadraticCd
{
  WeightedGlmProblem const &prob;
  Matrix const &ux;     // u .* x_j per column
  Vector const &curv;   // a_j = sum_i u_i x_ij^2
  double curv0;         // sum_i u_i
  Vector const &scale;  // standardised-scale factor per feature
  Vector const &u;
  Vector &ur;
  Vector &beta;
  double &intercept;

  double update(Index j)
  {
    double const a = curv[j];
    if (!(a > 0.0)) { return 0.0; }
    double const g = prob.x.col(j).dot(ur);
    double const old = beta[j];
    double const z = a * old + g;
    double const next = prob.penalized(j) ? soft_threshold(z, prob.lambda) / a : z / a;
    double const delta = next - old;
    if (delta == 0.0) { return 0.0; }
    beta[j] = next;
    ur.noalias() -= delta * ux.col(j);
    return std::abs(delta) * scale[j];
  }

  double update_intercept()
  {
    if (!prob.intercept || !(curv0 > 0.0)) { return 0.0; }
    double const delta = ur.sum() / curv0;
    if (delta == 0.0) { return 0.0; }
    intercept += delta;
    ur.noalias() -= delta * u;
    return std::abs(delta);
  }

  double sweep(std::vector<Index> const &idx)
  {
    double change = update_intercept();
    for (Index j : idx) { change = std::max(change, update(j)); }
    return change;
  }

  /// Full sweep, then iterate on the active set, then confirm with a full
  /// sweep. Returns the number of sweeps used.
  int run(double tol, int max_sweeps)
  {
    Index const p = beta.size();
    std::vector<Index> all(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) { all[static_cast<std::size_t>(j)] = j; }
    int sweeps = 0;
    while (sweeps < max_sweeps) {
      double const full_change = sweep(all);
      ++sweeps;
      if (full_change < tol) { break; }
      std::vector<Index> active;
      for (Index j = 0; j < p; ++j) {
        if (beta[j] != 0.0 || !prob.penalized(j)) { active.push_back(j); }
      }
      while (sweeps < max_sweeps) {
        double const c = sweep(active);
        ++sweeps;
        if (c < tol) { break; }
      }
    }
    return sweeps;
  }
};

} // namespace

LassoSolution solve_weighted_lasso_glm(WeightedGlmProblem const &prob, SolverOptions const &opts,
                                       LassoSolution const *warm)
{
  prob.validate();
  Index const n = prob.rows();
  Index const p = prob.features();
  double const W = prob.weights.sum();
  Vector const wn = prob.weights / W;

  Vector scale(p);
  for (Index j = 0; j < p; ++j) {
    double const m = wn.dot(prob.x.col(j));
    double const v = wn.dot(prob.x.col(j).cwiseAbs2()) - m * m;
    scale[j] = v > 0.0 ? std::sqrt(v) : 1.0;
  }

  Vector beta = Vector::Zero(p);
  double b0 = 0.0;
  if (warm != nullptr) {
    if (warm->beta.size() != p) { throw std::invalid_argument("weighted GLM: warm start has wrong length"); }
    beta = warm->beta;
    b0 = prob.intercept ? warm->intercept : 0.0;
  } else if (prob.intercept) {
    double const off = prob.offset.size() ? wn.dot(prob.offset) : 0.0;
    double const ybar = wn.dot(prob.y);
    if (prob.family.kind == FamilyKind::logistic) {
      double const m = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
      b0 = std::log(m / (1.0 - m)) - off;
    } else {
      b0 = ybar - off;
    }
  }
  if (!prob.intercept) { b0 = 0.0; }
  if (std::isinf(prob.lambda)) {
    for (Index j = 0; j < p; ++j) {
      if (prob.penalized(j)) { beta[j] = 0.0; }
    }
  }

  LassoSolution sol;
  Vector eta = linear_predictor(prob, beta, b0);
  double obj = weighted_loss(prob, eta, W) + penalty(prob, beta);
  sol.objective_trace.push_back(obj);

  Vector h(n), u(n), ur(n);
  Matrix ux(n, p);
  Vector curv(p);
  double inner_tol = opts.tol_cd;
  int stalled = 0;
  int outer = 0;
  double kkt = std::numeric_limits<double>::infinity();

  for (outer = 1; outer <= opts.max_irls; ++outer) {
    for (Index i = 0; i < n; ++i) {
      h[i] = prob.family.kind == FamilyKind::gaussian
               ? 1.0
               : std::max(prob.family.variance(eta[i]), opts.min_working_weight);
      u[i] = wn[i] * h[i];
      // u * (working response - eta) = wn * (y - mu)
      ur[i] = wn[i] * (prob.y[i] - prob.family.mean(eta[i]));
    }
    ux.noalias() = u.asDiagonal() * prob.x;
    for (Index j = 0; j < p; ++j) { curv[j] = prob.x.col(j).dot(ux.col(j)); }

    Vector beta_new = beta;
    double b0_new = b0;
    QuadraticCd cd{prob, ux, curv, u.sum(), scale, u, ur, beta_new, b0_new};
    cd.run(inner_tol, opts.max_sweeps);

    // Backtrack on the exact objective.
    Vector const dir = beta_new - beta;
    double const dir0 = b0_new - b0;
    double step = 1.0;
    bool accepted = false;
    Vector cand_beta;
    double cand_b0 = 0.0, cand_obj = 0.0;
    Vector cand_eta;
    for (int ls = 0; ls < 40; ++ls) {
      cand_beta = beta + step * dir;
      cand_b0 = b0 + step * dir0;
      cand_eta = linear_predictor(prob, cand_beta, cand_b0);
      cand_obj = weighted_loss(prob, cand_eta, W) + penalty(prob, cand_beta);
      if (cand_obj <= obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }

    double change = 0.0;
    if (accepted) {
      for (Index j = 0; j < p; ++j) { change = std::max(change, std::abs(cand_beta[j] - beta[j]) * scale[j]); }
      change = std::max(change, std::abs(cand_b0 - b0));
      beta = std::move(cand_beta);
      b0 = cand_b0;
      eta = std::move(cand_eta);
      obj = cand_obj;
    }
    sol.objective_trace.push_back(obj);

    kkt = kkt_residual(prob, beta, b0);
    if (kkt <= opts.kkt_tol && (change < opts.tol_cd || !accepted)) { break; }
    if (!accepted || change < opts.tol_cd) {
      inner_tol = std::max(inner_tol * 0.1, 1e-15);
      if (++stalled >= 3 && !accepted) {
        sol.beta = beta;
        sol.intercept = b0;
        sol.objective = obj;
        sol.n_iters = outer;
        sol.kkt_max_violation = kkt;
        throw SolverFailure("weighted GLM: no descent for 3 consecutive IRLS steps (KKT residual " +
                              std::to_string(kkt) + ")",
                            sol);
      }
    } else {
      stalled = 0;
    }
  }

  sol.beta = beta;
  sol.intercept = b0;
  sol.objective = obj;
  sol.n_iters = std::min(outer, opts.max_irls);
  sol.kkt_max_violation = kkt;
  if (!(kkt <= opts.kkt_tol)) {
    throw SolverFailure("weighted GLM: KKT residual " + std::to_string(kkt) + " above tolerance after " +
                          std::to_string(opts.max_irls) + " IRLS steps",
                        sol);
  }
  return sol;
}

} // namespace psm

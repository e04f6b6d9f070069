#pragma once

// Reference implementations used only by tests. They share no code with the
// library beyond the Eigen types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Problem
{
  bool logistic = true;
  Mat x;
  Vec y;
  Vec w;
  Vec offset; // empty = none
  double lambda = 0.0;
  bool intercept = true;
};

inline double mean_fn(bool logistic, double eta)
{
  if (!logistic) { return eta; }
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

inline double partition(bool logistic, double eta)
{
  if (!logistic) { return 0.5 * eta * eta; }
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

/// theta = (intercept, beta)
inline Vec eta_of(Problem const &p, Vec const &theta)
{
  Vec eta = p.x * theta.tail(p.x.cols());
  eta.array() += theta[0];
  if (p.offset.size()) { eta += p.offset; }
  return eta;
}

inline double loss(Problem const &p, Vec const &theta)
{
  Vec const eta = eta_of(p, theta);
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) { s += p.w[i] * (-p.y[i] * eta[i] + partition(p.logistic, eta[i])); }
  return s / p.w.sum();
}

inline double objective(Problem const &p, Vec const &theta)
{
  return loss(p, theta) + p.lambda * theta.tail(p.x.cols()).lpNorm<1>();
}

inline Vec gradient(Problem const &p, Vec const &theta)
{
  Vec const eta = eta_of(p, theta);
  Vec r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) { r[i] = p.w[i] * (mean_fn(p.logistic, eta[i]) - p.y[i]); }
  r /= p.w.sum();
  Vec g(p.x.cols() + 1);
  g[0] = p.intercept ? r.sum() : 0.0;
  g.tail(p.x.cols()) = p.x.transpose() * r;
  return g;
}

/// Norm of the proximal-gradient mapping: zero exactly at the minimiser.
inline double prox_residual(Problem const &p, Vec const &theta)
{
  Vec const g = gradient(p, theta);
  double r = std::abs(g[0]);
  for (Eigen::Index j = 1; j < theta.size(); ++j) {
    if (theta[j] != 0.0) {
      r = std::max(r, std::abs(g[j] + p.lambda * (theta[j] > 0 ? 1.0 : -1.0)));
    } else {
      r = std::max(r, std::max(std::abs(g[j]) - p.lambda, 0.0));
    }
  }
  return r;
}

/// Accelerated proximal gradient with adaptive restart. Returns (intercept, beta).
inline Vec proximal_gradient(Problem const &p, int max_iter = 2000000)
{
  Eigen::Index const d = p.x.cols() + 1;
  Mat xa(p.x.rows(), d);
  xa.col(0).setOnes();
  xa.rightCols(p.x.cols()) = p.x;
  Mat const h = xa.transpose() * p.w.asDiagonal() * xa / p.w.sum();
  double const L = (p.logistic ? 0.25 : 1.0) * Eigen::SelfAdjointEigenSolver<Mat>(h).eigenvalues().maxCoeff();
  double const step = 1.0 / L;
  auto prox = [&](Vec v) {
    for (Eigen::Index j = 1; j < d; ++j) {
      double const a = std::abs(v[j]) - step * p.lambda;
      v[j] = a > 0 ? std::copysign(a, v[j]) : 0.0;
    }
    if (!p.intercept) { v[0] = 0.0; }
    return v;
  };
  Vec x = Vec::Zero(d), yk = x;
  double t = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    Vec const xn = prox(yk - step * gradient(p, yk));
    // restart when momentum points uphill
    if ((yk - xn).dot(xn - x) > 0) {
      t = 1.0;
      yk = x;
      continue;
    }
    double const tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    yk = xn + ((t - 1.0) / tn) * (xn - x);
    x = xn;
    t = tn;
    if (it % 25 == 0 && prox_residual(p, x) < 1e-13) { break; }
  }
  return x;
}

/// Weighted least squares with an intercept via the normal equations.
inline Vec weighted_least_squares(Mat const &x, Vec const &y, Vec const &w, bool intercept = true)
{
  Mat xa(x.rows(), x.cols() + (intercept ? 1 : 0));
  if (intercept) { xa.col(0).setOnes(); }
  xa.rightCols(x.cols()) = x;
  Mat const a = xa.transpose() * w.asDiagonal() * xa;
  Vec const b = xa.transpose() * w.asDiagonal() * y;
  Vec sol = a.ldlt().solve(b);
  if (intercept) { return sol; }
  Vec out(x.cols() + 1);
  out[0] = 0.0;
  out.tail(x.cols()) = sol;
  return out;
}

/// Best column permutation by enumerating every ordering.
inline std::vector<Eigen::Index> brute_force_alignment(Mat const &estimate, Mat const &truth, double *best_out = nullptr)
{
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(truth.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<Eigen::Index> best = perm;
  double best_d = std::numeric_limits<double>::infinity();
  do {
    double d = 0.0;
    for (Eigen::Index c = 0; c < truth.cols(); ++c) {
      d += (estimate.col(perm[static_cast<std::size_t>(c)]) - truth.col(c)).squaredNorm();
    }
    if (d < best_d) {
      best_d = d;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best_out) { *best_out = best_d; }
  return best;
}

/// O(n^2) pair counting AUC.
inline double pairwise_auc(Vec const &s, Vec const &y)
{
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) { continue; }
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) { continue; }
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

inline double central_difference(std::function<double(double)> const &f, double x, double h = 1e-6)
{
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Random weighted GLM problem, some weights exactly zero.
inline Problem random_problem(std::uint64_t seed, bool logistic, int n, int p, double lambda)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Problem pr;
  pr.logistic = logistic;
  pr.lambda = lambda;
  pr.x.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) { pr.x(i, j) = nd(rng) * (1.0 + 0.5 * j); }
  }
  Vec beta(p);
  for (int j = 0; j < p; ++j) { beta[j] = (j % 3 == 0) ? 0.4 * nd(rng) : 0.0; }
  pr.y.resize(n);
  pr.w.resize(n);
  for (int i = 0; i < n; ++i) {
    double const eta = 0.3 + pr.x.row(i).dot(beta);
    pr.y[i] = logistic ? (ud(rng) < mean_fn(true, eta) ? 1.0 : 0.0) : eta + nd(rng);
    pr.w[i] = ud(rng) < 0.1 ? 0.0 : 2.0 * ud(rng);
  }
  pr.w[0] = 1.0;
  return pr;
}

} // namespace oracle

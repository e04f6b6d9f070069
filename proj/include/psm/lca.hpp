#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psm/core.hpp"

namespace psm {

/// Latent class model with independent binary indicators. Prevalences are
/// shared across studies, mixing proportions are study-specific.
struct LcaModel
{
  Matrix prevalences; // C x q
  Matrix mixing;      // (K+1) x C, rows on the simplex
  double log_lik = 0.0;
  /// Log-likelihood after each EM iteration of the winning start.
  std::vector<double> trace;
  int iterations = 0;
  std::vector<std::string> warnings;

  Index classes() const { return prevalences.rows(); }
  Index indicators() const { return prevalences.cols(); }
  Index studies() const { return mixing.rows(); }
};

struct LcaFitConfig
{
  int n_starts = 10;
  double tol = 1e-7;    // relative log-likelihood change
  int max_iter = 500;
  std::uint64_t seed = 20240101;
};

/// f(z; pi_c) = prod_j pi_cj^z_j (1 - pi_cj)^(1 - z_j), evaluated in log space.
double lca_class_density(Eigen::Ref<Vector const> pi_c, Eigen::Ref<Vector const> z);

/// n x C matrix of log f(z_i; pi_c).
Matrix lca_log_densities(Matrix const &prevalences, Matrix const &z);

/// EM with random restarts; keeps the start with the highest final
/// log-likelihood. Classes are ordered by descending target mixing proportion.
LcaModel fit_lca(StudyCollection const &data, Index classes, LcaFitConfig const &config = {});

/// One EM step from `model` (unclipped posteriors, clipped parameters).
LcaModel lca_em_step(LcaModel const &model, StudyCollection const &data);

/// sum_k sum_i log sum_c lambda_kc f(z_ki; pi_c).
double lca_log_lik(LcaModel const &model, StudyCollection const &data);

/// Bayes posterior of class membership given z, per study, clipped.
MembershipMatrix initial_memberships(LcaModel const &model, StudyCollection const &data);

/// Posterior class probabilities for rows of z under one mixing row.
Matrix class_posterior(Matrix const &prevalences, Eigen::Ref<RowVector const> mixing_row, Matrix const &z,
                       bool clip = true);

/// Reorders classes (prevalence rows, mixing columns) by `order`.
LcaModel permute_classes(LcaModel const &model, std::vector<Index> const &order);

/// Number of free parameters: C*q + (K+1)*(C-1).
Index lca_parameter_count(LcaModel const &model);

} // namespace psm

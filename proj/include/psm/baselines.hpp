#pragma once

#include <array>
#include <string>

#include "psm/transfer.hpp"

namespace psm {

enum class MethodId
{
  targeted_psm,
  targeted_psm_1,
  lca_glm,
  trans_glm,
  naive_lasso
};

inline constexpr std::array<MethodId, 5> kAllMethods{MethodId::targeted_psm, MethodId::targeted_psm_1,
                                                     MethodId::lca_glm, MethodId::trans_glm,
                                                     MethodId::naive_lasso};

std::string to_string(MethodId m);
MethodId parse_method(std::string const &name);

/// Whether the method models subpopulations (and so has a coefficient MSE).
bool has_subpopulations(MethodId m);

/// Single lasso GLM on the target study, ignoring Z. `lambda` may be auto.
CoefficientMatrix fit_naive_lasso(Study const &target, GlmFamily const &family, LambdaSpec const &lambda,
                                  TransferConfig const &config = {});

/// LCA and the joint-estimation EM on the target study alone; no correction
/// stage, so target == pooled.
TransferFit fit_lca_glm(Study const &target, Index classes, GlmFamily const &family, TransferConfig const &config);

/// Pooled lasso over every study followed by a target-only correction,
/// without subpopulations (C = 1) and without source selection. The full
/// fit is returned so the same prediction path can be used.
TransferFit fit_trans_glm_full(StudyCollection const &data, GlmFamily const &family, TransferConfig const &config);

/// Single-column target coefficients of fit_trans_glm_full.
CoefficientMatrix fit_trans_glm(StudyCollection const &data, GlmFamily const &family, TransferConfig const &config);

/// Wraps single-class coefficients in a TransferFit so predict_risk applies.
TransferFit single_class_fit(CoefficientMatrix const &coef, GlmFamily const &family, Index q);

/// Dispatch on method id. The one-step variant forces M = 1.
TransferFit fit_method(MethodId method, StudyCollection const &data, Index classes, GlmFamily const &family,
                       TransferConfig const &config, LcaModel const *lca = nullptr);

} // namespace psm

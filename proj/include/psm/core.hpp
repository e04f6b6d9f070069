#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace psm {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Probabilities (memberships, prevalences, mixing proportions) are kept in
/// [kProbClip, 1 - kProbClip].
inline constexpr double kProbClip = 1e-6;

/// Linear predictors are clamped to this magnitude before exponentiation.
inline constexpr double kEtaClamp = 700.0;

// ---------------------------------------------------------------------------
// Scalar kernels of the canonical-link families.

template <typename Scalar>
Scalar clamp_eta(Scalar eta)
{
  return std::min(std::max(eta, Scalar(-kEtaClamp)), Scalar(kEtaClamp));
}

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar log1p_exp(Scalar x)
{
  x = clamp_eta(x);
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// 1 / (1 + exp(-x)) without overflow.
template <typename Scalar>
Scalar logistic_mean(Scalar x)
{
  x = clamp_eta(x);
  if (x >= Scalar(0)) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }
  Scalar const e = std::exp(x);
  return e / (Scalar(1) + e);
}

enum class FamilyKind
{
  gaussian,
  logistic
};

/// Canonical-link exponential family with known dispersion.
///
/// log_partition is g, mean is g', variance is g''. Only the gaussian family
/// accepts a dispersion other than 1.
struct GlmFamily
{
  FamilyKind kind = FamilyKind::logistic;
  double dispersion = 1.0;

  static GlmFamily gaussian(double dispersion = 1.0);
  static GlmFamily logistic() { return {FamilyKind::logistic, 1.0}; }

  template <typename Scalar>
  Scalar log_partition(Scalar eta) const
  {
    return kind == FamilyKind::logistic ? log1p_exp(eta) : Scalar(0.5) * eta * eta;
  }

  template <typename Scalar>
  Scalar mean(Scalar eta) const
  {
    return kind == FamilyKind::logistic ? logistic_mean(eta) : eta;
  }

  template <typename Scalar>
  Scalar variance(Scalar eta) const
  {
    if (kind == FamilyKind::gaussian) { return Scalar(1); }
    Scalar const mu = logistic_mean(eta);
    return mu * (Scalar(1) - mu);
  }

  std::string name() const { return kind == FamilyKind::logistic ? "logistic" : "gaussian"; }
  static GlmFamily parse(std::string const &name);
};

/// -y * eta + g(eta). Constants in y are dropped consistently everywhere.
double neg_log_lik_glm(GlmFamily const &family, double y, double eta);

/// Log of the outcome density given the linear predictor. Exact Bernoulli log
/// probability for logistic, full normal log density for gaussian.
double glm_log_density(GlmFamily const &family, double y, double eta);

/// exp(glm_log_density), floored away from zero.
double glm_density(GlmFamily const &family, double y, double eta);

// ---------------------------------------------------------------------------
// Data containers.

struct Study
{
  Vector y;
  Matrix x;
  Matrix z;
  int id = 0;

  Index size() const { return y.size(); }
};

/// Throws std::invalid_argument on inconsistent row counts, non-binary Z, or
/// non-binary logistic outcomes.
void validate_study(Study const &study, GlmFamily const &family);

/// Target study (id 0) plus K source studies sharing p and q.
struct StudyCollection
{
  Study target;
  std::vector<Study> sources;
  Index p = 0;
  Index q = 0;

  Index num_sources() const { return static_cast<Index>(sources.size()); }
  Index num_studies() const { return num_sources() + 1; }
  Study const &study(Index k) const { return k == 0 ? target : sources[static_cast<std::size_t>(k - 1)]; }
  Index total_size() const;
};

/// Assigns study ids 0..K and validates shared dimensions.
StudyCollection make_collection(Study target, std::vector<Study> sources, GlmFamily const &family);

/// Target-only collection (K = 0).
StudyCollection target_only(StudyCollection const &data);

/// All rows of all studies stacked in study order (target first).
struct StackedRows
{
  Matrix x;
  Vector y;
  Matrix z;
  std::vector<Index> offsets; // start row of each study, plus total at the end
};

StackedRows stack_studies(StudyCollection const &data);

enum class CoefficientRole
{
  pooled_B,
  target_B0,
  correction_Delta,
  per_study_Bk
};

/// p x C slopes plus one intercept per class (zero when no intercept is fit).
struct CoefficientMatrix
{
  Matrix values;
  RowVector intercepts;
  CoefficientRole role = CoefficientRole::pooled_B;

  Index features() const { return values.rows(); }
  Index classes() const { return values.cols(); }
  static CoefficientMatrix zeros(Index p, Index classes, CoefficientRole role);
  bool all_finite() const { return values.allFinite() && intercepts.allFinite(); }
};

enum class MembershipStage
{
  initial_v,
  refined_w
};

/// Per-study n_k x C row-stochastic class probabilities.
struct MembershipMatrix
{
  std::vector<Matrix> probs;
  MembershipStage stage = MembershipStage::initial_v;

  Index classes() const { return probs.empty() ? 0 : probs.front().cols(); }
  Matrix stacked() const;
};

/// Clips every row to [kProbClip, 1 - kProbClip] and renormalises so the row
/// sums to one. Rows with a single column are set to 1.
void clip_rows(Eigen::Ref<Matrix> probs);

/// Softmax of each row of log-weights followed by clip_rows.
Matrix normalise_log_rows(Matrix const &log_weights, bool clip = true);

} // namespace psm

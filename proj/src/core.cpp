#include "psm/core.hpp"

#include <algorithm>
#include <vector>
#include <numbers>

namespace psm {

GlmFamily GlmFamily::gaussian(double dispersion)
{
  if (!(dispersion > 0.0) || !std::isfinite(dispersion)) {
    throw std::invalid_argument("gaussian dispersion must be positive and finite");
  }
  return {FamilyKind::gaussian, dispersion};
}

GlmFamily GlmFamily::parse(std::string const &name)
{
  if (name == "logistic" || name == "binomial") { return logistic(); }
  if (name == "gaussian") { return gaussian(); }
  throw std::invalid_argument("unknown family '" + name + "'");
}

double neg_log_lik_glm(GlmFamily const &family, double y, double eta)
{
  if (!std::isfinite(eta)) { throw std::domain_error("neg_log_lik_glm: non-finite linear predictor"); }
  return -y * eta + family.log_partition(eta);
}

double glm_log_density(GlmFamily const &family, double y, double eta)
{
  if (!std::isfinite(eta)) { throw std::domain_error("glm_log_density: non-finite linear predictor"); }
  if (family.kind == FamilyKind::logistic) {
    // log P(y | eta) = y * eta - log(1 + exp(eta))
    return y * clamp_eta(eta) - log1p_exp(eta);
  }
  double const phi = family.dispersion;
  double const r = y - eta;
  return -0.5 * r * r / phi - 0.5 * std::log(2.0 * std::numbers::pi * phi);
}

double glm_density(GlmFamily const &family, double y, double eta)
{
  return std::max(std::exp(glm_log_density(family, y, eta)), std::numeric_limits<double>::min());
}

void validate_study(Study const &study, GlmFamily const &family)
{
  Index const n = study.y.size();
  if (n < 1) { throw std::invalid_argument("study " + std::to_string(study.id) + ": no observations"); }
  if (study.x.rows() != n || study.z.rows() != n) {
    throw std::invalid_argument("study " + std::to_string(study.id) + ": y, X and Z row counts differ");
  }
  if (!study.x.allFinite() || !study.y.allFinite()) {
    throw std::invalid_argument("study " + std::to_string(study.id) + ": non-finite values in y or X");
  }
  for (Index i = 0; i < study.z.size(); ++i) {
    double const v = study.z.data()[i];
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("study " + std::to_string(study.id) + ": Z entries must be 0 or 1");
    }
  }
  if (family.kind == FamilyKind::logistic) {
    for (Index i = 0; i < n; ++i) {
      if (study.y[i] != 0.0 && study.y[i] != 1.0) {
        throw std::invalid_argument("study " + std::to_string(study.id) + ": logistic outcomes must be 0 or 1");
      }
    }
  }
}

Index StudyCollection::total_size() const
{
  Index n = target.size();
  for (auto const &s : sources) { n += s.size(); }
  return n;
}

StudyCollection make_collection(Study target, std::vector<Study> sources, GlmFamily const &family)
{
  StudyCollection out;
  out.p = target.x.cols();
  out.q = target.z.cols();
  target.id = 0;
  validate_study(target, family);
  int id = 1;
  for (auto &s : sources) {
    s.id = id++;
    validate_study(s, family);
    if (s.x.cols() != out.p || s.z.cols() != out.q) {
      throw std::invalid_argument("study " + std::to_string(s.id) + ": p or q differs from the target study");
    }
  }
  out.target = std::move(target);
  out.sources = std::move(sources);
  return out;
}

StudyCollection target_only(StudyCollection const &data)
{
  StudyCollection out;
  out.target = data.target;
  out.p = data.p;
  out.q = data.q;
  return out;
}

StackedRows stack_studies(StudyCollection const &data)
{
  Index const n = data.total_size();
  StackedRows rows;
  rows.x.resize(n, data.p);
  rows.y.resize(n);
  rows.z.resize(n, data.q);
  Index at = 0;
  for (Index k = 0; k < data.num_studies(); ++k) {
    auto const &s = data.study(k);
    rows.offsets.push_back(at);
    rows.x.middleRows(at, s.size()) = s.x;
    rows.y.segment(at, s.size()) = s.y;
    rows.z.middleRows(at, s.size()) = s.z;
    at += s.size();
  }
  rows.offsets.push_back(at);
  return rows;
}

CoefficientMatrix CoefficientMatrix::zeros(Index p, Index classes, CoefficientRole role)
{
  return {Matrix::Zero(p, classes), RowVector::Zero(classes), role};
}

Matrix MembershipMatrix::stacked() const
{
  Index n = 0;
  for (auto const &m : probs) { n += m.rows(); }
  Matrix out(n, classes());
  Index at = 0;
  for (auto const &m : probs) {
    out.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return out;
}

namespace {

void clip_row(Eigen::Ref<RowVector> row)
{
  Index const C = row.size();
  if (C == 1) {
    row(0) = 1.0;
    return;
  }
  // Floor every entry at kProbClip and rescale the rest; with all entries at
  // least kProbClip none can exceed 1 - kProbClip.
  double const lo = kProbClip;
  RowVector const orig = row.cwiseMax(0.0);
  std::vector<bool> pinned(static_cast<std::size_t>(C), false);
  RowVector out = orig;
  for (Index pass = 0; pass <= C; ++pass) {
    double fixed_mass = 0.0, free_mass = 0.0;
    Index n_free = 0;
    for (Index c = 0; c < C; ++c) {
      if (pinned[static_cast<std::size_t>(c)]) {
        fixed_mass += lo;
      } else {
        free_mass += orig(c);
        ++n_free;
      }
    }
    for (Index c = 0; c < C; ++c) {
      if (pinned[static_cast<std::size_t>(c)]) {
        out(c) = lo;
      } else if (free_mass > 0.0) {
        out(c) = orig(c) * (1.0 - fixed_mass) / free_mass;
      } else {
        out(c) = (1.0 - fixed_mass) / static_cast<double>(n_free);
      }
    }
    bool changed = false;
    for (Index c = 0; c < C; ++c) {
      if (!pinned[static_cast<std::size_t>(c)] && out(c) < lo) {
        pinned[static_cast<std::size_t>(c)] = true;
        changed = true;
      }
    }
    if (!changed) { break; }
  }
  row = out;
}

} // namespace

void clip_rows(Eigen::Ref<Matrix> probs)
{
  for (Index i = 0; i < probs.rows(); ++i) {
    RowVector r = probs.row(i);
    clip_row(r);
    probs.row(i) = r;
  }
}

Matrix normalise_log_rows(Matrix const &log_weights, bool clip)
{
  Matrix out(log_weights.rows(), log_weights.cols());
  for (Index i = 0; i < log_weights.rows(); ++i) {
    double const m = log_weights.row(i).maxCoeff();
    out.row(i) = (log_weights.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  if (clip) { clip_rows(out); }
  return out;
}

} // namespace psm

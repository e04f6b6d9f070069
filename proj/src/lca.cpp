#include "psm/lca.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace psm {

double lca_class_density(Eigen::Ref<Vector const> pi_c, Eigen::Ref<Vector const> z)
{
  if (pi_c.size() != z.size()) { throw std::invalid_argument("lca_class_density: length mismatch"); }
  double log_f = 0.0;
  for (Index j = 0; j < pi_c.size(); ++j) {
    double const pi = pi_c[j];
    if (!(pi > 0.0 && pi < 1.0)) { throw std::domain_error("lca_class_density: prevalence outside (0,1)"); }
    log_f += z[j] != 0.0 ? std::log(pi) : std::log1p(-pi);
  }
  return std::exp(log_f);
}

Matrix lca_log_densities(Matrix const &prevalences, Matrix const &z)
{
  Matrix const log_pi = prevalences.array().log().matrix().transpose();       // q x C
  Matrix const log_1mpi = (-prevalences.array()).log1p().matrix().transpose(); // q x C
  Matrix out = z * log_pi;
  out.noalias() += (1.0 - z.array()).matrix() * log_1mpi;
  return out;
}

namespace {

void check_dims(LcaModel const &model, StudyCollection const &data)
{
  if (model.studies() != data.num_studies() || model.indicators() != data.q ||
      model.mixing.cols() != model.classes()) {
    throw std::invalid_argument("LCA model dimensions do not match the data");
  }
}

/// Terms are summed in sorted order so relabelling classes gives the same bits.
double log_sum_exp_row(Eigen::Ref<RowVector const> r)
{
  std::vector<double> v(r.data(), r.data() + r.size());
  std::sort(v.begin(), v.end());
  double const m = v.back();
  double s = 0.0;
  for (double x : v) { s += std::exp(x - m); }
  return m + std::log(s);
}

/// Log joint (log lambda_kc + log f) for every row of study k.
Matrix log_joint(LcaModel const &model, Study const &s, Index k)
{
  Matrix lj = lca_log_densities(model.prevalences, s.z);
  RowVector const log_mix = model.mixing.row(k).array().log().matrix();
  lj.rowwise() += log_mix;
  return lj;
}

/// Clip prevalences to the probability box.
void clip_prevalences(Matrix &pi)
{
  pi = pi.cwiseMax(kProbClip).cwiseMin(1.0 - kProbClip);
}

struct EmStep
{
  LcaModel next;
  double log_lik; // at the input parameters
};

EmStep em_step(LcaModel const &model, StudyCollection const &data)
{
  Index const C = model.classes();
  Index const q = model.indicators();
  Matrix weighted_z = Matrix::Zero(C, q);
  RowVector mass = RowVector::Zero(C);
  LcaModel next = model;
  double ll = 0.0;
  for (Index k = 0; k < data.num_studies(); ++k) {
    Study const &s = data.study(k);
    Matrix const lj = log_joint(model, s, k);
    Matrix post(lj.rows(), C);
    for (Index i = 0; i < lj.rows(); ++i) {
      double const lse = log_sum_exp_row(lj.row(i));
      ll += lse;
      post.row(i) = (lj.row(i).array() - lse).exp().matrix();
    }
    RowVector const col_mass = post.colwise().sum();
    mass += col_mass;
    weighted_z.noalias() += post.transpose() * s.z;
    RowVector mix = col_mass / static_cast<double>(s.size());
    clip_rows(mix);
    next.mixing.row(k) = mix;
  }
  for (Index c = 0; c < C; ++c) {
    next.prevalences.row(c) = mass(c) > 0.0 ? RowVector(weighted_z.row(c) / mass(c))
                                            : RowVector::Constant(q, 0.5);
  }
  clip_prevalences(next.prevalences);
  return {std::move(next), ll};
}

LcaModel run_start(StudyCollection const &data, Index C, LcaFitConfig const &config, int start)
{
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    0x1ca1u, static_cast<std::uint32_t>(start)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unif(0.2, 0.8);
  std::gamma_distribution<double> gamma(1.0, 1.0);

  LcaModel m;
  m.prevalences.resize(C, data.q);
  for (Index c = 0; c < C; ++c) {
    for (Index j = 0; j < data.q; ++j) { m.prevalences(c, j) = unif(rng); }
  }
  m.mixing.resize(data.num_studies(), C);
  for (Index k = 0; k < data.num_studies(); ++k) {
    for (Index c = 0; c < C; ++c) { m.mixing(k, c) = gamma(rng); }
    m.mixing.row(k) /= m.mixing.row(k).sum();
    RowVector r = m.mixing.row(k);
    clip_rows(r);
    m.mixing.row(k) = r;
  }

  double prev = 0.0;
  for (int it = 0; it < config.max_iter; ++it) {
    EmStep step = em_step(m, data);
    m.trace.push_back(step.log_lik);
    m.iterations = it;
    if (it > 0 && std::abs(step.log_lik - prev) <= config.tol * std::abs(prev)) { break; }
    prev = step.log_lik;
    std::vector<double> trace = std::move(m.trace);
    m = std::move(step.next);
    m.trace = std::move(trace);
    m.iterations = it + 1;
  }
  m.log_lik = lca_log_lik(m, data);
  if (m.trace.empty() || m.trace.back() != m.log_lik) { m.trace.push_back(m.log_lik); }
  return m;
}

} // namespace

LcaModel lca_em_step(LcaModel const &model, StudyCollection const &data)
{
  check_dims(model, data);
  LcaModel next = em_step(model, data).next;
  next.log_lik = lca_log_lik(next, data);
  return next;
}

double lca_log_lik(LcaModel const &model, StudyCollection const &data)
{
  check_dims(model, data);
  double ll = 0.0;
  for (Index k = 0; k < data.num_studies(); ++k) {
    Matrix const lj = log_joint(model, data.study(k), k);
    for (Index i = 0; i < lj.rows(); ++i) { ll += log_sum_exp_row(lj.row(i)); }
  }
  return ll;
}

LcaModel permute_classes(LcaModel const &model, std::vector<Index> const &order)
{
  LcaModel out = model;
  for (std::size_t c = 0; c < order.size(); ++c) {
    out.prevalences.row(static_cast<Index>(c)) = model.prevalences.row(order[c]);
    out.mixing.col(static_cast<Index>(c)) = model.mixing.col(order[c]);
  }
  return out;
}

LcaModel fit_lca(StudyCollection const &data, Index classes, LcaFitConfig const &config)
{
  if (classes < 1) { throw std::invalid_argument("fit_lca: class count must be >= 1"); }
  if (classes > data.total_size()) {
    throw std::invalid_argument("fit_lca: class count exceeds total sample size");
  }
  if (config.n_starts < 1 || config.max_iter < 1 || !(config.tol > 0.0)) {
    throw std::invalid_argument("fit_lca: n_starts, max_iter and tol must be positive");
  }
  std::vector<std::string> warnings;
  if (data.q < 63 && static_cast<double>(classes) > std::ldexp(1.0, static_cast<int>(data.q))) {
    warnings.push_back("class count exceeds 2^q; latent classes are not identifiable");
  }

  LcaModel best;
  bool have = false;
  for (int s = 0; s < config.n_starts; ++s) {
    LcaModel m = run_start(data, classes, config, s);
    if (!have || m.log_lik > best.log_lik) {
      best = std::move(m);
      have = true;
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(classes));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return best.mixing(0, a) > best.mixing(0, b); });
  LcaModel out = permute_classes(best, order);
  out.warnings = std::move(warnings);
  return out;
}

Matrix class_posterior(Matrix const &prevalences, Eigen::Ref<RowVector const> mixing_row, Matrix const &z, bool clip)
{
  Matrix lj = lca_log_densities(prevalences, z);
  RowVector const log_mix = mixing_row.array().log().matrix();
  lj.rowwise() += log_mix;
  return normalise_log_rows(lj, clip);
}

MembershipMatrix initial_memberships(LcaModel const &model, StudyCollection const &data)
{
  check_dims(model, data);
  MembershipMatrix out;
  out.stage = MembershipStage::initial_v;
  for (Index k = 0; k < data.num_studies(); ++k) {
    out.probs.push_back(class_posterior(model.prevalences, model.mixing.row(k), data.study(k).z));
  }
  return out;
}

Index lca_parameter_count(LcaModel const &model)
{
  return model.classes() * model.indicators() + model.studies() * (model.classes() - 1);
}

} // namespace psm

#include "psm/simulate.hpp"

#include <random>
#include <stdexcept>

#include "psm/rng.hpp"

namespace psm {

std::string to_string(PrevalencePreset p)
{
  switch (p) {
  case PrevalencePreset::well_separated: return "well_separated";
  case PrevalencePreset::less_separated: return "less_separated";
  case PrevalencePreset::custom: return "custom";
  }
  return "custom";
}

std::string to_string(MixingPreset m)
{
  switch (m) {
  case MixingPreset::small_diff: return "small_diff";
  case MixingPreset::large_diff: return "large_diff";
  case MixingPreset::custom: return "custom";
  }
  return "custom";
}

PrevalencePreset parse_prevalence_preset(std::string const &s)
{
  if (s == "well_separated") { return PrevalencePreset::well_separated; }
  if (s == "less_separated") { return PrevalencePreset::less_separated; }
  if (s == "custom") { return PrevalencePreset::custom; }
  throw std::invalid_argument("unknown prevalence preset '" + s + "'");
}

MixingPreset parse_mixing_preset(std::string const &s)
{
  if (s == "small_diff") { return MixingPreset::small_diff; }
  if (s == "large_diff") { return MixingPreset::large_diff; }
  if (s == "custom") { return MixingPreset::custom; }
  throw std::invalid_argument("unknown mixing preset '" + s + "'");
}

Matrix preset_prevalences(PrevalencePreset kind)
{
  // rows = classes, columns = indicators
  Matrix pi(3, 5);
  pi << 0.1, 0.5, 0.9, 0.1, 0.5,
        0.9, 0.1, 0.5, 0.9, 0.1,
        0.5, 0.9, 0.1, 0.5, 0.9;
  switch (kind) {
  case PrevalencePreset::well_separated: return pi;
  case PrevalencePreset::less_separated:
    return pi.unaryExpr([](double v) { return v == 0.1 ? 0.3 : v == 0.9 ? 0.7 : v; });
  case PrevalencePreset::custom: break;
  }
  throw std::invalid_argument("preset_prevalences: custom prevalences have no preset");
}

Matrix preset_mixing(MixingPreset kind, Index K)
{
  if (K < 0 || K > 10) { throw std::invalid_argument("preset_mixing: presets cover at most 10 source studies"); }
  Matrix table(11, 3);
  if (kind == MixingPreset::small_diff) {
    table << 0.50, 0.30, 0.20,
             0.45, 0.35, 0.20,
             0.55, 0.25, 0.20,
             0.45, 0.20, 0.35,
             0.55, 0.20, 0.25,
             0.50, 0.20, 0.30,
             0.45, 0.35, 0.20,
             0.55, 0.25, 0.20,
             0.45, 0.20, 0.35,
             0.55, 0.20, 0.25,
             0.50, 0.20, 0.30;
  } else if (kind == MixingPreset::large_diff) {
    table << 0.80, 0.10, 0.10,
             0.10, 0.10, 0.80,
             0.11, 0.09, 0.80,
             0.09, 0.11, 0.80,
             0.10, 0.11, 0.79,
             0.11, 0.10, 0.79,
             0.12, 0.10, 0.78,
             0.10, 0.12, 0.78,
             0.09, 0.10, 0.81,
             0.10, 0.09, 0.81,
             0.09, 0.09, 0.82;
  } else {
    throw std::invalid_argument("preset_mixing: custom mixing has no preset");
  }
  return table.topRows(K + 1);
}

Matrix scenario_prevalences(ScenarioConfig const &config)
{
  return config.prevalence == PrevalencePreset::custom ? config.custom_prevalences
                                                        : preset_prevalences(config.prevalence);
}

Matrix scenario_mixing(ScenarioConfig const &config)
{
  return config.mixing == MixingPreset::custom ? config.custom_mixing : preset_mixing(config.mixing, config.K);
}

void ScenarioConfig::validate() const
{
  auto fail = [](std::string const &field, std::string const &msg) {
    throw std::invalid_argument("scenario." + field + ": " + msg);
  };
  if (n0 < 1) { fail("n0", "must be >= 1"); }
  if (K < 0) { fail("K", "must be >= 0"); }
  if (K > 0 && n_source < 1) { fail("n_source", "must be >= 1"); }
  if (p < 1) { fail("p", "must be >= 1"); }
  if (q < 1) { fail("q", "must be >= 1"); }
  if (C < 1) { fail("C", "must be >= 1"); }
  if (!(rho >= 0.0 && rho < 1.0)) { fail("rho", "must be in [0, 1)"); }
  if (!(h >= 0.0) || !std::isfinite(h)) { fail("h", "must be finite and >= 0"); }
  if (!std::isfinite(coef_value)) { fail("coef_value", "must be finite"); }
  if (static_cast<Index>(support.size()) != C) { fail("support", "needs one support size per class"); }
  for (Index s : support) {
    if (s < 0 || s > p) { fail("support", "entries must be in [0, p]"); }
  }
  if (prevalence == PrevalencePreset::custom) {
    if (custom_prevalences.rows() != C || custom_prevalences.cols() != q) { fail("prevalence", "must be C x q"); }
    if ((custom_prevalences.array() <= 0.0).any() || (custom_prevalences.array() >= 1.0).any()) {
      fail("prevalence", "entries must be in (0, 1)");
    }
  } else if (C != 3 || q != 5) {
    fail("prevalence", "presets require C = 3 and q = 5");
  }
  if (mixing == MixingPreset::custom) {
    if (custom_mixing.rows() != K + 1 || custom_mixing.cols() != C) { fail("mixing", "must be (K+1) x C"); }
    for (Index k = 0; k <= K; ++k) {
      if ((custom_mixing.row(k).array() < 0.0).any() || std::abs(custom_mixing.row(k).sum() - 1.0) > 1e-9) {
        fail("mixing", "rows must lie on the simplex");
      }
    }
  } else {
    if (C != 3) { fail("mixing", "presets require C = 3"); }
    if (K > 10) { fail("K", "mixing presets cover at most 10 source studies"); }
  }
}

ScenarioConfig ScenarioConfig::figure1_mini(Index K)
{
  ScenarioConfig c;
  c.n0 = 500;
  c.n_source = 400;
  c.p = 50;
  c.K = K;
  return c;
}

ScenarioConfig ScenarioConfig::figure1_full(Index K)
{
  ScenarioConfig c;
  c.K = K;
  return c;
}

std::vector<CoefficientMatrix> make_coefficients(ScenarioConfig const &config)
{
  config.validate();
  CoefficientMatrix b0 = CoefficientMatrix::zeros(config.p, config.C, CoefficientRole::target_B0);
  for (Index c = 0; c < config.C; ++c) {
    b0.values.col(c).head(config.support[static_cast<std::size_t>(c)]).setConstant(config.coef_value);
  }
  std::vector<CoefficientMatrix> out{b0};
  double const step = config.h / static_cast<double>(config.p);
  for (Index k = 1; k <= config.K; ++k) {
    Rng rng = make_stream(config.seed, "signs", static_cast<std::uint64_t>(k));
    std::bernoulli_distribution coin(0.5);
    CoefficientMatrix bk = b0;
    bk.role = CoefficientRole::per_study_Bk;
    for (Index c = 0; c < config.C; ++c) {
      for (Index j = 0; j < config.p; ++j) { bk.values(j, c) += coin(rng) ? step : -step; }
    }
    out.push_back(std::move(bk));
  }
  return out;
}

Matrix ar_covariance(Index p, double rho)
{
  Matrix s(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) { s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j))); }
  }
  return s;
}

Study generate_study(ScenarioConfig const &config, ScenarioTruth const &truth, Index k, Index n,
                     std::string const &stream, Eigen::VectorXi *classes)
{
  auto const key = static_cast<std::uint64_t>(k);
  Rng class_rng = make_stream(config.seed, stream + "/class", key);
  Rng z_rng = make_stream(config.seed, stream + "/z", key);
  Rng x_rng = make_stream(config.seed, stream + "/covariates", key);
  Rng y_rng = make_stream(config.seed, stream + "/outcomes", key);

  RowVector const mix = truth.mixing.row(k);
  std::discrete_distribution<int> class_dist(mix.data(), mix.data() + mix.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::LLT<Matrix> const llt(ar_covariance(config.p, config.rho));
  Matrix const L = llt.matrixL();
  CoefficientMatrix const &coef = truth.coefficients[static_cast<std::size_t>(k)];

  Study s;
  s.id = static_cast<int>(k);
  s.y.resize(n);
  s.x.resize(n, config.p);
  s.z.resize(n, config.q);
  Eigen::VectorXi labels(n);
  Vector eps(config.p);
  for (Index i = 0; i < n; ++i) {
    int const c = class_dist(class_rng);
    labels[i] = c;
    for (Index j = 0; j < config.q; ++j) { s.z(i, j) = unif(z_rng) < truth.prevalences(c, j) ? 1.0 : 0.0; }
    for (Index j = 0; j < config.p; ++j) { eps[j] = normal(x_rng); }
    s.x.row(i) = (L * eps).transpose();
    double const eta = s.x.row(i).dot(coef.values.col(c));
    if (config.family.kind == FamilyKind::logistic) {
      s.y[i] = unif(y_rng) < logistic_mean(eta) ? 1.0 : 0.0;
    } else {
      s.y[i] = eta + std::sqrt(config.family.dispersion) * normal(y_rng);
    }
  }
  if (classes != nullptr) { *classes = std::move(labels); }
  return s;
}

Scenario generate_scenario(ScenarioConfig const &config)
{
  config.validate();
  Scenario sc;
  sc.truth.prevalences = scenario_prevalences(config);
  sc.truth.mixing = scenario_mixing(config);
  sc.truth.coefficients = make_coefficients(config);
  std::vector<Study> sources;
  Study target;
  for (Index k = 0; k <= config.K; ++k) {
    Eigen::VectorXi labels;
    Study s = generate_study(config, sc.truth, k, k == 0 ? config.n0 : config.n_source, "train", &labels);
    sc.truth.classes.push_back(std::move(labels));
    if (k == 0) {
      target = std::move(s);
    } else {
      sources.push_back(std::move(s));
    }
  }
  sc.data = make_collection(std::move(target), std::move(sources), config.family);
  return sc;
}

Study generate_test_set(ScenarioConfig const &config, ScenarioTruth const &truth, Index n, Eigen::VectorXi *classes)
{
  return generate_study(config, truth, 0, n, "test", classes);
}

} // namespace psm

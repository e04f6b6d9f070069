#include "doctest.h"

#include "oracles.hpp"
#include "psm/baselines.hpp"
#include "psm/simulate.hpp"

using namespace psm;

namespace {

Scenario mini(Index K, std::uint64_t seed, Index p = 20)
{
  ScenarioConfig c = ScenarioConfig::figure1_mini(K);
  c.p = p;
  c.n0 = 300;
  c.n_source = 300;
  c.seed = seed;
  return generate_scenario(c);
}

TransferConfig fixed_config(double pool = 0.02, double bias = 0.05)
{
  TransferConfig t;
  t.lambda_pool = LambdaSpec::fixed(pool);
  t.lambda_bias = LambdaSpec::fixed(bias);
  t.lca.n_starts = 3;
  return t;
}

bool identical(CoefficientMatrix const &a, CoefficientMatrix const &b)
{
  return a.values == b.values && a.intercepts == b.intercepts;
}

double deviance(Vector const &risk, Vector const &y)
{
  double d = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    double const pr = std::clamp(risk[i], 1e-12, 1 - 1e-12);
    d -= y[i] * std::log(pr) + (1 - y[i]) * std::log(1 - pr);
  }
  return d / static_cast<double>(y.size());
}

} // namespace

TEST_CASE("method names round-trip")
{
  for (MethodId m : kAllMethods) { CHECK(parse_method(to_string(m)) == m); }
  CHECK_THROWS_AS(parse_method("lasso"), std::invalid_argument);
  CHECK(has_subpopulations(MethodId::targeted_psm));
  CHECK(has_subpopulations(MethodId::targeted_psm_1));
  CHECK(has_subpopulations(MethodId::lca_glm));
  CHECK_FALSE(has_subpopulations(MethodId::trans_glm));
  CHECK_FALSE(has_subpopulations(MethodId::naive_lasso));
}

TEST_CASE("naive lasso: large penalty leaves only the intercept")
{
  auto const sc = mini(0, 1);
  auto const c = fit_naive_lasso(sc.data.target, GlmFamily::logistic(), LambdaSpec::fixed(5.0));
  CHECK(c.classes() == 1);
  CHECK(c.values.isZero(0.0));
  double const ybar = sc.data.target.y.mean();
  CHECK(c.intercepts[0] == doctest::Approx(std::log(ybar / (1 - ybar))).epsilon(1e-7));
}

TEST_CASE("naive lasso: gaussian with zero penalty is least squares")
{
  ScenarioConfig c = ScenarioConfig::figure1_mini(0);
  c.p = 4;
  c.support = {1, 1, 1};
  c.n0 = 80;
  c.family = GlmFamily::gaussian();
  c.seed = 2;
  Scenario const sc = generate_scenario(c);
  auto const coef = fit_naive_lasso(sc.data.target, GlmFamily::gaussian(), LambdaSpec::fixed(0.0));
  Vector const ols = oracle::weighted_least_squares(sc.data.target.x, sc.data.target.y, Vector::Ones(80));
  CHECK(std::abs(coef.intercepts[0] - ols[0]) <= 1e-8);
  CHECK((coef.values.col(0) - ols.tail(4)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("LCA-GLM equals the full pipeline without sources and with an infinite bias penalty")
{
  auto const sc = mini(0, 3);
  auto cfg = fixed_config();
  auto const a = fit_lca_glm(sc.data.target, 3, GlmFamily::logistic(), cfg);
  auto pcfg = cfg;
  pcfg.lambda_bias = LambdaSpec::fixed(std::numeric_limits<double>::infinity());
  auto const b = fit_targeted_psm(sc.data, 3, pcfg, GlmFamily::logistic());
  CHECK(identical(a.target, b.target));
  CHECK(identical(a.pooled, b.pooled));
  CHECK(a.lca.prevalences == b.lca.prevalences);
  CHECK(a.correction.values.isZero(0.0));
}

TEST_CASE("LCA-GLM with one class is the naive lasso")
{
  auto const sc = mini(0, 4);
  auto cfg = fixed_config(0.03);
  auto const a = fit_lca_glm(sc.data.target, 1, GlmFamily::logistic(), cfg);
  auto const b = fit_naive_lasso(sc.data.target, GlmFamily::logistic(), LambdaSpec::fixed(0.03), cfg);
  CHECK((a.target.values - b.values).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(std::abs(a.target.intercepts[0] - b.intercepts[0]) <= 1e-10);
}

TEST_CASE("LCA-GLM ignores the sources, so it is flat in K")
{
  auto const two = mini(2, 5);
  auto const five = mini(5, 5);
  REQUIRE(two.data.target.y == five.data.target.y);
  auto cfg = fixed_config();
  auto const a = fit_method(MethodId::lca_glm, two.data, 3, GlmFamily::logistic(), cfg);
  auto const b = fit_method(MethodId::lca_glm, five.data, 3, GlmFamily::logistic(), cfg);
  CHECK(identical(a.target, b.target));
}

TEST_CASE("Trans-GLM equals the pipeline with a single class")
{
  auto const sc = mini(3, 6);
  auto cfg = fixed_config();
  auto const coef = fit_trans_glm(sc.data, GlmFamily::logistic(), cfg);
  auto const full = fit_trans_glm_full(sc.data, GlmFamily::logistic(), cfg);
  auto const psm1 = fit_targeted_psm(sc.data, 1, cfg, GlmFamily::logistic(), &full.lca);
  CHECK(coef.classes() == 1);
  CHECK(identical(coef, psm1.target));
  CHECK(identical(full.target, psm1.target));
  CHECK_THROWS_AS(fit_trans_glm(target_only(sc.data), GlmFamily::logistic(), cfg), std::invalid_argument);
}

TEST_CASE("Trans-GLM borrows usefully from identical sources")
{
  ScenarioConfig c = ScenarioConfig::figure1_mini(5);
  c.h = 0.0;
  c.mixing = MixingPreset::custom;
  c.custom_mixing = Matrix::Constant(6, 3, 0.0);
  for (Index k = 0; k <= 5; ++k) { c.custom_mixing.row(k) << 0.5, 0.3, 0.2; }
  c.seed = 7;
  Scenario const sc = generate_scenario(c);
  Study const test = generate_test_set(c, sc.truth, 3000);
  TransferConfig cfg;
  auto const trans = fit_method(MethodId::trans_glm, sc.data, 1, GlmFamily::logistic(), cfg);
  auto const naive = fit_method(MethodId::naive_lasso, sc.data, 1, GlmFamily::logistic(), cfg);
  CHECK(deviance(predict_risk(trans, test.x, test.z), test.y) <= deviance(predict_risk(naive, test.x, test.z), test.y));
}

TEST_CASE("fit_method dispatch shares the one-step path")
{
  auto const sc = mini(2, 8);
  auto cfg = fixed_config();
  LcaModel const lca = fit_lca(sc.data, 3, cfg.lca);
  auto const a = fit_method(MethodId::targeted_psm_1, sc.data, 3, GlmFamily::logistic(), cfg, &lca);
  auto one = cfg;
  one.max_iter = 1;
  auto const b = fit_targeted_psm(sc.data, 3, one, GlmFamily::logistic(), &lca);
  CHECK(identical(a.target, b.target));
  auto const n = fit_method(MethodId::naive_lasso, sc.data, 3, GlmFamily::logistic(), cfg);
  CHECK(n.classes() == 1);
}

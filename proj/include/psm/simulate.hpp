#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psm/core.hpp"

namespace psm {

enum class PrevalencePreset
{
  well_separated,
  less_separated,
  custom
};

enum class MixingPreset
{
  small_diff,
  large_diff,
  custom
};

std::string to_string(PrevalencePreset p);
std::string to_string(MixingPreset m);
PrevalencePreset parse_prevalence_preset(std::string const &s);
MixingPreset parse_mixing_preset(std::string const &s);

struct ScenarioConfig
{
  Index n0 = 1500;
  Index n_source = 1000;
  Index K = 5;
  Index p = 100;
  Index q = 5;
  Index C = 3;
  PrevalencePreset prevalence = PrevalencePreset::well_separated;
  Matrix custom_prevalences; // C x q, used when prevalence == custom
  MixingPreset mixing = MixingPreset::small_diff;
  Matrix custom_mixing;      // (K+1) x C, used when mixing == custom
  double h = 5.0;
  std::vector<Index> support{1, 2, 6};
  double coef_value = 0.5;
  double rho = 0.5;
  GlmFamily family = GlmFamily::logistic();
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// n0 = 500, n_k = 400, p = 50.
  static ScenarioConfig figure1_mini(Index K);
  /// n0 = 1500, n_k = 1000, p = 100.
  static ScenarioConfig figure1_full(Index K);
};

/// C x q class-conditional prevalences (3 x 5 for the presets).
Matrix preset_prevalences(PrevalencePreset kind);

/// Target row followed by the first K source rows. K <= 10.
Matrix preset_mixing(MixingPreset kind, Index K);

Matrix scenario_prevalences(ScenarioConfig const &config);
Matrix scenario_mixing(ScenarioConfig const &config);

/// B_0 then B_k = B_0 + (h/p) S_k for k = 1..K, with S_k independent fair
/// signs drawn from the "signs" stream of the scenario seed.
std::vector<CoefficientMatrix> make_coefficients(ScenarioConfig const &config);

struct ScenarioTruth
{
  Matrix prevalences;
  Matrix mixing;
  std::vector<CoefficientMatrix> coefficients; // per study, target first
  std::vector<Eigen::VectorXi> classes;        // per study, 0-based labels
};

struct Scenario
{
  StudyCollection data;
  ScenarioTruth truth;
};

Scenario generate_scenario(ScenarioConfig const &config);

/// Fresh draws of `n` subjects from study k's population (class, z, x, y),
/// using a stream keyed by `stream`. Labels go to `classes` when non-null.
Study generate_study(ScenarioConfig const &config, ScenarioTruth const &truth, Index k, Index n,
                     std::string const &stream, Eigen::VectorXi *classes = nullptr);

/// Target-population test set from the "test" streams.
Study generate_test_set(ScenarioConfig const &config, ScenarioTruth const &truth, Index n,
                        Eigen::VectorXi *classes = nullptr);

/// AR(1) correlation matrix with entries rho^|i-j|.
Matrix ar_covariance(Index p, double rho);

} // namespace psm

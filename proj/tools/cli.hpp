#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psm/eval.hpp"

namespace psm::cli {

/// Thrown for malformed configuration; the message names the offending field.
class ConfigError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Method block: which estimator, how many classes, which outcome family.
struct MethodSettings
{
  MethodId method = MethodId::targeted_psm;
  Index classes = 3;
  GlmFamily family = GlmFamily::logistic();
};

/// Everything a config file can carry, after validation.
struct FileConfig
{
  nlohmann::json scenario = nlohmann::json::object();
  MethodSettings method;
  TransferConfig transfer;
  // experiment block
  std::vector<ScenarioSpec> scenarios;
  std::optional<std::vector<MethodId>> methods;
  std::optional<int> replicates;
  std::optional<Index> test_n;
  // lca_select block
  std::vector<Index> class_grid{1, 2, 3, 4, 5};
};

/// Overlays a `scenario` JSON block on `base`; unknown keys and bad types
/// raise ConfigError. The result is validated.
ScenarioConfig scenario_from_json(nlohmann::json const &j, ScenarioConfig base, std::string const &path = "scenario");

/// Overlays a `tuning` JSON block on `base`.
TransferConfig transfer_from_json(nlohmann::json const &j, TransferConfig base, std::string const &path = "tuning");

/// Validates a whole config document.
FileConfig parse_config(nlohmann::json const &j);

/// Reads and validates a config file.
FileConfig load_config(std::filesystem::path const &path);

/// Entry point; returns the process exit code (0 ok, 1 runtime failure,
/// 2 usage or configuration error).
int run_cli(int argc, char **argv);

} // namespace psm::cli

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "psm/baselines.hpp"
#include "psm/simulate.hpp"

namespace psm {

struct Alignment
{
  std::vector<Index> permutation; // aligned column c = estimate column permutation[c]
  Matrix aligned;
  double distance = 0.0;          // Frobenius
};

/// Column permutation of `estimate` closest to `truth` in Frobenius norm,
/// by exhaustive search (C <= 8).
Alignment align_classes(Matrix const &estimate, Matrix const &truth);

/// ||aligned - truth||^2 / (p * C).
double coef_mse(Matrix const &estimate, Matrix const &truth);

/// Mann-Whitney AUC with ties counted one half.
double auc(Vector const &scores, Vector const &labels);

struct ScenarioSpec
{
  std::string id;
  ScenarioConfig base;         // seed is replaced per replicate
  std::vector<Index> K_grid;
};

struct ExperimentSpec
{
  std::vector<ScenarioSpec> scenarios;
  std::vector<MethodId> methods{kAllMethods.begin(), kAllMethods.end()};
  int replicates = 20;
  Index test_n = 1500;
  int threads = 1;
  std::uint64_t master_seed = 1;
  TransferConfig transfer;
  double max_failure_fraction = 0.2;
};

struct ReportRow
{
  std::string scenario;
  MethodId method = MethodId::targeted_psm;
  int replicate = 0;
  std::uint64_t seed = 0;
  Index K = 0;
  std::optional<double> mse;
  std::optional<double> auc;
  double runtime_s = 0.0;
  std::string permutation; // space-separated, empty when not aligned
  bool failed = false;
  std::string error;
};

struct SummaryRow
{
  std::string scenario;
  MethodId method = MethodId::targeted_psm;
  Index K = 0;
  int n_ok = 0;
  int n_failed = 0;
  std::optional<double> mse_mean, mse_se;
  std::optional<double> auc_mean, auc_se;
};

struct ExperimentReport
{
  std::vector<ReportRow> rows;

  /// Means and Monte-Carlo standard errors per (scenario, method, K).
  std::vector<SummaryRow> summary() const;
  std::optional<SummaryRow> find(std::string const &scenario, MethodId method, Index K) const;
  /// Per-replicate values of one metric, keyed by replicate, successful rows only.
  std::vector<std::pair<int, double>> values(std::string const &scenario, MethodId method, Index K,
                                             bool want_auc) const;
};

class ExperimentAborted : public std::runtime_error
{
public:
  ExperimentAborted(std::string const &what, ExperimentReport report)
    : std::runtime_error(what), report_(std::move(report))
  {}
  ExperimentReport const &report() const { return report_; }

private:
  ExperimentReport report_;
};

/// Seed of replicate r; shared across scenarios and K so comparisons are paired.
std::uint64_t replicate_seed(std::uint64_t master, int replicate);

/// Fits every method on one generated replicate and scores it.
std::vector<ReportRow> run_replicate(ExperimentSpec const &spec, ScenarioSpec const &scenario, Index K,
                                     int replicate);

using RowSink = std::function<void(std::vector<ReportRow> const &)>;

/// Runs every (scenario, K, replicate) task over a worker pool. `sink` sees
/// each finished task's rows (serialised); `completed` rows are kept and their
/// tasks skipped. Rows come back sorted, independent of scheduling.
ExperimentReport run_experiment(ExperimentSpec const &spec, RowSink const &sink = {},
                                std::vector<ReportRow> const &completed = {});

/// Mean and standard error of paired differences a - b over shared replicates.
std::pair<double, double> paired_difference(std::vector<std::pair<int, double>> const &a,
                                            std::vector<std::pair<int, double>> const &b);

} // namespace psm

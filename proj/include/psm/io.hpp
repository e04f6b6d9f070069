#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psm/eval.hpp"
#include "psm/simulate.hpp"
#include "psm/transfer.hpp"

namespace psm::io {

inline constexpr int kSchemaVersion = 1;

/// Study CSV: header `y,x1..xp,z1..zq`, one subject per row.
void write_study_csv(std::filesystem::path const &path, Study const &study);

/// Reads a study CSV. Columns are matched by header name (y, x<j>, z<j>);
/// a missing y column yields zeros when `require_y` is false.
Study read_study_csv(std::filesystem::path const &path, bool require_y = true);

/// Manifest: one CSV path per line, target first; blank lines and lines
/// starting with '#' are skipped; relative paths resolve against the
/// manifest's directory.
std::vector<std::filesystem::path> read_manifest(std::filesystem::path const &path);
void write_manifest(std::filesystem::path const &path, std::vector<std::filesystem::path> const &studies);

StudyCollection read_collection(std::filesystem::path const &manifest, GlmFamily const &family);

nlohmann::json to_json(Matrix const &m);
Matrix matrix_from_json(nlohmann::json const &j);

nlohmann::json to_json(LcaModel const &model);
LcaModel lca_from_json(nlohmann::json const &j);

nlohmann::json to_json(TransferFit const &fit);
TransferFit fit_from_json(nlohmann::json const &j);

nlohmann::json to_json(ScenarioTruth const &truth);

void write_json(std::filesystem::path const &path, nlohmann::json const &j);
nlohmann::json read_json(std::filesystem::path const &path);

/// Long-format report: one row per (scenario, K, replicate, method).
std::string report_header();
std::string report_line(ReportRow const &row);
std::vector<ReportRow> read_report_csv(std::filesystem::path const &path);
void write_report_csv(std::filesystem::path const &path, ExperimentReport const &report);
void write_summary_csv(std::filesystem::path const &path, ExperimentReport const &report);

/// Shortest round-trip text form of a double.
std::string format_double(double v);

} // namespace psm::io

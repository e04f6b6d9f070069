#include "psm/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace psm::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v)
{
  if (std::isinf(v)) { return v > 0 ? "inf" : "-inf"; }
  if (std::isnan(v)) { return "nan"; }
  char buf[64];
  auto const res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view s, fs::path const &path, std::size_t line)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) { s.remove_prefix(1); }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) { s.remove_suffix(1); }
  if (s == "inf") { return std::numeric_limits<double>::infinity(); }
  double v = 0.0;
  auto const res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": cannot parse '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split(std::string const &line)
{
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) { cell.pop_back(); }
    while (!cell.empty() && cell.front() == ' ') { cell.erase(cell.begin()); }
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') { out.emplace_back(); }
  return out;
}

/// Index of column name "x12" -> 11; -1 when the prefix differs.
long column_index(std::string const &name, char prefix)
{
  if (name.size() < 2 || name[0] != prefix) { return -1; }
  long v = 0;
  auto const res = std::from_chars(name.data() + 1, name.data() + name.size(), v);
  if (res.ec != std::errc() || res.ptr != name.data() + name.size() || v < 1) { return -1; }
  return v - 1;
}

json vector_json(Vector const &v)
{
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) {
      out.push_back(v[i]);
    } else {
      out.push_back(format_double(v[i]));
    }
  }
  return out;
}

Vector vector_from_json(json const &j)
{
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Index>(i)] = j[i].is_string() ? (j[i].get<std::string>() == "-inf"
                                                     ? -std::numeric_limits<double>::infinity()
                                                     : std::numeric_limits<double>::infinity())
                                                : j[i].get<double>();
  }
  return v;
}

json coef_json(CoefficientMatrix const &c)
{
  return {{"values", to_json(c.values)}, {"intercepts", vector_json(c.intercepts.transpose())}};
}

CoefficientMatrix coef_from_json(json const &j, CoefficientRole role)
{
  CoefficientMatrix c;
  c.values = matrix_from_json(j.at("values"));
  c.intercepts = vector_from_json(j.at("intercepts")).transpose();
  c.role = role;
  return c;
}

json trace_json(EmTrace const &t)
{
  return {{"objective", t.objective}, {"iterations", t.iterations}, {"converged", t.converged}};
}

EmTrace trace_from_json(json const &j)
{
  EmTrace t;
  t.objective = j.at("objective").get<std::vector<double>>();
  t.iterations = j.at("iterations").get<int>();
  t.converged = j.at("converged").get<bool>();
  return t;
}

void check_schema(json const &j, std::string const &kind)
{
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion) {
    throw std::runtime_error(kind + ": unsupported schema_version");
  }
  if (j.value("kind", "") != kind) { throw std::runtime_error("expected a '" + kind + "' file"); }
}

std::string opt(std::optional<double> const &v)
{
  return v ? format_double(*v) : std::string{};
}

std::string csv_escape(std::string s)
{
  for (char &ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r') { ch = ';'; }
  }
  return s;
}

} // namespace

void write_study_csv(fs::path const &path, Study const &study)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "y";
  for (Index j = 0; j < study.x.cols(); ++j) { os << ",x" << j + 1; }
  for (Index j = 0; j < study.z.cols(); ++j) { os << ",z" << j + 1; }
  os << '\n';
  for (Index i = 0; i < study.size(); ++i) {
    os << format_double(study.y[i]);
    for (Index j = 0; j < study.x.cols(); ++j) { os << ',' << format_double(study.x(i, j)); }
    for (Index j = 0; j < study.z.cols(); ++j) { os << ',' << format_double(study.z(i, j)); }
    os << '\n';
  }
  if (!os) { throw std::runtime_error("error writing " + path.string()); }
}

Study read_study_csv(fs::path const &path, bool require_y)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot open " + path.string()); }
  std::string line;
  if (!std::getline(is, line)) { throw std::runtime_error(path.string() + ": empty file"); }
  auto const header = split(line);
  long y_col = -1;
  std::vector<long> x_cols, z_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    std::string const &h = header[c];
    if (h == "y") {
      y_col = static_cast<long>(c);
      continue;
    }
    long const xi = column_index(h, 'x');
    long const zi = column_index(h, 'z');
    auto &target = xi >= 0 ? x_cols : z_cols;
    long const idx = xi >= 0 ? xi : zi;
    if (idx < 0) { throw std::runtime_error(path.string() + ": unexpected column '" + h + "'"); }
    if (static_cast<long>(target.size()) <= idx) { target.resize(static_cast<std::size_t>(idx + 1), -1); }
    if (target[static_cast<std::size_t>(idx)] != -1) {
      throw std::runtime_error(path.string() + ": duplicate column '" + h + "'");
    }
    target[static_cast<std::size_t>(idx)] = static_cast<long>(c);
  }
  if (require_y && y_col < 0) { throw std::runtime_error(path.string() + ": missing 'y' column"); }
  for (auto const *cols : {&x_cols, &z_cols}) {
    for (long c : *cols) {
      if (c < 0) { throw std::runtime_error(path.string() + ": x/z columns must be numbered 1..p without gaps"); }
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") { continue; }
    auto const cells = split(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields");
    }
    std::vector<double> r(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) { r[c] = parse_double(cells[c], path, lineno); }
    rows.push_back(std::move(r));
  }
  Index const n = static_cast<Index>(rows.size());
  Study s;
  s.y = Vector::Zero(n);
  s.x.resize(n, static_cast<Index>(x_cols.size()));
  s.z.resize(n, static_cast<Index>(z_cols.size()));
  for (Index i = 0; i < n; ++i) {
    auto const &r = rows[static_cast<std::size_t>(i)];
    if (y_col >= 0) { s.y[i] = r[static_cast<std::size_t>(y_col)]; }
    for (std::size_t j = 0; j < x_cols.size(); ++j) { s.x(i, static_cast<Index>(j)) = r[static_cast<std::size_t>(x_cols[j])]; }
    for (std::size_t j = 0; j < z_cols.size(); ++j) { s.z(i, static_cast<Index>(j)) = r[static_cast<std::size_t>(z_cols[j])]; }
  }
  return s;
}

std::vector<fs::path> read_manifest(fs::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot open manifest " + path.string()); }
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) { line.pop_back(); }
    if (line.empty() || line.front() == '#') { continue; }
    fs::path p(line);
    if (p.is_relative()) { p = path.parent_path() / p; }
    out.push_back(p);
  }
  if (out.empty()) { throw std::runtime_error(path.string() + ": manifest lists no studies"); }
  return out;
}

void write_manifest(fs::path const &path, std::vector<fs::path> const &studies)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "# target first, then sources\n";
  for (auto const &s : studies) { os << s.string() << '\n'; }
}

StudyCollection read_collection(fs::path const &manifest, GlmFamily const &family)
{
  auto const paths = read_manifest(manifest);
  Study target = read_study_csv(paths.front());
  std::vector<Study> sources;
  for (std::size_t i = 1; i < paths.size(); ++i) { sources.push_back(read_study_csv(paths[i])); }
  return make_collection(std::move(target), std::move(sources), family);
}

json to_json(Matrix const &m)
{
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) { rows.push_back(vector_json(m.row(i).transpose())); }
  return rows;
}

Matrix matrix_from_json(json const &j)
{
  if (!j.is_array()) { throw std::runtime_error("matrix must be an array of rows"); }
  Index const r = static_cast<Index>(j.size());
  Index const c = r ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    if (static_cast<Index>(j[static_cast<std::size_t>(i)].size()) != c) { throw std::runtime_error("ragged matrix"); }
    m.row(i) = vector_from_json(j[static_cast<std::size_t>(i)]).transpose();
  }
  return m;
}

json to_json(LcaModel const &model)
{
  return {{"schema_version", kSchemaVersion},
          {"kind", "lca_model"},
          {"classes", model.classes()},
          {"prevalences", to_json(model.prevalences)},
          {"mixing", to_json(model.mixing)},
          {"log_lik", model.log_lik},
          {"iterations", model.iterations},
          {"warnings", model.warnings}};
}

LcaModel lca_from_json(json const &j)
{
  check_schema(j, "lca_model");
  LcaModel m;
  m.prevalences = matrix_from_json(j.at("prevalences"));
  m.mixing = matrix_from_json(j.at("mixing"));
  m.log_lik = j.at("log_lik").get<double>();
  m.iterations = j.value("iterations", 0);
  m.warnings = j.value("warnings", std::vector<std::string>{});
  if (m.classes() != j.at("classes").get<Index>() || m.mixing.cols() != m.classes()) {
    throw std::runtime_error("lca_model: inconsistent class count");
  }
  return m;
}

json to_json(TransferFit const &fit)
{
  json weights = json::array();
  for (auto const &w : fit.refined_weights.probs) { weights.push_back(to_json(w)); }
  json lca = to_json(fit.lca);
  return {{"schema_version", kSchemaVersion},
          {"kind", "transfer_fit"},
          {"family", fit.family.name()},
          {"dispersion", fit.family.dispersion},
          {"pooled", coef_json(fit.pooled)},
          {"correction", coef_json(fit.correction)},
          {"target", coef_json(fit.target)},
          {"lca", lca},
          {"lambda_pool", vector_json(fit.lambda_pool)},
          {"lambda_bias", vector_json(fit.lambda_bias)},
          {"joint_trace", trace_json(fit.joint_trace)},
          {"bias_trace", trace_json(fit.bias_trace)},
          {"refined_weights", weights},
          {"target_weights", to_json(fit.target_weights)},
          {"warnings", fit.warnings}};
}

TransferFit fit_from_json(json const &j)
{
  check_schema(j, "transfer_fit");
  TransferFit fit;
  fit.family = GlmFamily::parse(j.at("family").get<std::string>());
  if (fit.family.kind == FamilyKind::gaussian) { fit.family = GlmFamily::gaussian(j.value("dispersion", 1.0)); }
  fit.pooled = coef_from_json(j.at("pooled"), CoefficientRole::pooled_B);
  fit.correction = coef_from_json(j.at("correction"), CoefficientRole::correction_Delta);
  fit.target = coef_from_json(j.at("target"), CoefficientRole::target_B0);
  fit.lca = lca_from_json(j.at("lca"));
  fit.lambda_pool = vector_from_json(j.at("lambda_pool"));
  fit.lambda_bias = vector_from_json(j.at("lambda_bias"));
  fit.joint_trace = trace_from_json(j.at("joint_trace"));
  fit.bias_trace = trace_from_json(j.at("bias_trace"));
  fit.refined_weights.stage = MembershipStage::refined_w;
  for (auto const &w : j.at("refined_weights")) { fit.refined_weights.probs.push_back(matrix_from_json(w)); }
  fit.target_weights = matrix_from_json(j.at("target_weights"));
  fit.warnings = j.value("warnings", std::vector<std::string>{});
  if (fit.target.classes() != fit.lca.classes() || fit.target.values.rows() != fit.pooled.values.rows()) {
    throw std::runtime_error("transfer_fit: inconsistent dimensions");
  }
  return fit;
}

json to_json(ScenarioTruth const &truth)
{
  json coefs = json::array();
  for (auto const &c : truth.coefficients) { coefs.push_back(coef_json(c)); }
  json classes = json::array();
  for (auto const &c : truth.classes) { classes.push_back(std::vector<int>(c.data(), c.data() + c.size())); }
  return {{"schema_version", kSchemaVersion},
          {"kind", "scenario_truth"},
          {"prevalences", to_json(truth.prevalences)},
          {"mixing", to_json(truth.mixing)},
          {"coefficients", coefs},
          {"classes", classes}};
}

void write_json(fs::path const &path, json const &j)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << j.dump(1) << '\n';
  if (!os) { throw std::runtime_error("error writing " + path.string()); }
}

json read_json(fs::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot open " + path.string()); }
  try {
    return json::parse(is);
  } catch (json::parse_error const &e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string report_header()
{
  return "scenario,method,replicate,seed,K,mse,auc,runtime_s,permutation,failed,error";
}

std::string report_line(ReportRow const &r)
{
  std::ostringstream os;
  os << csv_escape(r.scenario) << ',' << to_string(r.method) << ',' << r.replicate << ',' << r.seed << ',' << r.K
     << ',' << opt(r.mse) << ',' << opt(r.auc) << ',' << format_double(r.runtime_s) << ',' << r.permutation << ','
     << (r.failed ? 1 : 0) << ',' << csv_escape(r.error);
  return os.str();
}

std::vector<ReportRow> read_report_csv(fs::path const &path)
{
  std::vector<ReportRow> rows;
  std::ifstream is(path);
  if (!is) { return rows; }
  std::string line;
  std::getline(is, line);
  if (line != report_header()) { throw std::runtime_error(path.string() + ": not a report file"); }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) { continue; }
    auto const c = split(line);
    if (c.size() != 11) { continue; } // partially written trailing line
    ReportRow r;
    r.scenario = c[0];
    r.method = parse_method(c[1]);
    r.replicate = std::stoi(c[2]);
    r.seed = std::stoull(c[3]);
    r.K = std::stol(c[4]);
    if (!c[5].empty()) { r.mse = parse_double(c[5], path, lineno); }
    if (!c[6].empty()) { r.auc = parse_double(c[6], path, lineno); }
    r.runtime_s = parse_double(c[7], path, lineno);
    r.permutation = c[8];
    r.failed = c[9] == "1";
    r.error = c[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_report_csv(fs::path const &path, ExperimentReport const &report)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << report_header() << '\n';
  for (auto const &r : report.rows) { os << report_line(r) << '\n'; }
}

void write_summary_csv(fs::path const &path, ExperimentReport const &report)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "scenario,method,K,n_ok,n_failed,mse_mean,mse_se,auc_mean,auc_se\n";
  for (auto const &s : report.summary()) {
    os << csv_escape(s.scenario) << ',' << to_string(s.method) << ',' << s.K << ',' << s.n_ok << ',' << s.n_failed
       << ',' << opt(s.mse_mean) << ',' << opt(s.mse_se) << ',' << opt(s.auc_mean) << ',' << opt(s.auc_se) << '\n';
  }
}

} // namespace psm::io

#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "CLI11.hpp"

#include "psm/io.hpp"
#include "psm/rng.hpp"

namespace psm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad(std::string const &path, std::string const &msg)
{
  throw ConfigError(path + ": " + msg);
}

void check_object(json const &j, std::string const &path, std::set<std::string> const &allowed)
{
  if (!j.is_object()) { bad(path, "must be an object"); }
  for (auto const &[key, value] : j.items()) {
    if (!allowed.count(key)) { bad(path + "." + key, "unknown field"); }
  }
}

double get_number(json const &v, std::string const &path)
{
  if (v.is_string()) {
    auto const s = v.get<std::string>();
    if (s == "inf") { return std::numeric_limits<double>::infinity(); }
  }
  if (!v.is_number()) { bad(path, "must be a number"); }
  return v.get<double>();
}

long get_int(json const &v, std::string const &path)
{
  if (!v.is_number_integer()) { bad(path, "must be an integer"); }
  return v.get<long>();
}

std::string get_string(json const &v, std::string const &path)
{
  if (!v.is_string()) { bad(path, "must be a string"); }
  return v.get<std::string>();
}

Matrix get_matrix(json const &v, std::string const &path)
{
  if (!v.is_array()) { bad(path, "must be an array of rows"); }
  std::size_t cols = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_array()) { bad(path, "must be an array of rows"); }
    if (i == 0) { cols = v[i].size(); }
    if (v[i].size() != cols) { bad(path, "rows must have equal length"); }
    for (std::size_t c = 0; c < cols; ++c) { get_number(v[i][c], path); }
  }
  return io::matrix_from_json(v);
}

Vector get_vector(json const &v, std::string const &path)
{
  if (!v.is_array() || v.empty()) { bad(path, "must be a non-empty array of numbers"); }
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[static_cast<Index>(i)] = get_number(v[i], path + "[" + std::to_string(i) + "]");
  }
  return out;
}

template <typename Fn>
auto rethrow_as(std::string const &path, Fn &&fn)
{
  try {
    return fn();
  } catch (ConfigError const &) {
    throw;
  } catch (std::exception const &e) {
    throw ConfigError(path + ": " + e.what());
  }
}

LambdaSpec get_lambda(json const &v, std::string const &path)
{
  if (v.is_string() && v.get<std::string>() == "auto") { return LambdaSpec::automatic(); }
  Vector lam = v.is_array() ? get_vector(v, path) : Vector::Constant(1, get_number(v, path));
  if ((lam.array() < 0.0).any() || lam.hasNaN()) { bad(path, "penalties must be >= 0"); }
  return LambdaSpec::per_class(lam);
}

GlmFamily get_family(json const &block, std::string const &path, GlmFamily base)
{
  if (block.contains("family")) {
    base = rethrow_as(path + ".family", [&] { return GlmFamily::parse(get_string(block["family"], path + ".family")); });
  }
  if (block.contains("dispersion")) {
    double const phi = get_number(block["dispersion"], path + ".dispersion");
    if (base.kind != FamilyKind::gaussian) { bad(path + ".dispersion", "only the gaussian family takes a dispersion"); }
    base = rethrow_as(path + ".dispersion", [&] { return GlmFamily::gaussian(phi); });
  }
  return base;
}

std::vector<MethodId> get_methods(json const &v, std::string const &path)
{
  if (v.is_string() && v.get<std::string>() == "all") { return {kAllMethods.begin(), kAllMethods.end()}; }
  if (!v.is_array() || v.empty()) { bad(path, "must be \"all\" or a non-empty array of method names"); }
  std::vector<MethodId> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::string const p = path + "[" + std::to_string(i) + "]";
    out.push_back(rethrow_as(p, [&] { return parse_method(get_string(v[i], p)); }));
  }
  return out;
}

std::vector<Index> get_index_list(json const &v, std::string const &path, Index min)
{
  if (!v.is_array() || v.empty()) { bad(path, "must be a non-empty array of integers"); }
  std::vector<Index> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    long const x = get_int(v[i], path + "[" + std::to_string(i) + "]");
    if (x < min) { bad(path + "[" + std::to_string(i) + "]", "must be >= " + std::to_string(min)); }
    out.push_back(x);
  }
  return out;
}

} // namespace

ScenarioConfig scenario_from_json(json const &j, ScenarioConfig c, std::string const &path)
{
  check_object(j, path,
               {"n0", "n_source", "K", "p", "q", "C", "prevalence", "custom_prevalences", "mixing", "custom_mixing", "h",
                "support", "coef_value", "rho", "family", "dispersion", "seed"});
  auto field = [&](char const *key) { return path + "." + key; };
  if (j.contains("n0")) { c.n0 = get_int(j["n0"], field("n0")); }
  if (j.contains("n_source")) { c.n_source = get_int(j["n_source"], field("n_source")); }
  if (j.contains("K")) { c.K = get_int(j["K"], field("K")); }
  if (j.contains("p")) { c.p = get_int(j["p"], field("p")); }
  if (j.contains("q")) { c.q = get_int(j["q"], field("q")); }
  if (j.contains("C")) { c.C = get_int(j["C"], field("C")); }
  if (j.contains("prevalence")) {
    c.prevalence = rethrow_as(field("prevalence"),
                              [&] { return parse_prevalence_preset(get_string(j["prevalence"], field("prevalence"))); });
  }
  if (j.contains("custom_prevalences")) {
    c.custom_prevalences = get_matrix(j["custom_prevalences"], field("custom_prevalences"));
    c.prevalence = PrevalencePreset::custom;
  }
  if (j.contains("mixing")) {
    c.mixing = rethrow_as(field("mixing"), [&] { return parse_mixing_preset(get_string(j["mixing"], field("mixing"))); });
  }
  if (j.contains("custom_mixing")) {
    c.custom_mixing = get_matrix(j["custom_mixing"], field("custom_mixing"));
    c.mixing = MixingPreset::custom;
  }
  if (j.contains("h")) { c.h = get_number(j["h"], field("h")); }
  if (j.contains("support")) { c.support = get_index_list(j["support"], field("support"), 0); }
  if (j.contains("coef_value")) { c.coef_value = get_number(j["coef_value"], field("coef_value")); }
  if (j.contains("rho")) { c.rho = get_number(j["rho"], field("rho")); }
  c.family = get_family(j, path, c.family);
  if (j.contains("seed")) {
    long const s = get_int(j["seed"], field("seed"));
    if (s < 0) { bad(field("seed"), "must be >= 0"); }
    c.seed = static_cast<std::uint64_t>(s);
  }
  try {
    c.validate();
  } catch (std::invalid_argument const &e) {
    // messages already read "scenario.<field>: ..."
    std::string msg = e.what();
    if (path != "scenario" && msg.rfind("scenario.", 0) == 0) { msg = path + msg.substr(8); }
    throw ConfigError(msg);
  }
  return c;
}

TransferConfig transfer_from_json(json const &j, TransferConfig t, std::string const &path)
{
  check_object(j, path,
               {"lambda_pool", "lambda_bias", "tau", "max_iter", "cv_folds", "lambda_multipliers", "intercept",
                "lca_starts", "lca_tol", "lca_max_iter", "solver"});
  auto field = [&](char const *key) { return path + "." + key; };
  if (j.contains("lambda_pool")) { t.lambda_pool = get_lambda(j["lambda_pool"], field("lambda_pool")); }
  if (j.contains("lambda_bias")) { t.lambda_bias = get_lambda(j["lambda_bias"], field("lambda_bias")); }
  if (j.contains("tau")) {
    t.tau = get_number(j["tau"], field("tau"));
    if (!(t.tau > 0.0)) { bad(field("tau"), "must be > 0"); }
  }
  if (j.contains("max_iter")) {
    t.max_iter = static_cast<int>(get_int(j["max_iter"], field("max_iter")));
    if (t.max_iter < 1) { bad(field("max_iter"), "must be >= 1"); }
  }
  if (j.contains("cv_folds")) {
    t.cv_folds = static_cast<int>(get_int(j["cv_folds"], field("cv_folds")));
    if (t.cv_folds < 2) { bad(field("cv_folds"), "must be >= 2"); }
  }
  if (j.contains("lambda_multipliers")) {
    t.lambda_multipliers = get_vector(j["lambda_multipliers"], field("lambda_multipliers"));
    if ((t.lambda_multipliers.array() <= 0.0).any() || !t.lambda_multipliers.allFinite()) {
      bad(field("lambda_multipliers"), "entries must be positive and finite");
    }
  }
  if (j.contains("intercept")) {
    if (!j["intercept"].is_boolean()) { bad(field("intercept"), "must be true or false"); }
    t.intercept = j["intercept"].get<bool>();
  }
  if (j.contains("lca_starts")) {
    t.lca.n_starts = static_cast<int>(get_int(j["lca_starts"], field("lca_starts")));
    if (t.lca.n_starts < 1) { bad(field("lca_starts"), "must be >= 1"); }
  }
  if (j.contains("lca_tol")) {
    t.lca.tol = get_number(j["lca_tol"], field("lca_tol"));
    if (!(t.lca.tol > 0.0)) { bad(field("lca_tol"), "must be > 0"); }
  }
  if (j.contains("lca_max_iter")) {
    t.lca.max_iter = static_cast<int>(get_int(j["lca_max_iter"], field("lca_max_iter")));
    if (t.lca.max_iter < 1) { bad(field("lca_max_iter"), "must be >= 1"); }
  }
  if (j.contains("solver")) {
    json const &s = j["solver"];
    std::string const sp = field("solver");
    check_object(s, sp, {"tol_cd", "kkt_tol", "max_sweeps", "max_irls"});
    if (s.contains("tol_cd")) { t.solver.tol_cd = get_number(s["tol_cd"], sp + ".tol_cd"); }
    if (s.contains("kkt_tol")) { t.solver.kkt_tol = get_number(s["kkt_tol"], sp + ".kkt_tol"); }
    if (s.contains("max_sweeps")) { t.solver.max_sweeps = static_cast<int>(get_int(s["max_sweeps"], sp + ".max_sweeps")); }
    if (s.contains("max_irls")) { t.solver.max_irls = static_cast<int>(get_int(s["max_irls"], sp + ".max_irls")); }
    if (!(t.solver.tol_cd > 0.0) || !(t.solver.kkt_tol > 0.0) || t.solver.max_sweeps < 1 || t.solver.max_irls < 1) {
      bad(sp, "tolerances must be > 0 and iteration caps >= 1");
    }
  }
  return t;
}

FileConfig parse_config(json const &j)
{
  check_object(j, "config", {"schema_version", "scenario", "method", "tuning", "experiment", "lca_select"});
  if (!j.contains("schema_version")) { bad("config.schema_version", "missing"); }
  if (get_int(j["schema_version"], "config.schema_version") != io::kSchemaVersion) {
    bad("config.schema_version", "unsupported version (expected " + std::to_string(io::kSchemaVersion) + ")");
  }
  FileConfig fc;
  if (j.contains("scenario")) {
    fc.scenario = j["scenario"];
    // validated against the mini preset so errors surface before any work
    ScenarioConfig base = ScenarioConfig::figure1_mini(5);
    scenario_from_json(fc.scenario, base);
  }
  if (j.contains("method")) {
    json const &m = j["method"];
    check_object(m, "method", {"name", "classes", "family", "dispersion"});
    if (m.contains("name")) {
      fc.method.method = rethrow_as("method.name", [&] { return parse_method(get_string(m["name"], "method.name")); });
    }
    if (m.contains("classes")) {
      fc.method.classes = get_int(m["classes"], "method.classes");
      if (fc.method.classes < 1) { bad("method.classes", "must be >= 1"); }
    }
    fc.method.family = get_family(m, "method", fc.method.family);
  }
  if (j.contains("tuning")) { fc.transfer = transfer_from_json(j["tuning"], fc.transfer); }
  if (j.contains("experiment")) {
    json const &e = j["experiment"];
    check_object(e, "experiment", {"scenarios", "methods", "replicates", "test_n"});
    if (e.contains("methods")) { fc.methods = get_methods(e["methods"], "experiment.methods"); }
    if (e.contains("replicates")) {
      fc.replicates = static_cast<int>(get_int(e["replicates"], "experiment.replicates"));
      if (*fc.replicates < 1) { bad("experiment.replicates", "must be >= 1"); }
    }
    if (e.contains("test_n")) {
      fc.test_n = get_int(e["test_n"], "experiment.test_n");
      if (*fc.test_n < 2) { bad("experiment.test_n", "must be >= 2"); }
    }
    if (e.contains("scenarios")) {
      json const &list = e["scenarios"];
      if (!list.is_array() || list.empty()) { bad("experiment.scenarios", "must be a non-empty array"); }
      std::set<std::string> ids;
      for (std::size_t i = 0; i < list.size(); ++i) {
        std::string const p = "experiment.scenarios[" + std::to_string(i) + "]";
        check_object(list[i], p, {"id", "K_grid", "scenario"});
        if (!list[i].contains("id")) { bad(p + ".id", "missing"); }
        ScenarioSpec spec;
        spec.id = get_string(list[i]["id"], p + ".id");
        if (spec.id.empty() || spec.id.find(',') != std::string::npos) { bad(p + ".id", "must be non-empty without commas"); }
        if (!ids.insert(spec.id).second) { bad(p + ".id", "duplicate scenario id"); }
        spec.K_grid = list[i].contains("K_grid") ? get_index_list(list[i]["K_grid"], p + ".K_grid", 0)
                                                 : std::vector<Index>{2, 5, 10};
        // overrides are resolved later against the chosen preset
        spec.base = ScenarioConfig::figure1_mini(5);
        if (list[i].contains("scenario")) {
          if (!list[i]["scenario"].is_object()) { bad(p + ".scenario", "must be an object"); }
        }
        fc.scenarios.push_back(std::move(spec));
      }
    }
  }
  if (j.contains("lca_select")) {
    json const &l = j["lca_select"];
    check_object(l, "lca_select", {"classes"});
    if (l.contains("classes")) { fc.class_grid = get_index_list(l["classes"], "lca_select.classes", 1); }
  }
  return fc;
}

FileConfig load_config(fs::path const &path)
{
  json j;
  try {
    j = io::read_json(path);
  } catch (std::exception const &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(j);
}

namespace {

struct Options
{
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool force = false;
  bool resume = false;
  std::optional<int> replicates;
  std::string preset;
  std::string manifest;
  std::string fit;
  std::string data;
  std::string method;
  std::optional<Index> classes;
  std::optional<Index> K;
  std::optional<Index> max_classes;
  bool verbose = false;
};

json raw_config(Options const &o)
{
  if (o.config.empty()) { return {{"schema_version", io::kSchemaVersion}}; }
  try {
    return io::read_json(o.config);
  } catch (std::exception const &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

fs::path out_dir(Options const &o)
{
  if (!o.out.empty()) { return o.out; }
  if (char const *env = std::getenv("PSM_OUT_DIR"); env != nullptr && *env != '\0') { return env; }
  return fs::current_path();
}

int thread_count(Options const &o)
{
  if (o.threads) { return std::max(1, *o.threads); }
  if (char const *env = std::getenv("PSM_THREADS"); env != nullptr && *env != '\0') {
    try {
      return std::max(1, std::stoi(env));
    } catch (std::exception const &) {
      throw ConfigError("PSM_THREADS: must be an integer");
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ScenarioConfig preset_base(std::string const &preset, Index K)
{
  if (preset.empty() || preset == "figure1-mini") { return ScenarioConfig::figure1_mini(K); }
  if (preset == "figure1-full") { return ScenarioConfig::figure1_full(K); }
  if (preset == "heterogeneity-mini") {
    ScenarioConfig c = ScenarioConfig::figure1_mini(K);
    c.mixing = MixingPreset::large_diff;
    c.h = 7.5;
    return c;
  }
  throw ConfigError("--preset: unknown preset '" + preset + "'");
}

void prepare_dir(fs::path const &dir, std::vector<fs::path> const &outputs, bool force)
{
  fs::create_directories(dir);
  for (auto const &f : outputs) {
    if (fs::exists(dir / f) && !force) {
      throw ConfigError((dir / f).string() + " exists (use --force to overwrite)");
    }
  }
}

/// Seeds for one fit, drawn the same way the experiment harness draws them.
TransferConfig seeded(TransferConfig t, std::uint64_t seed)
{
  t.seed = derive_seed(seed, "cv-folds");
  t.lca.seed = derive_seed(seed, "lca-init");
  return t;
}

int cmd_simulate(Options const &o)
{
  json const raw = raw_config(o);
  FileConfig const fc = parse_config(raw);
  ScenarioConfig cfg = preset_base(o.preset, 5);
  cfg = scenario_from_json(fc.scenario, cfg);
  if (o.K) {
    cfg.K = *o.K;
    cfg = rethrow_as("--K", [&] { cfg.validate(); return cfg; });
  }
  if (o.seed) { cfg.seed = *o.seed; }

  fs::path const dir = out_dir(o);
  std::vector<fs::path> files;
  for (Index k = 0; k <= cfg.K; ++k) { files.emplace_back("study_" + std::to_string(k) + ".csv"); }
  files.emplace_back("manifest.txt");
  files.emplace_back("truth.json");
  prepare_dir(dir, files, o.force);

  Scenario const sc = generate_scenario(cfg);
  for (Index k = 0; k <= cfg.K; ++k) {
    io::write_study_csv(dir / files[static_cast<std::size_t>(k)], sc.data.study(k));
  }
  io::write_manifest(dir / "manifest.txt", {files.begin(), files.begin() + cfg.K + 1});
  json truth = io::to_json(sc.truth);
  truth["seed"] = cfg.seed;
  truth["family"] = cfg.family.name();
  io::write_json(dir / "truth.json", truth);

  // read back so a zero exit means the files are usable
  StudyCollection const check = io::read_collection(dir / "manifest.txt", cfg.family);
  if (check.num_sources() != cfg.K || check.target.size() != cfg.n0) {
    std::cerr << "simulate: written files failed validation\n";
    return 1;
  }
  std::cout << "wrote " << cfg.K + 1 << " studies to " << dir.string() << '\n';
  return 0;
}

void write_trace(fs::path const &path, TransferFit const &fit)
{
  std::ofstream os(path);
  os << "stage,iteration,value\n";
  for (std::size_t i = 0; i < fit.lca.trace.size(); ++i) {
    os << "lca_loglik," << i + 1 << ',' << io::format_double(fit.lca.trace[i]) << '\n';
  }
  for (std::size_t i = 0; i < fit.joint_trace.objective.size(); ++i) {
    os << "joint," << i + 1 << ',' << io::format_double(fit.joint_trace.objective[i]) << '\n';
  }
  for (std::size_t i = 0; i < fit.bias_trace.objective.size(); ++i) {
    os << "bias," << i + 1 << ',' << io::format_double(fit.bias_trace.objective[i]) << '\n';
  }
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
}

std::string lambda_text(Vector const &v)
{
  std::string s;
  for (Index i = 0; i < v.size(); ++i) { s += (i ? " " : "") + io::format_double(v[i]); }
  return s.empty() ? "-" : s;
}

int cmd_fit(Options const &o)
{
  json const raw = raw_config(o);
  FileConfig const fc = parse_config(raw);
  MethodSettings ms = fc.method;
  if (!o.method.empty()) { ms.method = rethrow_as("--method", [&] { return parse_method(o.method); }); }
  if (o.classes) {
    if (*o.classes < 1) { throw ConfigError("--classes: must be >= 1"); }
    ms.classes = *o.classes;
  }
  if (o.manifest.empty()) { throw ConfigError("--manifest: required"); }
  StudyCollection const data =
    rethrow_as("data", [&] { return io::read_collection(o.manifest, ms.family); });
  bool const mixture = ms.method == MethodId::targeted_psm || ms.method == MethodId::targeted_psm_1 ||
                       ms.method == MethodId::lca_glm;
  if (mixture && data.q == 0) { throw ConfigError("data.z: " + to_string(ms.method) + " needs z1..zq columns"); }
  if (ms.method == MethodId::trans_glm && data.num_sources() == 0) {
    throw ConfigError("data: trans_glm needs at least one source study");
  }

  fs::path const dir = out_dir(o);
  prepare_dir(dir, {"fit.json", "trace.csv"}, o.force);
  TransferConfig const tc = seeded(fc.transfer, o.seed.value_or(1));
  Index const classes = mixture ? ms.classes : 1;
  TransferFit fit;
  try {
    fit = fit_method(ms.method, data, classes, ms.family, tc);
  } catch (SolverFailure const &e) {
    std::cerr << "fit failed: " << e.what() << " (best iterate objective " << e.best().objective << ", KKT "
              << e.best().kkt_max_violation << ")\n";
    return 1;
  }
  io::write_json(dir / "fit.json", io::to_json(fit));
  write_trace(dir / "trace.csv", fit);
  io::fit_from_json(io::read_json(dir / "fit.json")); // round-trip check

  std::cout << "method " << to_string(ms.method) << ", " << fit.classes() << " class(es), K = " << data.num_sources()
            << ", p = " << data.p << '\n';
  for (Index c = 0; c < fit.classes(); ++c) {
    std::cout << "  class " << c + 1 << ": " << (fit.target.values.col(c).array() != 0.0).count()
              << " nonzero coefficients";
    if (c < fit.lca.mixing.cols()) { std::cout << ", target mixing " << fit.lca.mixing(0, c); }
    std::cout << '\n';
  }
  if (fit.joint_trace.iterations > 0) {
    std::cout << "  joint EM: " << fit.joint_trace.iterations << " iterations"
              << (fit.joint_trace.converged ? "" : " (not converged)") << ", objective "
              << fit.joint_trace.objective.back() << ", lambda " << lambda_text(fit.lambda_pool) << '\n';
  }
  if (fit.bias_trace.iterations > 0) {
    std::cout << "  correction EM: " << fit.bias_trace.iterations << " iterations"
              << (fit.bias_trace.converged ? "" : " (not converged)") << ", objective "
              << fit.bias_trace.objective.back() << ", lambda " << lambda_text(fit.lambda_bias) << '\n';
  }
  for (auto const &w : fit.warnings) { std::cout << "  warning: " << w << '\n'; }
  for (auto const &w : fit.lca.warnings) { std::cout << "  warning: " << w << '\n'; }
  return 0;
}

int cmd_predict(Options const &o)
{
  if (o.fit.empty()) { throw ConfigError("--fit: required"); }
  if (o.data.empty()) { throw ConfigError("--data: required"); }
  TransferFit const fit = rethrow_as("--fit", [&] { return io::fit_from_json(io::read_json(o.fit)); });
  Study const s = rethrow_as("--data", [&] { return io::read_study_csv(o.data, false); });
  if (s.x.cols() != fit.features()) {
    throw ConfigError("--data: expected " + std::to_string(fit.features()) + " x columns");
  }
  if (s.z.cols() != fit.lca.indicators()) {
    throw ConfigError("--data: expected " + std::to_string(fit.lca.indicators()) + " z columns");
  }
  if (((s.z.array() != 0.0) && (s.z.array() != 1.0)).any()) { throw ConfigError("--data: z must be binary"); }
  fs::path const dir = out_dir(o);
  prepare_dir(dir, {"predictions.csv"}, o.force);
  Vector const risk = predict_risk(fit, s.x, s.z);
  std::ofstream os(dir / "predictions.csv");
  os << "row,prediction\n";
  for (Index i = 0; i < risk.size(); ++i) { os << i + 1 << ',' << io::format_double(risk[i]) << '\n'; }
  if (!os) { throw std::runtime_error("cannot write predictions.csv"); }
  std::cout << "wrote " << risk.size() << " predictions\n";
  return 0;
}

ExperimentSpec experiment_spec(Options const &o, FileConfig const &fc, json const &raw)
{
  ExperimentSpec spec;
  bool const full = o.preset == "figure1-full";
  spec.replicates = full ? 100 : 20;
  if (fc.replicates) { spec.replicates = *fc.replicates; }
  if (o.replicates) {
    if (*o.replicates < 1) { throw ConfigError("--replicates: must be >= 1"); }
    spec.replicates = *o.replicates;
  }
  if (fc.test_n) { spec.test_n = *fc.test_n; }
  if (fc.methods) { spec.methods = *fc.methods; }
  spec.master_seed = o.seed.value_or(1);
  spec.transfer = fc.transfer;
  spec.threads = thread_count(o);

  auto resolve = [&](json const *override_block, std::string const &path, Index K) {
    ScenarioConfig c = preset_base(o.preset, K);
    c = scenario_from_json(fc.scenario, c);
    c.K = K;
    if (override_block != nullptr) { c = scenario_from_json(*override_block, c, path); }
    c.K = K;
    rethrow_as(path + ".K_grid", [&] { c.validate(); return 0; });
    return c;
  };

  if (fc.scenarios.empty()) {
    ScenarioSpec s;
    s.id = o.preset.empty() ? "figure1-mini" : o.preset;
    s.K_grid = {2, 5, 10};
    for (Index K : s.K_grid) { s.base = resolve(nullptr, "scenario", K); }
    spec.scenarios.push_back(std::move(s));
  } else {
    json const &list = raw["experiment"]["scenarios"];
    for (std::size_t i = 0; i < fc.scenarios.size(); ++i) {
      ScenarioSpec s = fc.scenarios[i];
      std::string const path = "experiment.scenarios[" + std::to_string(i) + "].scenario";
      json const *block = list[i].contains("scenario") ? &list[i]["scenario"] : nullptr;
      for (Index K : s.K_grid) { s.base = resolve(block, path, K); }
      spec.scenarios.push_back(std::move(s));
    }
  }
  return spec;
}

int cmd_experiment(Options const &o)
{
  json const raw = raw_config(o);
  FileConfig const fc = parse_config(raw);
  ExperimentSpec const spec = experiment_spec(o, fc, raw);
  fs::path const dir = out_dir(o);
  fs::create_directories(dir);
  fs::path const report_path = dir / "report.csv";
  std::vector<ReportRow> completed;
  if (o.resume) {
    completed = io::read_report_csv(report_path);
  } else {
    prepare_dir(dir, {"report.csv", "summary.csv"}, o.force);
  }
  {
    // rewrite what is kept so a torn last line does not survive
    std::ofstream os(report_path, std::ios::trunc);
    os << io::report_header() << '\n';
    for (auto const &r : completed) { os << io::report_line(r) << '\n'; }
  }
  std::ofstream live(report_path, std::ios::app);
  std::size_t tasks_done = 0;
  auto sink = [&](std::vector<ReportRow> const &rows) {
    for (auto const &r : rows) { live << io::report_line(r) << '\n'; }
    live.flush();
    ++tasks_done;
    if (o.verbose && !rows.empty()) {
      std::cerr << "done " << rows.front().scenario << " K=" << rows.front().K << " replicate "
                << rows.front().replicate << '\n';
    }
  };

  int code = 0;
  ExperimentReport report;
  try {
    report = run_experiment(spec, sink, completed);
  } catch (ExperimentAborted const &e) {
    std::cerr << e.what() << '\n';
    report = e.report();
    code = 1;
  }
  live.close();
  io::write_report_csv(report_path, report);
  io::write_summary_csv(dir / "summary.csv", report);
  std::cout << "scenario,method,K,n_ok,mse_mean,auc_mean\n";
  for (auto const &s : report.summary()) {
    std::cout << s.scenario << ',' << to_string(s.method) << ',' << s.K << ',' << s.n_ok << ','
              << (s.mse_mean ? io::format_double(*s.mse_mean) : "") << ','
              << (s.auc_mean ? io::format_double(*s.auc_mean) : "") << '\n';
  }
  return code;
}

int cmd_lca_select(Options const &o)
{
  json const raw = raw_config(o);
  FileConfig const fc = parse_config(raw);
  std::vector<Index> grid = fc.class_grid;
  if (o.max_classes) {
    if (*o.max_classes < 1) { throw ConfigError("--max-classes: must be >= 1"); }
    grid.clear();
    for (Index c = 1; c <= *o.max_classes; ++c) { grid.push_back(c); }
  }
  if (o.manifest.empty()) { throw ConfigError("--manifest: required"); }
  StudyCollection const data = rethrow_as("data", [&] { return io::read_collection(o.manifest, fc.method.family); });
  if (data.q == 0) { throw ConfigError("data.z: lca-select needs z1..zq columns"); }
  fs::path const dir = out_dir(o);
  prepare_dir(dir, {"bic.csv"}, o.force);
  LcaFitConfig lc = fc.transfer.lca;
  lc.seed = derive_seed(o.seed.value_or(1), "lca-init");

  double const n = static_cast<double>(data.total_size());
  std::ofstream os(dir / "bic.csv");
  os << "classes,log_lik,n_params,bic\n";
  Index best = 0;
  double best_bic = std::numeric_limits<double>::infinity();
  std::cout << "classes  log_lik  n_params  bic\n";
  for (Index C : grid) {
    LcaModel const m = fit_lca(data, C, lc);
    Index const k = lca_parameter_count(m);
    double const bic = -2.0 * m.log_lik + static_cast<double>(k) * std::log(n);
    os << C << ',' << io::format_double(m.log_lik) << ',' << k << ',' << io::format_double(bic) << '\n';
    std::cout << C << "  " << m.log_lik << "  " << k << "  " << bic << '\n';
    if (bic < best_bic) {
      best_bic = bic;
      best = C;
    }
  }
  if (!os) { throw std::runtime_error("cannot write bic.csv"); }
  std::cout << "lowest BIC at C = " << best << '\n'
            << "note: BIC is a heuristic; it is not guaranteed to recover the true class count, "
               "especially with weakly separated classes or small samples.\n";
  return 0;
}

} // namespace

int run_cli(int argc, char **argv)
{
  CLI::App app{"Subpopulation-aware transfer learning for GLMs"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (env PSM_OUT_DIR)");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_flag("--force", o.force, "Overwrite existing outputs");
    sub->add_flag("-v,--verbose", o.verbose, "Progress messages");
  };

  auto *sim = app.add_subcommand("simulate", "Generate a target study and K source studies");
  common(sim);
  sim->add_option("--preset", o.preset, "figure1-mini | figure1-full | heterogeneity-mini");
  sim->add_option("--K", o.K, "Number of source studies");

  auto *fit = app.add_subcommand("fit", "Fit one method to a dataset");
  common(fit);
  fit->add_option("--manifest", o.manifest, "Manifest listing study CSVs, target first")->check(CLI::ExistingFile);
  fit->add_option("--method", o.method, "targeted_psm | targeted_psm_1 | lca_glm | trans_glm | naive_lasso");
  fit->add_option("--classes", o.classes, "Number of latent classes");

  auto *pred = app.add_subcommand("predict", "Predict with a saved fit");
  common(pred);
  pred->add_option("--fit", o.fit, "fit.json")->check(CLI::ExistingFile);
  pred->add_option("--data", o.data, "CSV with x1..xp and z1..zq")->check(CLI::ExistingFile);

  auto *exp = app.add_subcommand("experiment", "Replicated simulation study");
  common(exp);
  exp->add_option("--preset", o.preset, "figure1-mini | figure1-full | heterogeneity-mini");
  exp->add_option("--threads", o.threads, "Worker threads (env PSM_THREADS)");
  exp->add_option("--replicates", o.replicates, "Replicates per scenario and K");
  exp->add_flag("--resume", o.resume, "Continue from an existing report.csv");

  auto *sel = app.add_subcommand("lca-select", "BIC over candidate class counts");
  common(sel);
  sel->add_option("--manifest", o.manifest, "Manifest listing study CSVs")->check(CLI::ExistingFile);
  sel->add_option("--max-classes", o.max_classes, "Evaluate C = 1..max");

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*sim) { return cmd_simulate(o); }
    if (*fit) { return cmd_fit(o); }
    if (*pred) { return cmd_predict(o); }
    if (*exp) { return cmd_experiment(o); }
    if (*sel) { return cmd_lca_select(o); }
  } catch (ConfigError const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

} // namespace psm::cli

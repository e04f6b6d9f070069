#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "psm/io.hpp"
#include "psm/simulate.hpp"

using namespace psm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(std::string const &name)
{
  fs::path const p = fs::temp_directory_path() / ("psm_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run
{
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args)
{
  args.insert(args.begin(), "psm");
  std::vector<char *> argv;
  for (auto &a : args) { argv.push_back(a.data()); }
  std::ostringstream out, err;
  auto *old_out = std::cout.rdbuf(out.rdbuf());
  auto *old_err = std::cerr.rdbuf(err.rdbuf());
  Run r;
  r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(fs::path const &p)
{
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_text(fs::path const &p, std::string const &s)
{
  std::ofstream os(p, std::ios::binary);
  os << s;
}

std::vector<std::vector<std::string>> read_rows(fs::path const &p)
{
  std::vector<std::vector<std::string>> rows;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) { cells.push_back(c); }
    rows.push_back(cells);
  }
  return rows;
}

Study small_study(std::uint64_t seed)
{
  ScenarioConfig c = ScenarioConfig::figure1_mini(0);
  c.p = 4;
  c.support = {1, 1, 1};
  c.n0 = 30;
  c.seed = seed;
  return generate_scenario(c).data.target;
}

// small, fast scenario shared by the CLI tests
std::string const kSmallScenario = R"("scenario": {"n0": 200, "n_source": 150, "p": 10})";
std::string const kFixedTuning = R"("tuning": {"lambda_pool": 0.02, "lambda_bias": 0.05, "lca_starts": 2})";

} // namespace

TEST_CASE("study CSV round-trips exactly")
{
  fs::path const dir = scratch("csv");
  Study const s = small_study(1);
  io::write_study_csv(dir / "a.csv", s);
  Study const r = io::read_study_csv(dir / "a.csv");
  CHECK(r.x == s.x);
  CHECK(r.y == s.y);
  CHECK(r.z == s.z);

  Study g = s;
  g.y = Vector::LinSpaced(30, -1.0 / 3.0, 2.0 / 7.0);
  io::write_study_csv(dir / "g.csv", g);
  CHECK(io::read_study_csv(dir / "g.csv").y == g.y);

  CHECK(io::format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(io::format_double(0.1) == "0.1");
}

TEST_CASE("CSV header handling")
{
  fs::path const dir = scratch("csv_header");
  write_text(dir / "perm.csv", "z1,x2,y,x1\n1,2.5,0,-1\n0,3,1,4\n");
  Study const s = io::read_study_csv(dir / "perm.csv");
  CHECK(s.x.cols() == 2);
  CHECK(s.x(0, 0) == -1.0);
  CHECK(s.x(0, 1) == 2.5);
  CHECK(s.z(1, 0) == 0.0);
  CHECK(s.y[1] == 1.0);

  write_text(dir / "gap.csv", "y,x1,x3\n0,1,2\n");
  CHECK_THROWS(io::read_study_csv(dir / "gap.csv"));
  write_text(dir / "junk.csv", "y,x1,w\n0,1,2\n");
  CHECK_THROWS(io::read_study_csv(dir / "junk.csv"));
  write_text(dir / "short.csv", "y,x1\n0\n");
  CHECK_THROWS(io::read_study_csv(dir / "short.csv"));
  write_text(dir / "nan.csv", "y,x1\n0,abc\n");
  CHECK_THROWS(io::read_study_csv(dir / "nan.csv"));

  write_text(dir / "noy.csv", "x1,z1\n1,0\n2,1\n");
  CHECK_THROWS(io::read_study_csv(dir / "noy.csv"));
  Study const n = io::read_study_csv(dir / "noy.csv", false);
  CHECK(n.y.isZero(0.0));
  CHECK(n.size() == 2);
}

TEST_CASE("manifest resolves relative paths")
{
  fs::path const dir = scratch("manifest");
  fs::create_directories(dir / "data");
  io::write_study_csv(dir / "data" / "t.csv", small_study(2));
  io::write_study_csv(dir / "data" / "s.csv", small_study(3));
  write_text(dir / "data" / "m.txt", "# target first\nt.csv\n\ns.csv\n");
  auto const paths = io::read_manifest(dir / "data" / "m.txt");
  REQUIRE(paths.size() == 2);
  CHECK(paths[0] == dir / "data" / "t.csv");
  StudyCollection const c = io::read_collection(dir / "data" / "m.txt", GlmFamily::logistic());
  CHECK(c.num_sources() == 1);
  CHECK(c.sources[0].id == 1);
  write_text(dir / "empty.txt", "# nothing\n");
  CHECK_THROWS(io::read_collection(dir / "empty.txt", GlmFamily::logistic()));
}

TEST_CASE("fit and LCA JSON round-trips")
{
  ScenarioConfig c = ScenarioConfig::figure1_mini(2);
  c.p = 10;
  c.n0 = 200;
  c.n_source = 150;
  Scenario const sc = generate_scenario(c);
  TransferConfig t;
  t.lambda_pool = LambdaSpec::fixed(0.02);
  t.lambda_bias = LambdaSpec::per_class((Vector(3) << 0.05, std::numeric_limits<double>::infinity(), 0.1).finished());
  t.lca.n_starts = 2;
  TransferFit const fit = fit_targeted_psm(sc.data, 3, t, GlmFamily::logistic());
  fs::path const dir = scratch("json");
  io::write_json(dir / "fit.json", io::to_json(fit));
  nlohmann::json const j = io::read_json(dir / "fit.json");
  CHECK(j["schema_version"] == 1);
  CHECK(j["kind"] == "transfer_fit");
  TransferFit const back = io::fit_from_json(j);
  CHECK(back.target.values == fit.target.values);
  CHECK(back.target.intercepts == fit.target.intercepts);
  CHECK(back.lambda_bias[1] == std::numeric_limits<double>::infinity());
  CHECK(back.lca.prevalences == fit.lca.prevalences);
  Study const test = generate_test_set(c, sc.truth, 100);
  CHECK(predict_risk(back, test.x, test.z) == predict_risk(fit, test.x, test.z));

  LcaModel const lb = io::lca_from_json(io::to_json(fit.lca));
  CHECK(lb.mixing == fit.lca.mixing);
  CHECK(lb.log_lik == fit.lca.log_lik);

  nlohmann::json bad = j;
  bad["schema_version"] = 2;
  CHECK_THROWS(io::fit_from_json(bad));
  bad = j;
  bad["kind"] = "lca_model";
  CHECK_THROWS(io::fit_from_json(bad));
}

TEST_CASE("report CSV round-trips and tolerates a torn last line")
{
  ReportRow a;
  a.scenario = "s";
  a.method = MethodId::lca_glm;
  a.replicate = 3;
  a.seed = 123456789012345ULL;
  a.K = 5;
  a.mse = 0.00123;
  a.auc = 0.7;
  a.runtime_s = 1.5;
  a.permutation = "2 0 1";
  ReportRow b = a;
  b.method = MethodId::naive_lasso;
  b.mse.reset();
  b.failed = true;
  b.error = "solver, with \"quotes\"";
  ExperimentReport rep;
  rep.rows = {a, b};
  fs::path const dir = scratch("report");
  io::write_report_csv(dir / "r.csv", rep);
  auto const back = io::read_report_csv(dir / "r.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].seed == a.seed);
  CHECK(back[0].mse == a.mse);
  CHECK(back[0].permutation == "2 0 1");
  CHECK(back[1].failed);
  CHECK_FALSE(back[1].mse.has_value());
  CHECK(back[1].error == "solver; with \"quotes\"");
  std::string const text = slurp(dir / "r.csv");
  std::size_t const second = text.find('\n', text.find('\n') + 1) + 1;
  write_text(dir / "torn.csv", text.substr(0, second + 12));
  CHECK(io::read_report_csv(dir / "torn.csv").size() == 1);
  CHECK(io::read_report_csv(dir / "missing.csv").empty());
}

TEST_CASE("cli simulate is reproducible and guards outputs")
{
  fs::path const a = scratch("sim_a"), b = scratch("sim_b");
  auto const r1 = run({"simulate", "--K", "2", "--seed", "5", "--out", a.string()});
  REQUIRE(r1.code == 0);
  auto const r2 = run({"simulate", "--K", "2", "--seed", "5", "--out", b.string()});
  REQUIRE(r2.code == 0);
  for (std::string f : {"study_0.csv", "study_1.csv", "study_2.csv", "manifest.txt", "truth.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK_FALSE(slurp(a / f).empty());
  }
  CHECK(io::read_json(a / "truth.json")["kind"] == "scenario_truth");
  CHECK_FALSE(fs::exists(a / "study_3.csv"));

  auto const again = run({"simulate", "--K", "2", "--seed", "5", "--out", a.string()});
  CHECK(again.code == 2);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(run({"simulate", "--K", "2", "--seed", "6", "--out", a.string(), "--force"}).code == 0);
  CHECK(slurp(a / "study_0.csv") != slurp(b / "study_0.csv"));
}

TEST_CASE("cli configuration errors name the field")
{
  fs::path const dir = scratch("cfg");
  write_text(dir / "rho.json", R"({"schema_version": 1, "scenario": {"rho": 1.2}})");
  auto const r = run({"simulate", "--config", (dir / "rho.json").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("scenario.rho") != std::string::npos);

  write_text(dir / "key.json", R"({"schema_version": 1, "tuning": {"lamda_pool": 0.1}})");
  auto const k = run({"simulate", "--config", (dir / "key.json").string(), "--out", (dir / "o").string()});
  CHECK(k.code == 2);
  CHECK(k.err.find("tuning.lamda_pool") != std::string::npos);

  write_text(dir / "ver.json", R"({"schema_version": 3})");
  auto const v = run({"simulate", "--config", (dir / "ver.json").string(), "--out", (dir / "o").string()});
  CHECK(v.code == 2);
  CHECK(v.err.find("schema_version") != std::string::npos);

  write_text(dir / "broken.json", R"({"schema_version": 1,)");
  CHECK(run({"simulate", "--config", (dir / "broken.json").string(), "--out", (dir / "o").string()}).code == 2);

  CHECK(run({"simulate", "--K", "11", "--out", (dir / "o").string()}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);

  cli::FileConfig const fc = cli::parse_config(nlohmann::json::parse(
    R"({"schema_version": 1, "tuning": {"lambda_bias": [0.1, "inf", 0.2]}, "method": {"name": "lca_glm"}})"));
  CHECK(fc.method.method == MethodId::lca_glm);
  CHECK(fc.transfer.lambda_bias.resolve(3)[1] == std::numeric_limits<double>::infinity());
}

TEST_CASE("cli fit, predict and traces")
{
  fs::path const dir = scratch("fit");
  write_text(dir / "cfg.json", "{\"schema_version\": 1, " + kSmallScenario + ", " + kFixedTuning + "}");
  std::string const cfg = (dir / "cfg.json").string();
  REQUIRE(run({"simulate", "--config", cfg, "--K", "2", "--out", (dir / "data").string()}).code == 0);
  std::string const manifest = (dir / "data" / "manifest.txt").string();

  auto const t0 = std::chrono::steady_clock::now();
  auto const naive = run({"fit", "--manifest", manifest, "--method", "naive_lasso", "--out", (dir / "naive").string()});
  double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(naive.code == 0);
  CHECK(secs < 10.0);

  auto const psm = run({"fit", "--config", cfg, "--manifest", manifest, "--out", (dir / "psm").string()});
  REQUIRE(psm.code == 0);
  CHECK(psm.out.find("joint EM") != std::string::npos);
  auto const rows = read_rows(dir / "psm" / "trace.csv");
  REQUIRE(rows.size() > 3);
  CHECK(rows[0] == std::vector<std::string>{"stage", "iteration", "value"});
  for (std::size_t i = 2; i < rows.size(); ++i) {
    if (rows[i][0] != rows[i - 1][0]) { continue; }
    double const prev = std::stod(rows[i - 1][2]), cur = std::stod(rows[i][2]);
    if (rows[i][0] == "lca_loglik") {
      CHECK(cur >= prev - 1e-8 * std::abs(prev));
    } else {
      CHECK(cur <= prev + 1e-8 * std::abs(prev));
    }
  }

  // z columns dropped: mixture methods must refuse
  Study s = io::read_study_csv(dir / "data" / "study_0.csv");
  s.z.resize(s.size(), 0);
  io::write_study_csv(dir / "noz.csv", s);
  write_text(dir / "noz.txt", "noz.csv\n");
  auto const noz = run({"fit", "--manifest", (dir / "noz.txt").string(), "--out", (dir / "noz").string()});
  CHECK(noz.code == 2);
  CHECK(noz.err.find("data.z") != std::string::npos);
  CHECK(run({"fit", "--manifest", (dir / "noz.txt").string(), "--method", "naive_lasso", "--out",
             (dir / "noz").string()})
          .code == 0);

  auto const pred = run({"predict", "--fit", (dir / "psm" / "fit.json").string(), "--data",
                         (dir / "data" / "study_1.csv").string(), "--out", (dir / "pred").string()});
  REQUIRE(pred.code == 0);
  auto const p = read_rows(dir / "pred" / "predictions.csv");
  CHECK(p.size() == 151);
  CHECK(p[0] == std::vector<std::string>{"row", "prediction"});
  double const first = std::stod(p[1][1]);
  CHECK(first > 0.0);
  CHECK(first < 1.0);
  auto const wrong = run({"predict", "--fit", (dir / "psm" / "fit.json").string(), "--data",
                          (dir / "noz.csv").string(), "--out", (dir / "pred2").string()});
  CHECK(wrong.code == 2);
}

TEST_CASE("cli experiment is thread-independent and resumable")
{
  fs::path const dir = scratch("exp");
  write_text(dir / "cfg.json", "{\"schema_version\": 1, " + kFixedTuning + R"(, "experiment": {
      "scenarios": [{"id": "tiny", "K_grid": [1, 2], "scenario": {"n0": 150, "n_source": 120, "p": 8}}],
      "methods": ["targeted_psm", "naive_lasso"], "replicates": 2, "test_n": 200}})");
  std::string const cfg = (dir / "cfg.json").string();
  auto const one = run({"experiment", "--config", cfg, "--threads", "1", "--out", (dir / "t1").string()});
  REQUIRE(one.code == 0);
  auto const two = run({"experiment", "--config", cfg, "--threads", "2", "--out", (dir / "t2").string()});
  REQUIRE(two.code == 0);
  CHECK(slurp(dir / "t1" / "summary.csv") == slurp(dir / "t2" / "summary.csv"));
  auto const report = read_rows(dir / "t1" / "report.csv");
  CHECK(report.size() == 1 + 2 * 2 * 2);

  // simulate an interrupted run: keep half the rows and tear the next one
  std::string const text = slurp(dir / "t1" / "report.csv");
  std::size_t cut = 0;
  for (int lines = 0; lines < 5; ++lines) { cut = text.find('\n', cut) + 1; }
  fs::create_directories(dir / "resume");
  write_text(dir / "resume" / "report.csv", text.substr(0, cut + 10));
  auto const resumed =
    run({"experiment", "--config", cfg, "--threads", "1", "--resume", "--out", (dir / "resume").string()});
  REQUIRE(resumed.code == 0);
  CHECK(slurp(dir / "resume" / "summary.csv") == slurp(dir / "t1" / "summary.csv"));
  CHECK(read_rows(dir / "resume" / "report.csv").size() == report.size());

  CHECK(run({"experiment", "--config", cfg, "--out", (dir / "t1").string()}).code == 2);
}

TEST_CASE("cli lca-select")
{
  fs::path const dir = scratch("bic");
  write_text(dir / "cfg.json", R"({"schema_version": 1, "scenario": {"n0": 3000, "p": 2, "support": [1, 1, 1]}})");
  REQUIRE(run({"simulate", "--config", (dir / "cfg.json").string(), "--K", "0", "--out", (dir / "d").string()})
            .code == 0);
  std::string const manifest = (dir / "d" / "manifest.txt").string();
  auto const r = run({"lca-select", "--manifest", manifest, "--max-classes", "4", "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("lowest BIC at C = 3") != std::string::npos);
  CHECK(r.out.find("not guaranteed") != std::string::npos);
  auto const rows = read_rows(dir / "o" / "bic.csv");
  CHECK(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"classes", "log_lik", "n_params", "bic"});

  auto const single =
    run({"lca-select", "--manifest", manifest, "--max-classes", "1", "--out", (dir / "o1").string()});
  REQUIRE(single.code == 0);
  CHECK(read_rows(dir / "o1" / "bic.csv").size() == 2);

  write_text(dir / "weak.json",
             R"({"schema_version": 1, "scenario": {"n0": 120, "p": 2, "support": [1, 1, 1], "prevalence": "less_separated"}})");
  REQUIRE(run({"simulate", "--config", (dir / "weak.json").string(), "--K", "0", "--out", (dir / "w").string()})
            .code == 0);
  auto const weak = run({"lca-select", "--manifest", (dir / "w" / "manifest.txt").string(), "--max-classes", "3",
                         "--out", (dir / "wo").string()});
  REQUIRE(weak.code == 0);
  CHECK(weak.out.find("not guaranteed") != std::string::npos);
}

TEST_CASE("PSM_OUT_DIR sets the default output directory")
{
  fs::path const dir = scratch("env");
  ::setenv("PSM_OUT_DIR", dir.string().c_str(), 1);
  auto const r = run({"simulate", "--K", "1"});
  ::unsetenv("PSM_OUT_DIR");
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "study_1.csv"));
  CHECK(fs::exists(dir / "manifest.txt"));
}

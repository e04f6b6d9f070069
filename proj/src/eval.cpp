#include "psm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "psm/rng.hpp"

namespace psm {

namespace {

/// Heap's algorithm over all permutations of 0..n-1.
void for_each_permutation(std::vector<Index> &perm, std::size_t k, std::function<void(std::vector<Index> const &)> const &fn)
{
  if (k <= 1) {
    fn(perm);
    return;
  }
  for (std::size_t i = 0; i + 1 < k; ++i) {
    for_each_permutation(perm, k - 1, fn);
    std::swap(perm[k % 2 == 0 ? i : 0], perm[k - 1]);
  }
  for_each_permutation(perm, k - 1, fn);
}

} // namespace

Alignment align_classes(Matrix const &estimate, Matrix const &truth)
{
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw std::invalid_argument("align_classes: shape mismatch");
  }
  Index const C = truth.cols();
  if (C > 8) { throw std::invalid_argument("align_classes: at most 8 classes"); }
  // cost(a, b) = squared distance between estimate column a and truth column b
  Matrix cost(C, C);
  for (Index a = 0; a < C; ++a) {
    for (Index b = 0; b < C; ++b) { cost(a, b) = (estimate.col(a) - truth.col(b)).squaredNorm(); }
  }
  std::vector<Index> perm(static_cast<std::size_t>(C));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<Index> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  for_each_permutation(perm, perm.size(), [&](std::vector<Index> const &cand) {
    double s = 0.0;
    for (Index c = 0; c < C; ++c) { s += cost(cand[static_cast<std::size_t>(c)], c); }
    if (s < best_cost || (s == best_cost && cand < best)) {
      best_cost = s;
      best = cand;
    }
  });
  Alignment out;
  out.permutation = best;
  out.aligned.resize(estimate.rows(), C);
  for (Index c = 0; c < C; ++c) { out.aligned.col(c) = estimate.col(best[static_cast<std::size_t>(c)]); }
  out.distance = (out.aligned - truth).norm();
  return out;
}

double coef_mse(Matrix const &estimate, Matrix const &truth)
{
  Alignment const a = align_classes(estimate, truth);
  return (a.aligned - truth).squaredNorm() / static_cast<double>(truth.size());
}

double auc(Vector const &scores, Vector const &labels)
{
  if (scores.size() != labels.size()) { throw std::invalid_argument("auc: length mismatch"); }
  Index const n = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (Index i = 0; i < n; ++i) { n_pos += labels[i] != 0.0 ? 1.0 : 0.0; }
  double const n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) { throw std::domain_error("auc: labels contain a single class"); }
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && scores[order[static_cast<std::size_t>(j + 1)]] == scores[order[static_cast<std::size_t>(i)]]) {
      ++j;
    }
    double const mid = 0.5 * static_cast<double>(i + j) + 1.0; // 1-based midrank
    for (Index t = i; t <= j; ++t) {
      if (labels[order[static_cast<std::size_t>(t)]] != 0.0) { rank_sum += mid; }
    }
    i = j + 1;
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::uint64_t replicate_seed(std::uint64_t master, int replicate)
{
  return derive_seed(master, "replicate", static_cast<std::uint64_t>(replicate));
}

namespace {

double mean(std::vector<double> const &v)
{
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_error(std::vector<double> const &v)
{
  if (v.size() < 2) { return 0.0; }
  double const m = mean(v);
  double ss = 0.0;
  for (double x : v) { ss += (x - m) * (x - m); }
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

int method_rank(MethodId m)
{
  return static_cast<int>(m);
}

bool row_less(ReportRow const &a, ReportRow const &b)
{
  return std::make_tuple(a.scenario, a.K, a.replicate, method_rank(a.method)) <
         std::make_tuple(b.scenario, b.K, b.replicate, method_rank(b.method));
}

std::string join(std::vector<Index> const &perm)
{
  std::ostringstream os;
  for (std::size_t i = 0; i < perm.size(); ++i) { os << (i ? " " : "") << perm[i]; }
  return os.str();
}

} // namespace

std::vector<SummaryRow> ExperimentReport::summary() const
{
  std::map<std::tuple<std::string, Index, int>, std::pair<std::vector<double>, std::vector<double>>> acc;
  std::map<std::tuple<std::string, Index, int>, std::pair<int, int>> counts;
  for (auto const &r : rows) {
    auto const key = std::make_tuple(r.scenario, r.K, method_rank(r.method));
    auto &cnt = counts[key];
    auto &vals = acc[key];
    if (r.failed) {
      ++cnt.second;
      continue;
    }
    ++cnt.first;
    if (r.mse) { vals.first.push_back(*r.mse); }
    if (r.auc) { vals.second.push_back(*r.auc); }
  }
  std::vector<SummaryRow> out;
  for (auto const &[key, cnt] : counts) {
    SummaryRow s;
    s.scenario = std::get<0>(key);
    s.K = std::get<1>(key);
    s.method = static_cast<MethodId>(std::get<2>(key));
    s.n_ok = cnt.first;
    s.n_failed = cnt.second;
    auto const &vals = acc.at(key);
    if (!vals.first.empty()) {
      s.mse_mean = mean(vals.first);
      s.mse_se = std_error(vals.first);
    }
    if (!vals.second.empty()) {
      s.auc_mean = mean(vals.second);
      s.auc_se = std_error(vals.second);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<SummaryRow> ExperimentReport::find(std::string const &scenario, MethodId method, Index K) const
{
  for (auto const &s : summary()) {
    if (s.scenario == scenario && s.method == method && s.K == K) { return s; }
  }
  return std::nullopt;
}

std::vector<std::pair<int, double>> ExperimentReport::values(std::string const &scenario, MethodId method, Index K,
                                                             bool want_auc) const
{
  std::vector<std::pair<int, double>> out;
  for (auto const &r : rows) {
    if (r.failed || r.scenario != scenario || r.method != method || r.K != K) { continue; }
    auto const &v = want_auc ? r.auc : r.mse;
    if (v) { out.emplace_back(r.replicate, *v); }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<double, double> paired_difference(std::vector<std::pair<int, double>> const &a,
                                            std::vector<std::pair<int, double>> const &b)
{
  std::map<int, double> bm(b.begin(), b.end());
  std::vector<double> d;
  for (auto const &[r, v] : a) {
    auto it = bm.find(r);
    if (it != bm.end()) { d.push_back(v - it->second); }
  }
  if (d.empty()) { throw std::invalid_argument("paired_difference: no shared replicates"); }
  return {mean(d), std_error(d)};
}

std::vector<ReportRow> run_replicate(ExperimentSpec const &spec, ScenarioSpec const &scenario, Index K, int replicate)
{
  std::uint64_t const seed = replicate_seed(spec.master_seed, replicate);
  ScenarioConfig cfg = scenario.base;
  cfg.K = K;
  cfg.seed = seed;
  Scenario const sc = generate_scenario(cfg);
  Study const test = generate_test_set(cfg, sc.truth, spec.test_n);
  bool const binary = cfg.family.kind == FamilyKind::logistic;

  TransferConfig tc = spec.transfer;
  tc.seed = derive_seed(seed, "cv-folds");
  tc.lca.seed = derive_seed(seed, "lca-init");

  std::optional<LcaModel> shared_lca;
  std::optional<Vector> shared_pool_lambda;
  bool const share = std::count(spec.methods.begin(), spec.methods.end(), MethodId::targeted_psm) &&
                     std::count(spec.methods.begin(), spec.methods.end(), MethodId::targeted_psm_1);

  std::vector<MethodId> methods = spec.methods;
  std::sort(methods.begin(), methods.end(), [](MethodId a, MethodId b) { return method_rank(a) < method_rank(b); });

  std::vector<ReportRow> rows;
  for (MethodId m : methods) {
    ReportRow row;
    row.scenario = scenario.id;
    row.method = m;
    row.replicate = replicate;
    row.seed = seed;
    row.K = K;
    auto const t0 = std::chrono::steady_clock::now();
    try {
      TransferConfig mc = tc;
      LcaModel const *lca = nullptr;
      if (m == MethodId::targeted_psm_1 && share && shared_lca) {
        lca = &*shared_lca;
        if (shared_pool_lambda) { mc.lambda_pool = LambdaSpec::per_class(*shared_pool_lambda); }
      }
      TransferFit const fit = fit_method(m, sc.data, cfg.C, cfg.family, mc, lca);
      if (m == MethodId::targeted_psm && share) {
        shared_lca = fit.lca;
        if (tc.lambda_pool.is_auto()) { shared_pool_lambda = fit.lambda_pool; }
      }
      if (has_subpopulations(m)) {
        Alignment const a = align_classes(fit.target.values, sc.truth.coefficients.front().values);
        row.mse = (a.aligned - sc.truth.coefficients.front().values).squaredNorm() /
                  static_cast<double>(a.aligned.size());
        row.permutation = join(a.permutation);
      }
      if (binary) { row.auc = auc(predict_risk(fit, test.x, test.z), test.y); }
    } catch (std::exception const &e) {
      row.failed = true;
      row.error = e.what();
    }
    row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

ExperimentReport run_experiment(ExperimentSpec const &spec, RowSink const &sink, std::vector<ReportRow> const &completed)
{
  if (spec.replicates < 1) { throw std::invalid_argument("experiment: replicates must be >= 1"); }
  if (spec.test_n < 2) { throw std::invalid_argument("experiment: test_n must be >= 2"); }
  if (spec.methods.empty()) { throw std::invalid_argument("experiment: no methods requested"); }
  spec.transfer.validate();

  struct Task
  {
    ScenarioSpec const *scenario;
    Index K;
    int replicate;
  };
  std::set<std::tuple<std::string, Index, int>> done;
  {
    std::map<std::tuple<std::string, Index, int>, std::size_t> per_task;
    for (auto const &r : completed) { ++per_task[{r.scenario, r.K, r.replicate}]; }
    for (auto const &[key, count] : per_task) {
      if (count >= spec.methods.size()) { done.insert(key); }
    }
  }
  ExperimentReport report;
  for (auto const &r : completed) {
    if (done.count({r.scenario, r.K, r.replicate})) { report.rows.push_back(r); }
  }

  std::vector<Task> tasks;
  for (auto const &sc : spec.scenarios) {
    sc.base.validate();
    for (Index K : sc.K_grid) {
      for (int r = 0; r < spec.replicates; ++r) {
        if (!done.count({sc.id, K, r})) { tasks.push_back({&sc, K, r}); }
      }
    }
  }

  std::vector<std::vector<ReportRow>> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex sink_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t const i = next.fetch_add(1);
      if (i >= tasks.size()) { return; }
      results[i] = run_replicate(spec, *tasks[i].scenario, tasks[i].K, tasks[i].replicate);
      if (sink) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        sink(results[i]);
      }
    }
  };
  int const threads = std::max(1, std::min<int>(spec.threads, static_cast<int>(tasks.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) { pool.emplace_back(worker); }
  }

  for (auto &rs : results) {
    for (auto &r : rs) { report.rows.push_back(std::move(r)); }
  }
  std::sort(report.rows.begin(), report.rows.end(), row_less);

  std::size_t failed = 0;
  for (auto const &r : report.rows) { failed += r.failed ? 1 : 0; }
  if (!report.rows.empty() &&
      static_cast<double>(failed) > spec.max_failure_fraction * static_cast<double>(report.rows.size())) {
    throw ExperimentAborted("experiment aborted: " + std::to_string(failed) + " of " +
                              std::to_string(report.rows.size()) + " fits failed",
                            std::move(report));
  }
  return report;
}

} // namespace psm

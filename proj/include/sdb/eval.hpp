#pragma once

// Evaluation tooling: stability-select execution over held-out graphs with
// JSONL episode logs, the step-wise plan-change-rate analyzer, the ablation
// grid runner, and the cue-ablation protocol.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdb/config.hpp"
#include "sdb/model.hpp"
#include "sdb/training.hpp"

namespace sdb {

struct TooFewStepsError : std::invalid_argument {
  TooFewStepsError() : std::invalid_argument("TooFewSteps: plan-change rate needs at least two steps") {}
};

// ---- step-wise plan change rate -------------------------------------------------

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

// Token-level Levenshtein distance, unit costs, two-row dynamic program.
inline int levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = b.size();
  std::vector<int> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 0; i < a.size(); ++i) {
    cur[0] = static_cast<int>(i) + 1;
    for (std::size_t j = 0; j < n; ++j) {
      const int subst = prev[j] + (a[i] == b[j] ? 0 : 1);
      cur[j + 1] = std::min({cur[j] + 1, prev[j + 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

struct SpcrResult {
  std::vector<double> per_step;  // rate between plan t and t+1
  double mean = 0.0;             // over the first `window` steps
  double stddev = 0.0;           // population std over the same window
  int window = 0;
};

// SPCR_t = Levenshtein(tokens_{t+1}, tokens_t) / max(|T_{t+1}|, |T_t|, 1)
inline SpcrResult spcr(const std::vector<std::string>& plans, int window = 9) {
  if (plans.size() < 2) throw TooFewStepsError();
  SpcrResult r;
  for (std::size_t t = 0; t + 1 < plans.size(); ++t) {
    auto a = whitespace_tokens(plans[t]);
    auto b = whitespace_tokens(plans[t + 1]);
    const int dist = levenshtein(b, a);
    const double denom = std::max({a.size(), b.size(), std::size_t{1}});
    r.per_step.push_back(dist / denom);
  }
  r.window = std::min<int>(window, static_cast<int>(r.per_step.size()));
  double sum = 0.0;
  for (int i = 0; i < r.window; ++i) sum += r.per_step[static_cast<std::size_t>(i)];
  r.mean = sum / r.window;
  double sq = 0.0;
  for (int i = 0; i < r.window; ++i) {
    const double d = r.per_step[static_cast<std::size_t>(i)] - r.mean;
    sq += d * d;
  }
  r.stddev = std::sqrt(sq / r.window);
  return r;
}

// Aggregate SPCR over a plan log: per-step rates pooled across episodes.
inline SpcrResult spcr_over_log(const std::vector<std::vector<std::string>>& plan_log, int window = 9) {
  std::vector<std::vector<double>> by_step;
  bool any = false;
  for (const auto& plans : plan_log) {
    if (plans.size() < 2) continue;
    any = true;
    SpcrResult one = spcr(plans, window);
    for (std::size_t t = 0; t < one.per_step.size(); ++t) {
      if (by_step.size() <= t) by_step.resize(t + 1);
      by_step[t].push_back(one.per_step[t]);
    }
  }
  if (!any) throw TooFewStepsError();
  SpcrResult r;
  for (const auto& rates : by_step) {
    double s = 0.0;
    for (double v : rates) s += v;
    r.per_step.push_back(s / static_cast<double>(rates.size()));
  }
  r.window = std::min<int>(window, static_cast<int>(r.per_step.size()));
  double sum = 0.0;
  for (int i = 0; i < r.window; ++i) sum += r.per_step[static_cast<std::size_t>(i)];
  r.mean = sum / r.window;
  double sq = 0.0;
  for (int i = 0; i < r.window; ++i) {
    const double d = r.per_step[static_cast<std::size_t>(i)] - r.mean;
    sq += d * d;
  }
  r.stddev = std::sqrt(sq / r.window);
  return r;
}

// PlanLog JSONL: one episode per line, field "plans": list of strings.
inline std::vector<std::vector<std::string>> load_plan_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("plan log: cannot open '" + path + "'");
  std::vector<std::vector<std::string>> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    log.push_back(j.at("plans").get<std::vector<std::string>>());
  }
  return log;
}

// ---- evaluation --------------------------------------------------------------------

template <typename Scalar>
struct EvaluationResult {
  MetricsTable metrics;
  std::vector<Episode> episodes;
  std::vector<std::vector<std::string>> plan_log;
  std::string episodes_jsonl;  // schema 1, one object per episode
};

template <typename Scalar>
EvaluationResult<Scalar> evaluate(SDBModel<Scalar>& model, const TaskSet& tasks, double delta,
                                  const PipelineOptions& opts, std::uint64_t seed) {
  if (tasks.graphs.empty()) throw EmptySetError();
  EvaluationResult<Scalar> result;
  std::string jsonl;
  for (std::size_t i = 0; i < tasks.graphs.size(); ++i) {
    Rng rng = episode_rng(seed, i);
    ExecutionTrace<Scalar> trace = run_episode_exec(model, tasks.graphs[i], tasks.instructions[i], rng, opts);
    const Episode& ep = trace.episode;
    const auto& goal_dist = ep.graph->distances_to_goal();
    const double ne = goal_dist[ep.trajectory.back()];
    const double p_len = ep.executed_length();
    const double l_len = goal_dist[ep.graph->start];
    bool oracle = false;
    for (int v : ep.trajectory)
      if (goal_dist[v] <= delta) oracle = true;
    const bool success = ne <= delta;

    nlohmann::json j;
    j["schema"] = 1;
    j["graph_seed"] = ep.graph->seed;
    j["instruction"] = ep.instruction;
    j["trajectory"] = ep.trajectory;
    j["actions"] = ep.actions;
    j["stopped"] = ep.stopped;
    j["chosen_slots"] = trace.chosen_slots;
    j["weights"] = trace.weights;
    j["ema_weights"] = trace.ema_weights;
    j["plans"] = trace.plans;
    j["tl"] = p_len;
    j["ne"] = ne;
    j["success"] = success;
    j["oracle_success"] = oracle;
    j["spl"] = success ? l_len / std::max(p_len, l_len) : 0.0;
    jsonl += j.dump() + "\n";

    result.plan_log.push_back(trace.plans);
    result.episodes.push_back(std::move(trace.episode));
  }
  result.metrics = compute_metrics(result.episodes, delta);
  result.episodes_jsonl = std::move(jsonl);
  return result;
}

// ---- ablation grid -------------------------------------------------------------------

struct AblationGrid {
  std::vector<DemMode> dem_modes{DemMode::HSG};
  std::vector<SsmMode> ssm_modes{SsmMode::Stable};
  std::vector<int> k_values{3};  // 0 = pipeline with the expansion stage bypassed
  std::vector<std::uint64_t> seeds{7};

  void validate() const {
    if (dem_modes.empty() || ssm_modes.empty() || k_values.empty() || seeds.empty())
      throw ValidationError("ablation grid: all axes must be nonempty");
  }
};

struct AblationRow {
  std::string dem, ssm;
  int k = 0;
  std::uint64_t seed = 0;
  MetricsTable metrics;
};

struct AblationResults {
  std::vector<AblationRow> rows;
  std::string csv;
};

namespace detail {

inline void append_metrics_csv(std::string& csv, const std::string& stat, const std::string& dem,
                               const std::string& ssm, int k, const std::string& seed,
                               double tl, double ne, double sr, double osr, double spl) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%s,%.6g,%.6g,%.6g,%.6g,%.6g\n", stat.c_str(), dem.c_str(),
                ssm.c_str(), k, seed.c_str(), tl, ne, sr, osr, spl);
  csv += buf;
}

}  // namespace detail

// Train + evaluate one configuration; the held-out set is a pure function of
// the seed so every arm sees the same evaluation tasks.
template <typename Scalar>
MetricsTable run_cell(Config cfg, DemMode dem, SsmMode ssm, int k, std::uint64_t seed) {
  cfg.model.seed = seed;
  cfg.model.hypotheses = k;
  cfg.train.dem = dem;
  cfg.train.ssm = ssm;
  cfg.train.log_path.clear();
  cfg.train.checkpoint_path.clear();
  cfg.train.eval_every = 0;
  TrainOutcome<Scalar> outcome = train<Scalar>(cfg);
  TaskSet heldout = heldout_tasks(cfg);
  EvaluationResult<Scalar> eval = evaluate(outcome.model, heldout, cfg.model.success_threshold,
                                           cfg.train.pipeline_options(), mix_seed(seed, 0xE7A2));
  return eval.metrics;
}

template <typename Scalar>
AblationResults ablate(const AblationGrid& grid, const Config& base_cfg) {
  grid.validate();
  AblationResults out;
  out.csv = "# ablation-results-schema 1\nstat,dem,ssm,K,seed,TL,NE,SR,OSR,SPL\n";
  for (DemMode dem : grid.dem_modes) {
    for (SsmMode ssm : grid.ssm_modes) {
      for (int k : grid.k_values) {
        std::vector<MetricsTable> cell;
        for (std::uint64_t seed : grid.seeds) {
          AblationRow row;
          row.dem = to_string(dem);
          row.ssm = to_string(ssm);
          row.k = k;
          row.seed = seed;
          row.metrics = run_cell<Scalar>(base_cfg, dem, ssm, k, seed);
          cell.push_back(row.metrics);
          detail::append_metrics_csv(out.csv, "row", row.dem, row.ssm, k, std::to_string(seed),
                                     row.metrics.tl, row.metrics.ne, row.metrics.sr, row.metrics.osr,
                                     row.metrics.spl);
          out.rows.push_back(std::move(row));
        }
        auto mean_std = [&cell](auto getter) {
          double mean = 0.0;
          for (const auto& m : cell) mean += getter(m);
          mean /= static_cast<double>(cell.size());
          double sq = 0.0;
          for (const auto& m : cell) {
            const double d = getter(m) - mean;
            sq += d * d;
          }
          return std::pair<double, double>(mean, std::sqrt(sq / static_cast<double>(cell.size())));
        };
        auto [tl_m, tl_s] = mean_std([](const MetricsTable& m) { return m.tl; });
        auto [ne_m, ne_s] = mean_std([](const MetricsTable& m) { return m.ne; });
        auto [sr_m, sr_s] = mean_std([](const MetricsTable& m) { return m.sr; });
        auto [osr_m, osr_s] = mean_std([](const MetricsTable& m) { return m.osr; });
        auto [spl_m, spl_s] = mean_std([](const MetricsTable& m) { return m.spl; });
        detail::append_metrics_csv(out.csv, "mean", to_string(dem), to_string(ssm), k, "", tl_m, ne_m, sr_m,
                                   osr_m, spl_m);
        detail::append_metrics_csv(out.csv, "std", to_string(dem), to_string(ssm), k, "", tl_s, ne_s, sr_s,
                                   osr_s, spl_s);
      }
    }
  }
  return out;
}

// Cue-ablation protocol: train with the dropped cues zeroed before the scorer,
// evaluate on held-out tasks.
template <typename Scalar>
AblationResults cue_ablation(const Config& base_cfg, const std::string& drop,
                             const std::vector<std::uint64_t>& seeds) {
  AblationResults out;
  out.csv = "# cue-ablation-schema 1\nstat,drop,seed,TL,NE,SR,OSR,SPL\n";
  std::vector<MetricsTable> cell;
  for (std::uint64_t seed : seeds) {
    Config cfg = base_cfg;
    cfg.model.seed = seed;
    cfg.train.drop_cues = drop;
    cfg.train.log_path.clear();
    cfg.train.checkpoint_path.clear();
    cfg.train.eval_every = 0;
    TrainOutcome<Scalar> outcome = train<Scalar>(cfg);
    TaskSet heldout = heldout_tasks(cfg);
    EvaluationResult<Scalar> eval = evaluate(outcome.model, heldout, cfg.model.success_threshold,
                                             cfg.train.pipeline_options(), mix_seed(seed, 0xE0A));
    cell.push_back(eval.metrics);
    AblationRow row;
    row.dem = drop.empty() ? "none" : drop;
    row.seed = seed;
    row.metrics = eval.metrics;
    char buf[256];
    const std::string label = drop.empty() ? "none" : drop;
    std::snprintf(buf, sizeof(buf), "row,%s,%llu,%.6g,%.6g,%.6g,%.6g,%.6g\n", label.c_str(),
                  static_cast<unsigned long long>(seed), eval.metrics.tl, eval.metrics.ne, eval.metrics.sr,
                  eval.metrics.osr, eval.metrics.spl);
    out.csv += buf;
    out.rows.push_back(std::move(row));
  }
  MetricsTable mean;
  for (const auto& m : cell) {
    mean.tl += m.tl;
    mean.ne += m.ne;
    mean.sr += m.sr;
    mean.osr += m.osr;
    mean.spl += m.spl;
  }
  const double n = static_cast<double>(cell.size());
  char buf[256];
  const std::string label = drop.empty() ? "none" : drop;
  std::snprintf(buf, sizeof(buf), "mean,%s,,%.6g,%.6g,%.6g,%.6g,%.6g\n", label.c_str(), mean.tl / n,
                mean.ne / n, mean.sr / n, mean.osr / n, mean.spl / n);
  out.csv += buf;
  return out;
}

}  // namespace sdb

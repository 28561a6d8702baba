#pragma once

// DAgger-style imitation training: per-step tapes with teacher cross-entropy
// on the soft-consolidated pathway, per-step regularizer terms averaged over
// valid steps and batch, plain SGD (adam behind a flag), deterministic
// seeding, and the finite-difference gradient-check mode.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sdb/checkpoint.hpp"
#include "sdb/config.hpp"
#include "sdb/model.hpp"
#include "sdb/nav_world.hpp"

namespace sdb {

// ---- optimizers -----------------------------------------------------------

template <typename Scalar>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(Scalar lr) : lr_(lr) {}

  void step(SDBModel<Scalar>& model) {
    model.visit_params([this](const std::string&, const std::string&, Tensor<Scalar>& t) {
      t.value -= lr_ * t.grad;
    });
  }

 private:
  Scalar lr_;
};

template <typename Scalar>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(Scalar lr, Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999),
                         Scalar eps = Scalar(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(SDBModel<Scalar>& model) {
    ++t_;
    const Scalar bc1 = Scalar(1) - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar bc2 = Scalar(1) - std::pow(beta2_, static_cast<Scalar>(t_));
    model.visit_params([this, bc1, bc2](const std::string&, const std::string& name, Tensor<Scalar>& t) {
      auto& [m, v] = moments_[name];
      if (m.size() == 0) {
        m = Matrix<Scalar>::Zero(t.value.rows(), t.value.cols());
        v = Matrix<Scalar>::Zero(t.value.rows(), t.value.cols());
      }
      m = beta1_ * m + (Scalar(1) - beta1_) * t.grad;
      v = beta2_ * v + (Scalar(1) - beta2_) * t.grad.cwiseProduct(t.grad);
      t.value -= (lr_ * (m / bc1).array() / ((v / bc2).array().sqrt() + eps_)).matrix();
    });
  }

 private:
  Scalar lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix<Scalar>, Matrix<Scalar>>> moments_;
};

// ---- episode rollouts --------------------------------------------------------

template <typename Scalar>
struct EpisodeTrainResult {
  Episode episode;
  int steps = 0;
  double ce = 0, agr = 0, sm = 0, div = 0;  // per-step means
};

namespace detail {

inline int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = uniform<double>(rng, 0.0, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

// One training episode. Gradients of the episode loss (per-step mean of
// ce + omega * step regularizer) are accumulated into the model, scaled by
// 1/batch_denominator so a batch of episodes averages cleanly.
template <typename Scalar>
EpisodeTrainResult<Scalar> run_episode_train(SDBModel<Scalar>& model,
                                             const std::shared_ptr<const NavGraph>& graph,
                                             const std::vector<int>& instruction, Rng& rng,
                                             const PipelineOptions& opts, double dagger_mix,
                                             int batch_denominator = 1, bool accumulate_gradients = true) {
  EpisodeTrainResult<Scalar> result;
  result.episode.graph = graph;
  result.episode.instruction = instruction;
  result.episode.expert_nodes = expert_path(*graph);
  result.episode.trajectory = {graph->start};

  ControllerState<Scalar> state;
  state.reset();
  Eigen::RowVectorXd history_sum = graph->nodes[graph->start].feature;
  int history_count = 1;

  std::vector<std::unique_ptr<ad::Tape<Scalar>>> tapes;
  std::vector<ad::Var<Scalar>> step_losses;

  int current = graph->start;
  for (int step = 0; step < model.cfg.max_episode_len; ++step) {
    CandidateSet candidates = candidate_actions(*graph, current);
    const int teacher = expert_action(*graph, current, graph->goal);

    tapes.push_back(std::make_unique<ad::Tape<Scalar>>());
    ad::Tape<Scalar>& tape = *tapes.back();
    Eigen::RowVectorXd history_mean = history_sum / history_count;
    ContextVars<Scalar> ctx = encode_step(tape, model, instruction, *graph, candidates, history_mean, step);
    StepOutput<Scalar> out = run_step(tape, model, ctx, state, /*training=*/true, teacher, opts, rng);

    result.ce += static_cast<double>(out.ce.scalar());
    result.agr += static_cast<double>(out.agr.scalar());
    result.sm += static_cast<double>(out.sm.scalar());
    result.div += static_cast<double>(out.div.scalar());
    step_losses.push_back(out.step_loss);
    ++result.steps;

    std::vector<double> probs(out.probabilities.begin(), out.probabilities.end());
    const bool follow_policy = uniform<double>(rng, 0.0, 1.0) < dagger_mix;
    const int action = follow_policy ? detail::sample_categorical(probs, rng) : teacher;
    result.episode.actions.push_back(action);
    if (candidates.is_stop(action)) {
      result.episode.stopped = true;
      break;
    }
    current = candidates.target_of(action);
    result.episode.trajectory.push_back(current);
    history_sum += graph->nodes[current].feature;
    ++history_count;
  }

  const double denom = static_cast<double>(result.steps) * static_cast<double>(batch_denominator);
  if (accumulate_gradients) {
    for (std::size_t i = 0; i < tapes.size(); ++i) {
      ad::Var<Scalar> scaled = ad::cmul(step_losses[i], static_cast<Scalar>(1.0 / denom));
      tapes[i]->backward(scaled);
    }
  }
  result.ce /= result.steps;
  result.agr /= result.steps;
  result.sm /= result.steps;
  result.div /= result.steps;
  return result;
}

// Greedy execution rollout with EMA-stabilized selection; per-step traces are
// captured for the episode log and the plan-change analyzer.
template <typename Scalar>
struct ExecutionTrace {
  Episode episode;
  std::vector<int> chosen_slots;
  std::vector<std::vector<Scalar>> weights;
  std::vector<std::vector<Scalar>> ema_weights;
  std::vector<std::string> plans;
};

template <typename Scalar>
std::string plan_string(const NavGraph& graph, const CandidateSet& candidates,
                        const std::vector<Scalar>& probs, int chosen) {
  auto name = [&](int action) {
    if (candidates.is_stop(action)) return std::string("stop");
    return "goto lm" + std::to_string(graph.nodes[candidates.target_of(action)].landmark);
  };
  int alt = -1;
  Scalar alt_p = Scalar(-1);
  for (int a = 0; a < candidates.num_actions(); ++a) {
    if (a == chosen) continue;
    if (probs[static_cast<std::size_t>(a)] > alt_p) {
      alt_p = probs[static_cast<std::size_t>(a)];
      alt = a;
    }
  }
  std::string s = name(chosen);
  if (alt >= 0) s += " alt " + name(alt);
  return s;
}

template <typename Scalar>
ExecutionTrace<Scalar> run_episode_exec(SDBModel<Scalar>& model,
                                        const std::shared_ptr<const NavGraph>& graph,
                                        const std::vector<int>& instruction, Rng& rng,
                                        const PipelineOptions& opts) {
  ExecutionTrace<Scalar> trace;
  trace.episode.graph = graph;
  trace.episode.instruction = instruction;
  trace.episode.expert_nodes = expert_path(*graph);
  trace.episode.trajectory = {graph->start};

  ControllerState<Scalar> state;
  state.reset();
  Eigen::RowVectorXd history_sum = graph->nodes[graph->start].feature;
  int history_count = 1;

  int current = graph->start;
  for (int step = 0; step < model.cfg.max_episode_len; ++step) {
    CandidateSet candidates = candidate_actions(*graph, current);
    ad::Tape<Scalar> tape;
    Eigen::RowVectorXd history_mean = history_sum / history_count;
    ContextVars<Scalar> ctx = encode_step(tape, model, instruction, *graph, candidates, history_mean, step);
    StepOutput<Scalar> out = run_step(tape, model, ctx, state, /*training=*/false, -1, opts, rng);

    int action = 0;
    for (int a = 1; a < candidates.num_actions(); ++a)
      if (out.probabilities[static_cast<std::size_t>(a)] > out.probabilities[static_cast<std::size_t>(action)])
        action = a;

    trace.chosen_slots.push_back(out.k_star);
    trace.weights.push_back(out.weights);
    trace.ema_weights.push_back(out.ema_weights);
    trace.plans.push_back(plan_string(*graph, candidates, out.probabilities, action));
    trace.episode.actions.push_back(action);

    if (candidates.is_stop(action)) {
      trace.episode.stopped = true;
      break;
    }
    current = candidates.target_of(action);
    trace.episode.trajectory.push_back(current);
    history_sum += graph->nodes[current].feature;
    ++history_count;
  }
  return trace;
}

// ---- task sets -----------------------------------------------------------------

struct TaskSet {
  std::vector<std::shared_ptr<const NavGraph>> graphs;
  std::vector<std::vector<int>> instructions;
};

inline TaskSet make_task_set(const Config& cfg, int count, std::uint64_t namespace_tag) {
  TaskSet set;
  for (int i = 0; i < count; ++i) {
    std::uint64_t gseed = mix_seed(cfg.model.seed, mix_seed(namespace_tag, static_cast<std::uint64_t>(i)));
    auto graph = std::make_shared<NavGraph>(sample_graph(cfg.world, cfg.model, gseed));
    set.instructions.push_back(synthesize_instruction(*graph, cfg.world, cfg.model, gseed));
    set.graphs.push_back(std::move(graph));
  }
  return set;
}

inline TaskSet training_tasks(const Config& cfg) { return make_task_set(cfg, cfg.train.train_graphs, 0xA11CE); }
inline TaskSet heldout_tasks(const Config& cfg) { return make_task_set(cfg, cfg.train.eval_graphs, 0xE7A1); }

// ---- training loop ---------------------------------------------------------------

template <typename Scalar>
struct TrainOutcome {
  SDBModel<Scalar> model;
  std::string csv;  // full training log text, also written to cfg.train.log_path
};

namespace detail {

inline void append_csv_row(std::string& csv, int step, const LossBreakdown& b) {
  char buf[360];
  std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", step,
                b.duet, b.agr, b.sm, b.div, b.sdb, b.omega, b.m, b.gamma, b.rho, b.total);
  csv += buf;
}

}  // namespace detail

template <typename Scalar>
LossBreakdown finalize_breakdown(const SDBModel<Scalar>& model, double ce, double agr, double sm, double div) {
  LossBreakdown b;
  b.duet = ce;
  b.agr = agr;
  b.sm = sm;
  b.div = div;
  b.sdb = model.cfg.lambda_agr * agr + model.cfg.lambda_sm * sm + model.cfg.lambda_div * div;
  b.omega = static_cast<double>(model.regularizer.omega());
  b.m = static_cast<double>(model.regularizer.m());
  const double g = model.expansion.theta_gamma.value(0, 0);
  b.gamma = 1.0 / (1.0 + std::exp(-g));
  b.rho = static_cast<double>(model.selection.rho());
  b.total = b.duet + b.omega * b.sdb;
  return b;
}

template <typename Scalar>
TrainOutcome<Scalar> train(const Config& cfg,
                           const std::function<void(int, const MetricsTable&)>& eval_hook = nullptr) {
  cfg.validate();
  TrainOutcome<Scalar> out{SDBModel<Scalar>(cfg.model), {}};
  SDBModel<Scalar>& model = out.model;
  model.init(cfg.model.seed);

  TaskSet train_set = training_tasks(cfg);
  TaskSet heldout = cfg.train.eval_every > 0 ? heldout_tasks(cfg) : TaskSet{};

  SgdOptimizer<Scalar> sgd(static_cast<Scalar>(cfg.train.learning_rate));
  AdamOptimizer<Scalar> adam(static_cast<Scalar>(cfg.train.learning_rate));
  const bool use_adam = cfg.train.optimizer == "adam";
  const PipelineOptions opts = cfg.train.pipeline_options();

  out.csv = "step,duet,agr,sm,div,sdb,omega,m,gamma,rho,total\n";
  SDBModel<Scalar> last_good = model;

  for (int iter = 0; iter < cfg.train.iterations; ++iter) {
    model.zero_grads();
    double mix = cfg.train.dagger_mix;
    if (cfg.train.dagger_anneal && cfg.train.iterations > 1) {
      double t = static_cast<double>(iter) / static_cast<double>(cfg.train.iterations - 1);
      mix = cfg.train.dagger_mix + (1.0 - cfg.train.dagger_mix) * t;
    }
    double ce = 0, agr = 0, sm = 0, div = 0;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      const std::uint64_t episode_index =
          static_cast<std::uint64_t>(iter) * static_cast<std::uint64_t>(cfg.train.batch_size) + b;
      Rng rng = episode_rng(cfg.model.seed, episode_index);
      const std::size_t task = static_cast<std::size_t>(episode_index % train_set.graphs.size());
      auto r = run_episode_train(model, train_set.graphs[task], train_set.instructions[task], rng, opts,
                                 mix, cfg.train.batch_size);
      ce += r.ce;
      agr += r.agr;
      sm += r.sm;
      div += r.div;
    }
    ce /= cfg.train.batch_size;
    agr /= cfg.train.batch_size;
    sm /= cfg.train.batch_size;
    div /= cfg.train.batch_size;
    LossBreakdown b = finalize_breakdown(model, ce, agr, sm, div);
    if (!std::isfinite(b.total)) {
      if (!cfg.train.checkpoint_path.empty()) save_checkpoint(cfg.train.checkpoint_path, last_good, cfg);
      throw NonFiniteLossError();
    }
    if (use_adam) {
      adam.step(model);
    } else {
      sgd.step(model);
    }
    if (cfg.train.log_every > 0 && iter % cfg.train.log_every == 0) {
      detail::append_csv_row(out.csv, iter, b);
      last_good = model;
    }
    if (cfg.train.eval_every > 0 && (iter + 1) % cfg.train.eval_every == 0 && eval_hook) {
      std::vector<Episode> episodes;
      for (std::size_t i = 0; i < heldout.graphs.size(); ++i) {
        Rng rng = episode_rng(mix_seed(cfg.model.seed, 0xE7A1), i);
        episodes.push_back(
            run_episode_exec(model, heldout.graphs[i], heldout.instructions[i], rng, opts).episode);
      }
      eval_hook(iter, compute_metrics(episodes, cfg.model.success_threshold));
    }
  }

  if (!cfg.train.log_path.empty()) {
    std::ofstream f(cfg.train.log_path, std::ios::binary);
    if (!f) throw ValidationError("train: cannot write log '" + cfg.train.log_path + "'");
    f << out.csv;
  }
  if (!cfg.train.checkpoint_path.empty()) save_checkpoint(cfg.train.checkpoint_path, model, cfg);
  return out;
}

// ---- gradient check -----------------------------------------------------------------

struct GradCheckGroupReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::map<std::string, GradCheckGroupReport> groups;
  double max_rel_error = 0.0;

  bool passed(double tol = 1e-4) const { return max_rel_error < tol; }
};

// Central finite differences of the single-step total loss against the tape
// gradients, per parameter group. Run in 64-bit mode.
template <typename Scalar>
GradCheckReport grad_check_on(SDBModel<Scalar>& model, const Config& cfg,
                              const std::shared_ptr<const NavGraph>& graph, Scalar eps) {
  const std::vector<int> instruction = synthesize_instruction(*graph, cfg.world, cfg.model, graph->seed);
  const PipelineOptions opts = cfg.train.pipeline_options();

  auto forward = [&]() -> Scalar {
    ControllerState<Scalar> state;
    state.reset();
    ad::Tape<Scalar> tape;
    Rng rng = make_rng(12345);  // only consumed by the stochastic arms
    CandidateSet candidates = candidate_actions(*graph, graph->start);
    Eigen::RowVectorXd history = graph->nodes[graph->start].feature;
    ContextVars<Scalar> ctx = encode_step(tape, model, instruction, *graph, candidates, history, 0);
    int teacher = expert_action(*graph, graph->start, graph->goal);
    StepOutput<Scalar> out = run_step(tape, model, ctx, state, true, teacher, opts, rng);
    return out.step_loss.scalar();
  };

  // analytic pass
  model.zero_grads();
  {
    ControllerState<Scalar> state;
    state.reset();
    ad::Tape<Scalar> tape;
    Rng rng = make_rng(12345);
    CandidateSet candidates = candidate_actions(*graph, graph->start);
    Eigen::RowVectorXd history = graph->nodes[graph->start].feature;
    ContextVars<Scalar> ctx = encode_step(tape, model, instruction, *graph, candidates, history, 0);
    int teacher = expert_action(*graph, graph->start, graph->goal);
    StepOutput<Scalar> out = run_step(tape, model, ctx, state, true, teacher, opts, rng);
    tape.backward(out.step_loss);
  }

  GradCheckReport report;
  model.visit_params([&](const std::string& group, const std::string& name, Tensor<Scalar>& t) {
    GradCheckGroupReport& g = report.groups[group];
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        const Scalar original = t.value(i, j);
        t.value(i, j) = original + eps;
        const Scalar up = forward();
        t.value(i, j) = original - eps;
        const Scalar down = forward();
        t.value(i, j) = original;
        const double numeric = static_cast<double>((up - down) / (2 * eps));
        const double analytic = static_cast<double>(t.grad(i, j));
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        const double rel = std::abs(analytic - numeric) / denom;
        if (rel > g.max_rel_error) {
          g.max_rel_error = rel;
          g.worst_parameter = name;
          g.analytic_at_worst = analytic;
          g.numeric_at_worst = numeric;
        }
        report.max_rel_error = std::max(report.max_rel_error, rel);
      }
    }
  });
  return report;
}

template <typename Scalar>
GradCheckReport grad_check(SDBModel<Scalar>& model, const Config& cfg, Scalar eps = Scalar(1e-5)) {
  static_assert(sizeof(Scalar) == 8, "grad_check requires the 64-bit mode");
  auto graph = std::make_shared<const NavGraph>(
      sample_graph(cfg.world, cfg.model, mix_seed(cfg.model.seed, 0x6CULL)));
  return grad_check_on(model, cfg, graph, eps);
}

}  // namespace sdb

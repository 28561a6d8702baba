#pragma once

// Full model: encoders + expansion + selection + regularizer scalars, and the
// per-step decision pipeline shared by training (soft consolidation) and
// execution (EMA-stabilized hard selection).

#include <array>
#include <string>
#include <vector>

#include "sdb/autodiff.hpp"
#include "sdb/backbone.hpp"
#include "sdb/core.hpp"
#include "sdb/expansion.hpp"
#include "sdb/nav_world.hpp"
#include "sdb/regularizer.hpp"
#include "sdb/selection.hpp"

namespace sdb {

enum class DemMode { HSG, Noise };
enum class SsmMode { Stable, Rand };

inline const char* to_string(DemMode m) { return m == DemMode::HSG ? "HSG" : "Noise"; }
inline const char* to_string(SsmMode m) { return m == SsmMode::Stable ? "Stable" : "Rand"; }

struct PipelineOptions {
  DemMode dem = DemMode::HSG;
  SsmMode ssm = SsmMode::Stable;
  bool detach_cue_head = false;
  std::array<bool, 3> drop_cues{false, false, false};  // zero A/C/S before g_psi
  double noise_sigma = 1.0;
};

template <typename Scalar>
struct SDBModel {
  ModelConfig cfg;
  BackboneParams<Scalar> backbone;
  ExpansionParams<Scalar> expansion;
  SelectionParams<Scalar> selection;
  RegularizerParams<Scalar> regularizer;
  // running mean row norm of structured shifts; the noise arm's match target
  Scalar noise_norm_ema = Scalar(0);
  bool noise_norm_ready = false;

  SDBModel() = default;
  explicit SDBModel(const ModelConfig& config)
      : cfg(config), backbone(config), expansion(config), selection(config) {
    cfg.validate();
  }

  bool sdb_enabled() const { return cfg.hypotheses >= 1; }

  void init(std::uint64_t seed) {
    Rng rng = make_rng(mix_seed(seed, 0x90DE1));
    backbone.init(rng);
    expansion.init(rng);
    selection.init(rng);
    regularizer.init();
    noise_norm_ema = Scalar(0);
    noise_norm_ready = false;
  }

  void visit_params(const ParamVisitor<Scalar>& v) {
    backbone.visit(v);
    expansion.visit(v);
    selection.visit(v);
    regularizer.visit(v);
  }

  void zero_grads() {
    visit_params([](const std::string&, const std::string&, Tensor<Scalar>& t) { t.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit_params([&n](const std::string&, const std::string&, Tensor<Scalar>& t) {
      n += static_cast<std::size_t>(t.value.size());
    });
    return n;
  }

  void update_noise_norm(Scalar probe) {
    const Scalar beta = Scalar(0.1);
    if (!noise_norm_ready) {
      noise_norm_ema = probe;
      noise_norm_ready = true;
    } else {
      noise_norm_ema = (Scalar(1) - beta) * noise_norm_ema + beta * probe;
    }
  }
};

// Encode raw step inputs into the differentiable decision context.
template <typename Scalar>
ContextVars<Scalar> encode_step(ad::Tape<Scalar>& tape, SDBModel<Scalar>& model,
                                const std::vector<int>& instruction_tokens, const NavGraph& graph,
                                const CandidateSet& candidates, const Eigen::RowVectorXd& history_mean,
                                int step) {
  ContextVars<Scalar> ctx;
  ctx.instruction = encode_instruction(tape, model.backbone, instruction_tokens, model.cfg);
  ctx.instruction_mask.assign(instruction_tokens.size(), true);
  ctx.evidence = encode_environment(tape, model.backbone, graph, candidates, history_mean);
  ctx.evidence_mask.assign(static_cast<std::size_t>(ctx.evidence.rows()), true);
  ctx.step = step;
  return ctx;
}

template <typename Scalar>
struct StepOutput {
  ad::Var<Scalar> logits;            // head logits of the context that drives the action
  std::vector<Scalar> probabilities;  // softmax of `logits`
  int k_star = 0;                     // committed slot (execution) or EMA argmax (training, logged)
  std::vector<Scalar> weights;        // w_t
  std::vector<Scalar> ema_weights;    // w-bar_t
  // training-only loss nodes (valid when a teacher action was given)
  ad::Var<Scalar> ce;
  ad::Var<Scalar> agr, sm, div;
  ad::Var<Scalar> step_loss;          // ce + omega * (lambda-weighted step regularizer)
  bool has_loss = false;
};

namespace detail {

template <typename Scalar>
ad::Var<Scalar> cross_entropy(ad::Var<Scalar> logits, int target) {
  return ad::sub(ad::logsumexp_row(logits), ad::pick(logits, 0, target));
}

template <typename Scalar>
std::vector<Scalar> row_values(ad::Var<Scalar> row) {
  std::vector<Scalar> out(static_cast<std::size_t>(row.cols()));
  for (Eigen::Index j = 0; j < row.cols(); ++j) out[static_cast<std::size_t>(j)] = row.value()(0, j);
  return out;
}

}  // namespace detail

// One full decision step. `training` selects the soft-consolidated pathway
// for the head (and builds loss nodes when teacher_action >= 0); execution
// commits to the EMA-argmax hypothesis. The controller state advances either
// way. K = 0 runs the plain fused pipeline with no expansion stage.
template <typename Scalar>
StepOutput<Scalar> run_step(ad::Tape<Scalar>& tape, SDBModel<Scalar>& model, const ContextVars<Scalar>& ctx,
                            ControllerState<Scalar>& state, bool training, int teacher_action,
                            const PipelineOptions& opts, Rng& rng) {
  StepOutput<Scalar> out;

  if (!model.sdb_enabled()) {
    auto context = fuse_context(tape, model.expansion, ctx.instruction, ctx.evidence, ctx.evidence_mask,
                                query_bias(tape, model.expansion, 0));
    out.logits = action_logits(tape, model.backbone, context, ctx.instruction_mask, ctx.evidence);
    out.probabilities = detail::row_values(ad::softmax_rows(out.logits));
    out.weights = {Scalar(1)};
    out.ema_weights = {Scalar(1)};
    if (state.last_step + 1 != ctx.step) throw StaleStateError();
    state.last_step = ctx.step;
    if (training && teacher_action >= 0) {
      out.ce = detail::cross_entropy(out.logits, teacher_action);
      out.agr = tape.constant_scalar(Scalar(0));
      out.sm = tape.constant_scalar(Scalar(0));
      out.div = tape.constant_scalar(Scalar(0));
      out.step_loss = out.ce;
      out.has_loss = true;
    }
    return out;
  }

  // 1 -> K
  HypothesisBank<Scalar> bank;
  if (opts.dem == DemMode::HSG) {
    bank = expand(tape, model.expansion, ctx);
  } else {
    DecisionContext<Scalar> plain;
    plain.instruction.values = ctx.instruction.value();
    plain.instruction.mask = ctx.instruction_mask;
    plain.evidence.values = ctx.evidence.value();
    plain.evidence.mask = ctx.evidence_mask;
    model.update_noise_norm(probe_shift_norm(model.expansion, plain, ctx.step));
    bank = noise_expand(tape, model.expansion, ctx, static_cast<Scalar>(opts.noise_sigma),
                        model.noise_norm_ema, rng);
  }
  const int k_total = bank.size();

  // shared head on every hypothesis (confidence cue + execution logits)
  std::vector<ad::Var<Scalar>> hyp_logits(static_cast<std::size_t>(k_total));
  std::vector<ad::Var<Scalar>> cue_logits(static_cast<std::size_t>(k_total));
  for (int k = 0; k < k_total; ++k) {
    hyp_logits[k] = action_logits(tape, model.backbone, bank.contexts[k], bank.mask, ctx.evidence);
    cue_logits[k] = opts.detach_cue_head ? tape.constant(hyp_logits[k].value()) : hyp_logits[k];
  }

  std::vector<ad::Var<Scalar>> descriptors(static_cast<std::size_t>(k_total));
  for (int k = 0; k < k_total; ++k) descriptors[k] = pooled_descriptor(bank.contexts[k], bank.mask);

  // K -> 1: controller weights
  ad::Var<Scalar> weights;
  if (opts.ssm == SsmMode::Stable) {
    ad::Var<Scalar> prev;  // invalid at the first step: the anchor stands in
    if (state.has_prev) prev = tape.constant(state.prev_descriptor);
    auto cues = compute_acs(tape, descriptors, cue_logits, prev);
    auto scores = reliability_scores(tape, model.selection, cues, opts.drop_cues);
    weights = controller_weights(tape, scores);
  } else {
    Matrix<Scalar> onehot = Matrix<Scalar>::Zero(1, k_total);
    onehot(0, random_select(bank, rng)) = Scalar(1);
    weights = tape.constant(std::move(onehot));
  }
  out.weights = detail::row_values(weights);

  auto consolidated = soft_consolidate(bank, weights);
  SelectionOutcome sel = stable_select(state, out.weights, model.selection.rho(), ctx.step);
  if (opts.ssm == SsmMode::Rand && !training) {
    // chance selection arm: override the EMA commitment with the drawn slot
    sel.chosen = 0;
    for (int k = 0; k < k_total; ++k)
      if (out.weights[k] > Scalar(0.5)) sel.chosen = k;
  }
  out.k_star = sel.chosen;
  out.ema_weights = state.ema_weights;

  ad::Var<Scalar> acting_logits;
  if (training) {
    acting_logits = action_logits(tape, model.backbone, consolidated, bank.mask, ctx.evidence);
  } else {
    acting_logits = hyp_logits[out.k_star];
  }
  out.logits = acting_logits;
  out.probabilities = detail::row_values(ad::softmax_rows(acting_logits));

  // h-dagger for the next step: consolidated descriptor during training,
  // committed descriptor during execution; constant across steps.
  {
    ad::Var<Scalar> next_prev =
        training ? masked_pool(consolidated, bank.mask) : descriptors[out.k_star];
    state.prev_descriptor = next_prev.value();
    state.has_prev = true;
  }

  if (training && teacher_action >= 0) {
    out.ce = detail::cross_entropy(acting_logits, teacher_action);
    auto consolidated_descriptor = masked_pool(consolidated, bank.mask);
    out.agr = agreement_loss(descriptors, weights, consolidated_descriptor);
    out.sm = smoothness_loss(tape, descriptors);
    out.div = diversity_floor_loss(tape, model.regularizer, descriptors);
    auto sdb = sdb_loss(out.agr, out.sm, out.div, static_cast<Scalar>(model.cfg.lambda_agr),
                        static_cast<Scalar>(model.cfg.lambda_sm), static_cast<Scalar>(model.cfg.lambda_div));
    out.step_loss = total_loss(tape, model.regularizer, out.ce, sdb);
    out.has_loss = true;
  }
  return out;
}

}  // namespace sdb

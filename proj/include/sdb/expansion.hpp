#pragma once

// The 1->K stage: state summary, evidence-conditioned low-rank shift basis,
// slot gating, alignment residuals, bounded hypothesis shifts, and the shared
// fusion block that turns shifted instruction states into hypothesis contexts.

#include <algorithm>
#include <string>
#include <vector>

#include "sdb/autodiff.hpp"
#include "sdb/backbone.hpp"
#include "sdb/core.hpp"
#include "sdb/nn.hpp"

namespace sdb {

template <typename Scalar>
struct ExpansionParams {
  // state summary s_t
  MlpParams<Scalar> phi;            // [2H + H] -> state_dim
  Tensor<Scalar> step_embedding;    // [T_max x H]
  // low-rank shift machinery
  Tensor<Scalar> w_basis_gate;      // [state_dim x r]
  Tensor<Scalar> w_down;            // [H x r]
  Tensor<Scalar> w_up;              // [r x H]
  Tensor<Scalar> w_slot;            // [state_dim x K]
  Tensor<Scalar> delta_q;           // [max(K-1,1) x H]; slot 0 uses a fixed zero bias
  Tensor<Scalar> theta_gamma;       // 1x1, gamma = sigmoid(theta_gamma)
  AttentionParams<Scalar> align_attention;
  Tensor<Scalar> w_align;           // [H x H]
  LayerNormParams<Scalar> ln;       // shared across hypotheses
  // fusion block f (separate parameter group)
  AttentionParams<Scalar> fusion_attention;
  MlpParams<Scalar> fusion_ff;      // [H -> H -> H]

  int hypotheses = 1;

  ExpansionParams() = default;
  explicit ExpansionParams(const ModelConfig& cfg)
      : phi(2 * cfg.hidden_dim + cfg.hidden_dim, cfg.state_dim, cfg.state_dim),
        step_embedding(cfg.max_episode_len, cfg.hidden_dim),
        w_basis_gate(cfg.state_dim, cfg.rank),
        w_down(cfg.hidden_dim, cfg.rank),
        w_up(cfg.rank, cfg.hidden_dim),
        w_slot(cfg.state_dim, std::max(cfg.hypotheses, 1)),
        delta_q(std::max(cfg.hypotheses - 1, 1), cfg.hidden_dim),
        theta_gamma(1, 1),
        align_attention(cfg.hidden_dim),
        w_align(cfg.hidden_dim, cfg.hidden_dim),
        ln(cfg.hidden_dim),
        fusion_attention(cfg.hidden_dim),
        fusion_ff(cfg.hidden_dim, cfg.hidden_dim, cfg.hidden_dim),
        hypotheses(std::max(cfg.hypotheses, 1)) {}

  void init(Rng& rng) {
    phi.init(rng);
    init_fan_in(step_embedding, rng);
    init_fan_in(w_basis_gate, rng);
    init_fan_in(w_down, rng);
    init_fan_in(w_up, rng);
    init_fan_in(w_slot, rng);
    init_gaussian(delta_q, rng, Scalar(0.1));
    theta_gamma.value.setZero();  // gamma starts at 0.5
    align_attention.init(rng);
    init_fan_in(w_align, rng);
    ln.init();
    fusion_attention.init(rng);
    fusion_ff.init(rng);
  }

  void visit(const ParamVisitor<Scalar>& v) {
    phi.visit("hsg", "hsg.phi", v);
    v("hsg", "hsg.step_embedding", step_embedding);
    v("hsg", "hsg.w_basis_gate", w_basis_gate);
    v("hsg", "hsg.w_down", w_down);
    v("hsg", "hsg.w_up", w_up);
    v("hsg", "hsg.w_slot", w_slot);
    v("hsg", "hsg.delta_q", delta_q);
    align_attention.visit("hsg", "hsg.align_attention", v);
    v("hsg", "hsg.w_align", w_align);
    ln.visit("hsg", "hsg.ln", v);
    v("theta_gamma", "hsg.theta_gamma", theta_gamma);
    fusion_attention.visit("fusion", "fusion.attention", v);
    fusion_ff.visit("fusion", "fusion.ff", v);
  }
};

// Token context of one hypothesis plus the shared instruction mask.
template <typename Scalar>
struct HypothesisBank {
  std::vector<ad::Var<Scalar>> contexts;  // K fused contexts, anchor at slot 0
  std::vector<bool> mask;                 // instruction mask, shared
  std::vector<Scalar> gating;             // pi_t values (simplex)
  static constexpr int anchor_index = 0;

  int size() const { return static_cast<int>(contexts.size()); }
};

// Differentiable inputs of one decision step.
template <typename Scalar>
struct ContextVars {
  ad::Var<Scalar> instruction;  // [L x H]
  std::vector<bool> instruction_mask;
  ad::Var<Scalar> evidence;     // [M x H]
  std::vector<bool> evidence_mask;
  int step = 0;
};

// s_t = phi([pool(T), pool(E), e(t)])
template <typename Scalar>
ad::Var<Scalar> state_summary(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p,
                              const ContextVars<Scalar>& ctx) {
  if (ctx.step < 0 || ctx.step >= static_cast<int>(p.step_embedding.value.rows()))
    throw ValidationError("state_summary: step outside the episode horizon");
  auto pooled_instruction = masked_pool(ctx.instruction, ctx.instruction_mask);
  auto pooled_evidence = masked_pool(ctx.evidence, ctx.evidence_mask);
  auto step_code = select_row(tape, p.step_embedding, ctx.step);
  auto joint = ad::concat_cols<Scalar>({pooled_instruction, pooled_evidence, step_code});
  return p.phi.apply(tape, joint);
}

// B_t: tokens flow x -> x W_d -> sigmoid gate -> x W_u; rank(B_t) <= r.
template <typename Scalar>
ad::Var<Scalar> build_shift_basis(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p, ad::Var<Scalar> s) {
  if (!ad::all_finite(s.value())) throw ValidationError("build_shift_basis: non-finite state summary");
  auto gate = ad::sigmoid(ad::matmul(s, p.w_basis_gate.use(tape)));  // [1 x r]
  auto broadcast = ad::matmul(tape.constant(Matrix<Scalar>::Ones(p.w_down.value.rows(), 1)), gate);
  auto gated_down = ad::hadamard(p.w_down.use(tape), broadcast);     // [H x r]
  return ad::matmul(gated_down, p.w_up.use(tape));                   // [H x H]
}

// pi_t = softmax(s_t W_slot) over the K hypothesis slots.
template <typename Scalar>
ad::Var<Scalar> slot_gating(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p, ad::Var<Scalar> s) {
  return ad::softmax_rows(ad::matmul(s, p.w_slot.use(tape)));
}

// Query bias for slot k; slot 0 is pinned to zero.
template <typename Scalar>
ad::Var<Scalar> query_bias(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p, int k) {
  if (k == 0) return tape.constant(Matrix<Scalar>::Zero(1, p.delta_q.value.cols()));
  return select_row(tape, p.delta_q, k - 1);
}

// Cross-attention alignment residual for slot k >= 1: layer-normed instruction
// queries (offset by the slot bias) attend to evidence, projected by W_align.
// Masked instruction rows produce a zero residual; fully masked evidence
// degenerates to a zero residual.
template <typename Scalar>
ad::Var<Scalar> alignment_residual(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p,
                                   ad::Var<Scalar> instruction_ln, const std::vector<bool>& instruction_mask,
                                   ad::Var<Scalar> evidence, const std::vector<bool>& evidence_mask, int k) {
  if (k < 1) throw ValidationError("alignment_residual: defined for shifted slots only");
  const bool any_evidence = std::find(evidence_mask.begin(), evidence_mask.end(), true) != evidence_mask.end();
  if (!any_evidence)
    return tape.constant(Matrix<Scalar>::Zero(instruction_ln.rows(), instruction_ln.cols()));
  auto bias = query_bias(tape, p, k);
  auto attended = attention(tape, p.align_attention, instruction_ln, evidence, evidence_mask, &bias);
  auto projected = ad::matmul(attended, p.w_align.use(tape));
  Matrix<Scalar> row_gate = Matrix<Scalar>::Zero(instruction_ln.rows(), instruction_ln.cols());
  for (Eigen::Index i = 0; i < instruction_ln.rows(); ++i)
    if (instruction_mask[static_cast<std::size_t>(i)]) row_gate.row(i).setOnes();
  return ad::hadamard(projected, tape.constant(std::move(row_gate)));
}

// Hypothesis instruction states: slot 0 is the raw instruction, slots k >= 1
// receive the gated low-rank shift plus the bounded alignment residual.
template <typename Scalar>
std::vector<ad::Var<Scalar>> generate_hypotheses(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p,
                                                 const ContextVars<Scalar>& ctx, ad::Var<Scalar> s,
                                                 ad::Var<Scalar>* gating_out = nullptr) {
  const int k_total = p.hypotheses;
  std::vector<ad::Var<Scalar>> states;
  states.push_back(ctx.instruction);
  if (k_total == 1) {
    if (gating_out != nullptr) *gating_out = tape.constant(Matrix<Scalar>::Ones(1, 1));
    return states;
  }
  auto instruction_ln = p.ln.apply(tape, ctx.instruction);
  auto basis = build_shift_basis(tape, p, s);
  auto gating = slot_gating(tape, p, s);
  if (gating_out != nullptr) *gating_out = gating;
  auto gamma = ad::sigmoid(p.theta_gamma.use(tape));
  auto global_shift = ad::matmul(instruction_ln, basis);
  for (int k = 1; k < k_total; ++k) {
    auto slot_weight = ad::pick(gating, 0, k);
    auto residual = alignment_residual(tape, p, instruction_ln, ctx.instruction_mask, ctx.evidence,
                                       ctx.evidence_mask, k);
    auto shift = ad::add(ad::scale(global_shift, slot_weight),
                         ad::scale(ad::scale(residual, slot_weight), gamma));
    states.push_back(ad::add(instruction_ln, shift));
  }
  return states;
}

// f: one instruction-to-evidence cross-attention layer (queries offset by the
// slot bias) followed by a feed-forward layer, residual at both sublayers.
// Parameters are shared across hypotheses. Fully masked evidence degenerates
// to a zero attention context.
template <typename Scalar>
ad::Var<Scalar> fuse_context(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p, ad::Var<Scalar> state,
                             ad::Var<Scalar> evidence, const std::vector<bool>& evidence_mask,
                             ad::Var<Scalar> bias) {
  const bool any_evidence = std::find(evidence_mask.begin(), evidence_mask.end(), true) != evidence_mask.end();
  ad::Var<Scalar> attended;
  if (any_evidence) {
    attended = attention(tape, p.fusion_attention, state, evidence, evidence_mask, &bias);
  } else {
    attended = tape.constant(Matrix<Scalar>::Zero(state.rows(), state.cols()));
  }
  auto y = ad::add(state, attended);
  return ad::add(y, p.fusion_ff.apply(tape, y));
}

// Full 1->K expansion: summary -> basis -> gating -> shifts -> shared fusion.
template <typename Scalar>
HypothesisBank<Scalar> expand(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p,
                              const ContextVars<Scalar>& ctx) {
  HypothesisBank<Scalar> bank;
  bank.mask = ctx.instruction_mask;
  if (p.hypotheses == 1) {
    bank.contexts.push_back(
        fuse_context(tape, p, ctx.instruction, ctx.evidence, ctx.evidence_mask, query_bias(tape, p, 0)));
    bank.gating = {Scalar(1)};
    return bank;
  }
  auto s = state_summary(tape, p, ctx);
  ad::Var<Scalar> gating;
  auto states = generate_hypotheses(tape, p, ctx, s, &gating);
  for (int k = 0; k < p.hypotheses; ++k) {
    bank.contexts.push_back(
        fuse_context(tape, p, states[k], ctx.evidence, ctx.evidence_mask, query_bias(tape, p, k)));
    bank.gating.push_back(gating.value()(0, k));
  }
  return bank;
}

// Probe the magnitude of the structured shifts without touching gradients;
// feeds the running norm target of the noise arm.
template <typename Scalar>
Scalar probe_shift_norm(ExpansionParams<Scalar>& p, const DecisionContext<Scalar>& ctx_plain, int step) {
  if (p.hypotheses < 2) return Scalar(0);
  ad::Tape<Scalar> scratch;
  ContextVars<Scalar> ctx;
  ctx.instruction = scratch.constant(ctx_plain.instruction.values);
  ctx.instruction_mask = ctx_plain.instruction.mask;
  ctx.evidence = scratch.constant(ctx_plain.evidence.values);
  ctx.evidence_mask = ctx_plain.evidence.mask;
  ctx.step = step;
  auto s = state_summary(scratch, p, ctx);
  auto states = generate_hypotheses(scratch, p, ctx, s);
  auto anchor_ln = p.ln.apply(scratch, ctx.instruction);
  Scalar total = 0;
  int rows = 0;
  for (std::size_t k = 1; k < states.size(); ++k) {
    Matrix<Scalar> shift = states[k].value() - anchor_ln.value();
    for (Eigen::Index i = 0; i < shift.rows(); ++i) {
      if (!ctx.instruction_mask[static_cast<std::size_t>(i)]) continue;
      total += shift.row(i).norm();
      ++rows;
    }
  }
  return rows > 0 ? total / static_cast<Scalar>(rows) : Scalar(0);
}

// Noise-arm expansion: anchor untouched; slots k >= 1 get i.i.d. Gaussian row
// shifts rescaled to sigma times the recorded running mean norm of the
// structured shifts, then fused with zero query bias.
template <typename Scalar>
HypothesisBank<Scalar> noise_expand(ad::Tape<Scalar>& tape, ExpansionParams<Scalar>& p,
                                    const ContextVars<Scalar>& ctx, Scalar sigma, Scalar matched_norm,
                                    Rng& rng) {
  if (sigma < Scalar(0)) throw ValidationError("noise_expand: sigma must be >= 0");
  HypothesisBank<Scalar> bank;
  bank.mask = ctx.instruction_mask;
  auto zero_bias = query_bias(tape, p, 0);
  bank.contexts.push_back(fuse_context(tape, p, ctx.instruction, ctx.evidence, ctx.evidence_mask, zero_bias));
  bank.gating.assign(static_cast<std::size_t>(p.hypotheses), Scalar(1) / static_cast<Scalar>(p.hypotheses));
  if (p.hypotheses == 1) {
    bank.gating = {Scalar(1)};
    return bank;
  }
  auto instruction_ln = p.ln.apply(tape, ctx.instruction);
  for (int k = 1; k < p.hypotheses; ++k) {
    Matrix<Scalar> eps = Matrix<Scalar>::Zero(ctx.instruction.rows(), ctx.instruction.cols());
    for (Eigen::Index i = 0; i < eps.rows(); ++i) {
      if (!ctx.instruction_mask[static_cast<std::size_t>(i)]) continue;
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic> u(eps.cols());
      for (Eigen::Index j = 0; j < eps.cols(); ++j) u(j) = gaussian<Scalar>(rng);
      Scalar n = u.norm();
      if (n > Scalar(0)) eps.row(i) = u * (sigma * matched_norm / n);
    }
    auto shifted = ad::add(instruction_ln, tape.constant(std::move(eps)));
    bank.contexts.push_back(fuse_context(tape, p, shifted, ctx.evidence, ctx.evidence_mask, zero_bias));
  }
  return bank;
}

}  // namespace sdb

#pragma once

// The K->1 stage: reliability cues (alignment / confidence / stability),
// scalar scoring, softmax controller weights, soft consolidation for the
// training signal, and EMA-smoothed hard selection for execution.

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "sdb/autodiff.hpp"
#include "sdb/core.hpp"
#include "sdb/expansion.hpp"
#include "sdb/nn.hpp"

namespace sdb {

template <typename Scalar>
struct SelectionParams {
  MlpParams<Scalar> g_psi;   // cue scorer [3 -> hidden -> 1]
  Tensor<Scalar> theta_rho;  // 1x1, rho = sigmoid(theta_rho)

  SelectionParams() = default;
  explicit SelectionParams(const ModelConfig& cfg) : g_psi(3, cfg.gpsi_hidden, 1), theta_rho(1, 1) {}

  void init(Rng& rng) {
    g_psi.init(rng);
    theta_rho.value.setZero();  // rho starts at 0.5
  }

  void visit(const ParamVisitor<Scalar>& v) {
    g_psi.visit("gpsi", "selection.g_psi", v);
    v("theta_rho", "selection.theta_rho", theta_rho);
  }

  Scalar rho() const { return Scalar(1) / (Scalar(1) + std::exp(-theta_rho.value(0, 0))); }
};

// Episode-local controller memory. Reset at episode start; single writer.
template <typename Scalar>
struct ControllerState {
  std::vector<Scalar> ema_weights;                     // w-bar
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> prev_descriptor;  // h-dagger
  bool has_prev = false;
  int last_step = -1;

  void reset() {
    ema_weights.clear();
    prev_descriptor.resize(0);
    has_prev = false;
    last_step = -1;
  }
};

template <typename Scalar>
struct ReliabilityCues {
  ad::Var<Scalar> alignment;   // A, cosine to anchor descriptor
  ad::Var<Scalar> confidence;  // C, negative action entropy
  ad::Var<Scalar> stability;   // S, cosine to previous-step descriptor
};

// Pooled descriptor of one hypothesis context; rejects collapsed vectors.
template <typename Scalar>
ad::Var<Scalar> pooled_descriptor(ad::Var<Scalar> context, const std::vector<bool>& mask) {
  auto pooled = masked_pool(context, mask);
  if (pooled.value().norm() < Scalar(1e-12)) throw ZeroVectorError();
  return pooled;
}

// C cue from head logits: C = -entropy(softmax(z)) = sum_j p_j z_j - lse(z).
template <typename Scalar>
ad::Var<Scalar> negative_entropy(ad::Var<Scalar> logits) {
  auto probs = ad::softmax_rows(logits);
  auto expected_logit = ad::sum_all(ad::hadamard(probs, logits));
  return ad::sub(expected_logit, ad::logsumexp_row(logits));
}

// ACS cues per hypothesis. `descriptors` are the pooled bank descriptors;
// `hyp_logits` are head logits per hypothesis; `prev` is the previous-step
// descriptor node, or invalid at the first step, in which case the current
// anchor descriptor plays that role.
template <typename Scalar>
std::vector<ReliabilityCues<Scalar>> compute_acs(ad::Tape<Scalar>& tape,
                                                 const std::vector<ad::Var<Scalar>>& descriptors,
                                                 const std::vector<ad::Var<Scalar>>& hyp_logits,
                                                 ad::Var<Scalar> prev) {
  const int k_total = static_cast<int>(descriptors.size());
  const bool first_step = !prev.valid();
  std::vector<ReliabilityCues<Scalar>> cues;
  cues.reserve(k_total);
  for (int k = 0; k < k_total; ++k) {
    ReliabilityCues<Scalar> c;
    c.alignment = (k == 0) ? tape.constant_scalar(Scalar(1)) : ad::cosine(descriptors[k], descriptors[0]);
    c.confidence = negative_entropy(hyp_logits[k]);
    if (first_step) {
      c.stability = (k == 0) ? tape.constant_scalar(Scalar(1)) : ad::cosine(descriptors[k], descriptors[0]);
    } else {
      c.stability = ad::cosine(descriptors[k], prev);
    }
    cues.push_back(c);
  }
  return cues;
}

// a^(k) = g_psi([A, C, S]), with optional cue dropping (zeroed before g_psi).
template <typename Scalar>
std::vector<ad::Var<Scalar>> reliability_scores(ad::Tape<Scalar>& tape, SelectionParams<Scalar>& p,
                                                const std::vector<ReliabilityCues<Scalar>>& cues,
                                                const std::array<bool, 3>& drop = {false, false, false}) {
  Matrix<Scalar> keep_row(1, 3);
  for (int j = 0; j < 3; ++j) keep_row(0, j) = drop[static_cast<std::size_t>(j)] ? Scalar(0) : Scalar(1);
  auto keep = tape.constant(keep_row);
  std::vector<ad::Var<Scalar>> scores;
  scores.reserve(cues.size());
  for (const auto& c : cues) {
    auto row = ad::concat_cols<Scalar>({c.alignment, c.confidence, c.stability});
    scores.push_back(p.g_psi.apply(tape, ad::hadamard(row, keep)));
  }
  return scores;
}

// w_t = softmax over hypothesis scores.
template <typename Scalar>
ad::Var<Scalar> controller_weights(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& scores) {
  if (scores.empty()) throw ValidationError("controller_weights: no hypotheses");
  return ad::softmax_rows(ad::concat_cols(scores));
}

// H_acs = sum_k w^(k) H^(k); carries the instruction mask.
template <typename Scalar>
ad::Var<Scalar> soft_consolidate(const HypothesisBank<Scalar>& bank, ad::Var<Scalar> weights) {
  if (static_cast<int>(weights.cols()) != bank.size())
    throw ValidationError("soft_consolidate: weight/bank size mismatch");
  ad::Var<Scalar> acc = ad::scale(bank.contexts[0], ad::pick(weights, 0, 0));
  for (int k = 1; k < bank.size(); ++k)
    acc = ad::add(acc, ad::scale(bank.contexts[k], ad::pick(weights, 0, k)));
  return acc;
}

struct SelectionOutcome {
  int chosen = 0;  // k*, argmax of the smoothed weights (ties toward slot 0)
};

// EMA update of the controller weights followed by hard selection.
// w-bar_t = (1-rho) w-bar_{t-1} + rho w_t, initialized at the first step with
// w_1. The caller stores the next h-dagger after pooling the committed or
// consolidated context.
template <typename Scalar>
SelectionOutcome stable_select(ControllerState<Scalar>& state, const std::vector<Scalar>& weights,
                               Scalar rho, int step) {
  if (state.last_step + 1 != step) throw StaleStateError();
  if (state.ema_weights.empty()) {
    state.ema_weights = weights;
  } else {
    if (state.ema_weights.size() != weights.size())
      throw ValidationError("stable_select: hypothesis count changed mid-episode");
    for (std::size_t k = 0; k < weights.size(); ++k)
      state.ema_weights[k] = (Scalar(1) - rho) * state.ema_weights[k] + rho * weights[k];
  }
  state.last_step = step;
  SelectionOutcome out;
  Scalar best = state.ema_weights[0];
  for (std::size_t k = 1; k < state.ema_weights.size(); ++k) {
    if (state.ema_weights[k] > best) {
      best = state.ema_weights[k];
      out.chosen = static_cast<int>(k);
    }
  }
  return out;
}

// Uniformly random slot (the Rand ablation arm).
template <typename Scalar>
int random_select(const HypothesisBank<Scalar>& bank, Rng& rng) {
  if (bank.size() == 0) throw ValidationError("random_select: empty bank");
  return uniform_int(rng, 0, bank.size() - 1);
}

}  // namespace sdb

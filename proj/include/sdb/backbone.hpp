#pragma once

// Minimal instruction/evidence encoders and the shared navigation head.
// Produces the (T_t, E_t) token streams the expansion stage consumes and the
// action distribution over the candidate set (STOP last).

#include <string>
#include <vector>

#include "sdb/autodiff.hpp"
#include "sdb/core.hpp"
#include "sdb/nav_world.hpp"
#include "sdb/nn.hpp"

namespace sdb {

template <typename Scalar>
struct BackboneParams {
  Tensor<Scalar> token_embedding;       // [vocab x H]
  AttentionParams<Scalar> self_attention;
  Tensor<Scalar> evidence_projection;   // [2*env_dim x H]
  Tensor<Scalar> evidence_bias;         // [1 x H]
  Tensor<Scalar> stop_embedding;        // [1 x H]
  Tensor<Scalar> head_projection;       // [H x H]

  BackboneParams() = default;
  explicit BackboneParams(const ModelConfig& cfg)
      : token_embedding(cfg.vocab_size(), cfg.hidden_dim),
        self_attention(cfg.hidden_dim),
        evidence_projection(2 * cfg.env_dim, cfg.hidden_dim),
        evidence_bias(1, cfg.hidden_dim),
        stop_embedding(1, cfg.hidden_dim),
        head_projection(cfg.hidden_dim, cfg.hidden_dim) {}

  void init(Rng& rng) {
    init_fan_in(token_embedding, rng);
    self_attention.init(rng);
    init_fan_in(evidence_projection, rng);
    evidence_bias.value.setZero();
    init_gaussian(stop_embedding, rng, Scalar(1) / std::sqrt(static_cast<Scalar>(stop_embedding.value.cols())));
    init_fan_in(head_projection, rng);
  }

  void visit(const ParamVisitor<Scalar>& v) {
    v("encoder", "encoder.token_embedding", token_embedding);
    self_attention.visit("encoder", "encoder.self_attention", v);
    v("encoder", "encoder.evidence_projection", evidence_projection);
    v("encoder", "encoder.evidence_bias", evidence_bias);
    v("encoder", "encoder.stop_embedding", stop_embedding);
    v("head", "head.projection", head_projection);
  }
};

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(int len, int dim) {
  Matrix<Scalar> pe(len, dim);
  for (int pos = 0; pos < len; ++pos) {
    for (int j = 0; j < dim; ++j) {
      double angle = pos / std::pow(10000.0, 2.0 * (j / 2) / dim);
      pe(pos, j) = static_cast<Scalar>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

// Token embedding + sinusoidal position + one residual self-attention layer.
template <typename Scalar>
ad::Var<Scalar> encode_instruction(ad::Tape<Scalar>& tape, BackboneParams<Scalar>& p,
                                   const std::vector<int>& tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw EmptyInstructionError();
  if (static_cast<int>(tokens.size()) > cfg.max_instruction_len)
    throw ValidationError("encode_instruction: instruction longer than max_instruction_len");
  auto x = gather_rows(tape, p.token_embedding, tokens);
  auto pos = tape.constant(sinusoidal_positions<Scalar>(static_cast<int>(tokens.size()), cfg.hidden_dim));
  x = ad::add(x, pos);
  std::vector<bool> mask(tokens.size(), true);
  return ad::add(x, attention(tape, p.self_attention, x, x, mask));
}

// One evidence token per candidate (neighbor feature ++ history summary,
// projected) plus a STOP token from the stop embedding. STOP is last,
// matching the candidate ordering.
template <typename Scalar>
ad::Var<Scalar> encode_environment(ad::Tape<Scalar>& tape, BackboneParams<Scalar>& p,
                                   const NavGraph& graph, const CandidateSet& candidates,
                                   const Eigen::RowVectorXd& history_mean) {
  const int env_dim = static_cast<int>(history_mean.cols());
  std::vector<ad::Var<Scalar>> rows;
  if (!candidates.neighbor_ids.empty()) {
    Matrix<Scalar> feats(static_cast<Eigen::Index>(candidates.neighbor_ids.size()), 2 * env_dim);
    for (std::size_t i = 0; i < candidates.neighbor_ids.size(); ++i) {
      feats.row(static_cast<Eigen::Index>(i)).leftCols(env_dim) =
          graph.nodes[candidates.neighbor_ids[i]].feature.template cast<Scalar>();
      feats.row(static_cast<Eigen::Index>(i)).rightCols(env_dim) = history_mean.template cast<Scalar>();
    }
    rows.push_back(ad::add_rowvec(ad::matmul(tape.constant(std::move(feats)), p.evidence_projection.use(tape)),
                                  p.evidence_bias.use(tape)));
  }
  rows.push_back(p.stop_embedding.use(tape));
  return rows.size() == 1 ? rows[0] : ad::concat_rows(rows);
}

// score_i = <pool(H_ctx) W_head, E_i>, softmaxed by the caller.
template <typename Scalar>
ad::Var<Scalar> action_logits(ad::Tape<Scalar>& tape, BackboneParams<Scalar>& p, ad::Var<Scalar> context,
                              const std::vector<bool>& context_mask, ad::Var<Scalar> evidence) {
  auto pooled = masked_pool(context, context_mask);
  auto query = ad::matmul(pooled, p.head_projection.use(tape));
  return ad::matmul(query, ad::transpose(evidence));  // [1 x num_actions]
}

template <typename Scalar>
ActionDistribution<Scalar> to_distribution(ad::Var<Scalar> probs_row) {
  ActionDistribution<Scalar> d;
  d.probabilities.resize(static_cast<std::size_t>(probs_row.cols()));
  for (Eigen::Index j = 0; j < probs_row.cols(); ++j)
    d.probabilities[static_cast<std::size_t>(j)] = probs_row.value()(0, j);
  return d;
}

}  // namespace sdb

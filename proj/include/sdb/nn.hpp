#pragma once

// Small shared building blocks: parameter init, two-layer perceptrons, and
// single-head scaled dot-product attention composed from tape primitives.

#include <cmath>
#include <string>
#include <vector>

#include "sdb/autodiff.hpp"
#include "sdb/core.hpp"
#include "sdb/rng.hpp"

namespace sdb {

template <typename Scalar>
void init_gaussian(Tensor<Scalar>& t, Rng& rng, Scalar scale) {
  for (Eigen::Index i = 0; i < t.value.rows(); ++i)
    for (Eigen::Index j = 0; j < t.value.cols(); ++j) t.value(i, j) = gaussian<Scalar>(rng) * scale;
  t.grad.setZero();
}

template <typename Scalar>
void init_fan_in(Tensor<Scalar>& t, Rng& rng) {
  init_gaussian(t, rng, Scalar(1) / std::sqrt(static_cast<Scalar>(t.value.rows())));
}

// ---- two-layer perceptron (ReLU hidden) -------------------------------------

template <typename Scalar>
struct MlpParams {
  Tensor<Scalar> w1, b1, w2, b2;

  MlpParams() = default;
  MlpParams(int in, int hidden, int out)
      : w1(in, hidden), b1(1, hidden), w2(hidden, out), b2(1, out) {}

  void init(Rng& rng) {
    init_fan_in(w1, rng);
    init_fan_in(w2, rng);
    b1.value.setZero();
    b2.value.setZero();
  }

  void visit(const std::string& group, const std::string& prefix, const ParamVisitor<Scalar>& v) {
    v(group, prefix + ".w1", w1);
    v(group, prefix + ".b1", b1);
    v(group, prefix + ".w2", w2);
    v(group, prefix + ".b2", b2);
  }

  ad::Var<Scalar> apply(ad::Tape<Scalar>& tape, ad::Var<Scalar> x) {
    auto h = ad::relu(ad::add_rowvec(ad::matmul(x, w1.use(tape)), b1.use(tape)));
    return ad::add_rowvec(ad::matmul(h, w2.use(tape)), b2.use(tape));
  }
};

// ---- single-head attention ---------------------------------------------------

template <typename Scalar>
struct AttentionParams {
  Tensor<Scalar> w_query, w_key, w_value;  // all [H x H]

  AttentionParams() = default;
  explicit AttentionParams(int h) : w_query(h, h), w_key(h, h), w_value(h, h) {}

  void init(Rng& rng) {
    init_fan_in(w_query, rng);
    init_fan_in(w_key, rng);
    init_fan_in(w_value, rng);
  }

  void visit(const std::string& group, const std::string& prefix, const ParamVisitor<Scalar>& v) {
    v(group, prefix + ".wq", w_query);
    v(group, prefix + ".wk", w_key);
    v(group, prefix + ".wv", w_value);
  }
};

// Scaled dot-product attention from `queries` rows onto `context` rows.
// `query_bias` (optional [1 x H]) is added to the projected queries.
// Context columns with mask false receive zero attention; the caller must
// ensure at least one context row is valid.
template <typename Scalar>
ad::Var<Scalar> attention(ad::Tape<Scalar>& tape, AttentionParams<Scalar>& p, ad::Var<Scalar> queries,
                          ad::Var<Scalar> context, const std::vector<bool>& context_mask,
                          const ad::Var<Scalar>* query_bias = nullptr) {
  auto q = ad::matmul(queries, p.w_query.use(tape));
  if (query_bias != nullptr) q = ad::add_rowvec(q, *query_bias);
  auto k = ad::matmul(context, p.w_key.use(tape));
  auto v = ad::matmul(context, p.w_value.use(tape));
  const Scalar inv_sqrt_dim = Scalar(1) / std::sqrt(static_cast<Scalar>(queries.cols()));
  auto scores = ad::cmul(ad::matmul(q, ad::transpose(k)), inv_sqrt_dim);
  auto weights = ad::softmax_rows(scores, &context_mask);
  return ad::matmul(weights, v);
}

// ---- layer normalization parameters -----------------------------------------

template <typename Scalar>
struct LayerNormParams {
  Tensor<Scalar> gain, bias;  // [1 x H]

  LayerNormParams() = default;
  explicit LayerNormParams(int h) : gain(1, h), bias(1, h) { gain.value.setOnes(); }

  void init() {
    gain.value.setOnes();
    bias.value.setZero();
  }

  void visit(const std::string& group, const std::string& prefix, const ParamVisitor<Scalar>& v) {
    v(group, prefix + ".gain", gain);
    v(group, prefix + ".bias", bias);
  }

  ad::Var<Scalar> apply(ad::Tape<Scalar>& tape, ad::Var<Scalar> x) {
    return ad::layer_norm(x, gain.use(tape), bias.use(tape));
  }
};

// One-hot row selector: returns row `index` of a tensor as a [1 x cols] node
// with gradient routed into that row only.
template <typename Scalar>
ad::Var<Scalar> select_row(ad::Tape<Scalar>& tape, Tensor<Scalar>& t, int index) {
  Matrix<Scalar> onehot = Matrix<Scalar>::Zero(1, t.value.rows());
  onehot(0, index) = Scalar(1);
  return ad::matmul(tape.constant(std::move(onehot)), t.use(tape));
}

// Embedding lookup for a list of ids, one output row per id.
template <typename Scalar>
ad::Var<Scalar> gather_rows(ad::Tape<Scalar>& tape, Tensor<Scalar>& table, const std::vector<int>& ids) {
  Matrix<Scalar> onehot = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(ids.size()), table.value.rows());
  for (std::size_t i = 0; i < ids.size(); ++i) onehot(static_cast<Eigen::Index>(i), ids[i]) = Scalar(1);
  return ad::matmul(tape.constant(std::move(onehot)), table.use(tape));
}

}  // namespace sdb

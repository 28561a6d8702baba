#pragma once

// Shared type contracts: token matrices, masks, action distributions,
// model configuration, and masked pooling. Mask semantics everywhere in this
// library: true = valid token.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdb/autodiff.hpp"

namespace sdb {

template <typename Scalar>
using Matrix = ad::Matrix<Scalar>;

// ---- errors ----------------------------------------------------------------

struct AllMaskedError : std::domain_error {
  AllMaskedError() : std::domain_error("AllMasked: no valid token under the mask") {}
};

struct ZeroVectorError : std::domain_error {
  ZeroVectorError() : std::domain_error("ZeroVector: pooled descriptor norm below 1e-12") {}
};

struct StaleStateError : std::logic_error {
  StaleStateError() : std::logic_error("StaleState: controller state reused across steps or episodes") {}
};

struct EmptyInstructionError : std::invalid_argument {
  EmptyInstructionError() : std::invalid_argument("EmptyInstruction: instruction has no tokens") {}
};

struct NonFiniteLossError : std::runtime_error {
  NonFiniteLossError() : std::runtime_error("NonFiniteLoss: training loss is not finite") {}
};

struct ValidationError : std::invalid_argument {
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// ---- token matrices ---------------------------------------------------------

template <typename Scalar>
struct TokenMatrix {
  Matrix<Scalar> values;    // [num_tokens x H]
  std::vector<bool> mask;   // true = valid

  Eigen::Index num_tokens() const { return values.rows(); }
  Eigen::Index hidden_dim() const { return values.cols(); }

  int valid_count() const {
    int n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
  }

  static TokenMatrix all_valid(Matrix<Scalar> v) {
    TokenMatrix t;
    t.mask.assign(static_cast<std::size_t>(v.rows()), true);
    t.values = std::move(v);
    return t;
  }
};

template <typename Scalar>
struct DecisionContext {
  TokenMatrix<Scalar> instruction;  // T_t
  TokenMatrix<Scalar> evidence;     // E_t
  int step = 0;                     // 0-based internal step index
};

template <typename Scalar>
struct ActionDistribution {
  std::vector<Scalar> probabilities;  // over the candidate set, STOP last

  void validate(Scalar tol = Scalar(1e-6)) const {
    if (probabilities.empty()) throw ValidationError("ActionDistribution: empty candidate set");
    Scalar sum = 0;
    for (Scalar p : probabilities) {
      if (p < Scalar(0)) throw ValidationError("ActionDistribution: negative probability");
      sum += p;
    }
    if (std::abs(sum - Scalar(1)) > tol) throw ValidationError("ActionDistribution: probabilities do not sum to 1");
  }
};

// ---- configuration ----------------------------------------------------------

struct ModelConfig {
  int hypotheses = 3;          // K, anchor included; 0 selects the plain no-expansion pipeline
  int rank = 4;                // r, low-rank shift subspace width
  int hidden_dim = 32;         // H
  int env_dim = 16;            // raw node feature width
  int state_dim = 32;          // dim(s), state summary width (defaults to H)
  int max_instruction_len = 24;  // L
  int max_episode_len = 15;      // T
  int num_landmarks = 64;
  int num_distractors = 16;
  int gpsi_hidden = 8;
  double success_threshold = 0.0;  // delta, graph-distance units
  double lambda_agr = 0.1;
  double lambda_sm = 0.01;
  double lambda_div = 0.01;
  std::uint64_t seed = 7;

  int vocab_size() const { return num_landmarks + num_distractors; }

  void validate() const {
    if (hypotheses < 0) throw ValidationError("hypotheses must be >= 0");
    if (rank < 1 || rank > hidden_dim) throw ValidationError("rank must satisfy 1 <= r <= hidden_dim");
    if (hidden_dim < 1 || state_dim < 1 || env_dim < 1) throw ValidationError("dims must be positive");
    if (max_instruction_len < 1 || max_episode_len < 1) throw ValidationError("lengths must be positive");
    if (lambda_agr < 0 || lambda_sm < 0 || lambda_div < 0) throw ValidationError("lambdas must be non-negative");
    if (success_threshold < 0) throw ValidationError("success_threshold must be >= 0");
  }
};

// ---- masked pooling -----------------------------------------------------------

// Arithmetic mean of the rows where mask is true.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> masked_pool(const Matrix<Scalar>& values,
                                                     const std::vector<bool>& mask) {
  int n = 0;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> acc =
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(values.cols());
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      acc += values.row(i);
      ++n;
    }
  }
  if (n == 0) throw AllMaskedError();
  return acc / static_cast<Scalar>(n);
}

template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> masked_pool(const TokenMatrix<Scalar>& tokens) {
  return masked_pool(tokens.values, tokens.mask);
}

// Differentiable masked mean pooling: a constant averaging row times the matrix.
template <typename Scalar>
ad::Var<Scalar> masked_pool(ad::Var<Scalar> tokens, const std::vector<bool>& mask) {
  int n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  if (n == 0) throw AllMaskedError();
  Matrix<Scalar> w = Matrix<Scalar>::Zero(1, tokens.rows());
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) w(0, i) = Scalar(1) / static_cast<Scalar>(n);
  }
  return ad::matmul(tokens.tape->constant(std::move(w)), tokens);
}

// ---- learnable tensor + registry ---------------------------------------------

template <typename Scalar>
struct Tensor {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Tensor() = default;
  Tensor(Eigen::Index r, Eigen::Index c) : value(Matrix<Scalar>::Zero(r, c)), grad(Matrix<Scalar>::Zero(r, c)) {}

  void zero_grad() { grad.setZero(); }

  ad::Var<Scalar> use(ad::Tape<Scalar>& tape) { return tape.leaf(value, &grad); }
  ad::Var<Scalar> frozen(ad::Tape<Scalar>& tape) const { return tape.constant(value); }
};

// Visitor signature: (group, name, tensor&). Groups are stable identifiers used
// by the optimizer, the checkpoint format, and the gradient-check report.
template <typename Scalar>
using ParamVisitor = std::function<void(const std::string& group, const std::string& name, Tensor<Scalar>&)>;

}  // namespace sdb

#pragma once

// Auxiliary losses that keep the hypothesis bank diverse but coordinated:
// reliability-weighted agreement, neighbor-slot smoothness, a learnable
// diversity floor, and the combined training objective.

#include <string>
#include <vector>

#include "sdb/autodiff.hpp"
#include "sdb/core.hpp"
#include "sdb/nn.hpp"

namespace sdb {

template <typename Scalar>
struct RegularizerParams {
  Tensor<Scalar> theta_m;      // m = softplus(theta_m), diversity floor
  Tensor<Scalar> theta_omega;  // omega = softplus(theta_omega), regularizer weight

  RegularizerParams() : theta_m(1, 1), theta_omega(1, 1) { init(); }

  void init() {
    // softplus^-1(0.1): both scalars start small relative to unit-scale CE
    const Scalar v = std::log(std::exp(Scalar(0.1)) - Scalar(1));
    theta_m.value(0, 0) = v;
    theta_omega.value(0, 0) = v;
    theta_m.grad.setZero();
    theta_omega.grad.setZero();
  }

  void visit(const ParamVisitor<Scalar>& v) {
    v("theta_m", "regularizer.theta_m", theta_m);
    v("theta_omega", "regularizer.theta_omega", theta_omega);
  }

  Scalar m() const { return std::log1p(std::exp(theta_m.value(0, 0))); }
  Scalar omega() const { return std::log1p(std::exp(theta_omega.value(0, 0))); }
};

// sum_k w^(k) ||h^(k) - h_acs||^2
template <typename Scalar>
ad::Var<Scalar> agreement_loss(const std::vector<ad::Var<Scalar>>& descriptors, ad::Var<Scalar> weights,
                               ad::Var<Scalar> consolidated_descriptor) {
  ad::Var<Scalar> acc;
  for (std::size_t k = 0; k < descriptors.size(); ++k) {
    auto term = ad::mul11(ad::pick(weights, 0, static_cast<Eigen::Index>(k)),
                          ad::sum_squares(ad::sub(descriptors[k], consolidated_descriptor)));
    acc = (k == 0) ? term : ad::add(acc, term);
  }
  return acc;
}

// sum_{k>=1} ||h^(k) - h^(k-1)||^2; zero for a single hypothesis.
template <typename Scalar>
ad::Var<Scalar> smoothness_loss(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& descriptors) {
  if (descriptors.size() < 2) return tape.constant_scalar(Scalar(0));
  ad::Var<Scalar> acc;
  for (std::size_t k = 1; k < descriptors.size(); ++k) {
    auto term = ad::sum_squares(ad::sub(descriptors[k], descriptors[k - 1]));
    acc = (k == 1) ? term : ad::add(acc, term);
  }
  return acc;
}

// max(0, m - Var_k) with m = softplus(theta_m) and Var_k the mean
// per-dimension population variance of the descriptors across hypotheses.
template <typename Scalar>
ad::Var<Scalar> diversity_floor_loss(ad::Tape<Scalar>& tape, RegularizerParams<Scalar>& p,
                                     const std::vector<ad::Var<Scalar>>& descriptors) {
  auto stacked = ad::concat_rows(descriptors);
  auto variance = ad::mean_row_variance(stacked);
  auto floor = ad::softplus(p.theta_m.use(tape));
  return ad::relu(ad::sub(floor, variance));
}

// lambda-weighted compact combination.
template <typename Scalar>
ad::Var<Scalar> sdb_loss(ad::Var<Scalar> agr, ad::Var<Scalar> sm, ad::Var<Scalar> div,
                         Scalar lambda_agr, Scalar lambda_sm, Scalar lambda_div) {
  if (lambda_agr < 0 || lambda_sm < 0 || lambda_div < 0)
    throw ValidationError("sdb_loss: lambdas must be non-negative");
  return ad::add(ad::add(ad::cmul(agr, lambda_agr), ad::cmul(sm, lambda_sm)), ad::cmul(div, lambda_div));
}

// total = task cross-entropy + softplus(theta_omega) * sdb
template <typename Scalar>
ad::Var<Scalar> total_loss(ad::Tape<Scalar>& tape, RegularizerParams<Scalar>& p, ad::Var<Scalar> task_loss,
                           ad::Var<Scalar> sdb) {
  auto omega = ad::softplus(p.theta_omega.use(tape));
  return ad::add(task_loss, ad::mul11(omega, sdb));
}

// Scalar record of one logging step; mirrors the training CSV columns.
struct LossBreakdown {
  double duet = 0;   // task cross-entropy (per-step mean)
  double agr = 0;
  double sm = 0;
  double div = 0;
  double sdb = 0;
  double omega = 0;
  double m = 0;
  double gamma = 0;
  double rho = 0;
  double total = 0;
};

}  // namespace sdb

#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>
#include <vector>

#include "sdb/autodiff.hpp"

using sdb::ad::Matrix;
using sdb::ad::Tape;
using sdb::ad::Var;

namespace {

using Mat = Matrix<double>;

Mat random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

// Central finite differences of a scalar-valued function of several matrix
// inputs, compared against the tape's analytic gradients.
void check_gradients(const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& f,
                     std::vector<Mat> inputs, double eps = 1e-6, double tol = 1e-6) {
  std::vector<Mat> grads(inputs.size());
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], &grads[i]));
    Var<double> loss = f(tape, vars);
    REQUIRE(loss.value().size() == 1);
    tape.backward(loss);
  }
  auto eval = [&](const std::vector<Mat>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const Mat& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value()(0, 0);
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Mat numeric = Mat::Zero(inputs[i].rows(), inputs[i].cols());
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        std::vector<Mat> xs = inputs;
        xs[i](r, c) += eps;
        double up = eval(xs);
        xs[i](r, c) -= 2 * eps;
        double down = eval(xs);
        numeric(r, c) = (up - down) / (2 * eps);
      }
    }
    if (grads[i].size() == 0) grads[i] = Mat::Zero(inputs[i].rows(), inputs[i].cols());
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        double a = grads[i](r, c), n = numeric(r, c);
        double denom = std::max({std::abs(a), std::abs(n), 1e-4});
        INFO("input " << i << " at (" << r << "," << c << "): analytic " << a << " numeric " << n);
        REQUIRE(std::abs(a - n) / denom < tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("quadratic sanity: analytic matches exact gradient") {
  std::mt19937_64 rng(1);
  Mat x = random_matrix(rng, 3, 4);
  Mat grad;
  Tape<double> tape;
  auto v = tape.leaf(x, &grad);
  auto loss = sdb::ad::sum_squares(v);
  tape.backward(loss);
  Mat expected = 2.0 * x;
  REQUIRE((grad - expected).norm() / expected.norm() < 1e-12);
}

TEST_CASE("matmul chain gradients") {
  std::mt19937_64 rng(2);
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        return sdb::ad::sum_squares(sdb::ad::matmul(v[0], v[1]));
      },
      {random_matrix(rng, 3, 5), random_matrix(rng, 5, 4)});
}

TEST_CASE("elementwise op gradients") {
  std::mt19937_64 rng(3);
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        auto a = sdb::ad::tanh_of(v[0]);
        auto b = sdb::ad::sigmoid(v[1]);
        auto c = sdb::ad::softplus(v[2]);
        return sdb::ad::sum_all(sdb::ad::hadamard(sdb::ad::add(a, b), c));
      },
      {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)});
}

TEST_CASE("relu gradient away from the kink") {
  Mat x(1, 4);
  x << -1.0, 0.5, 2.0, -0.25;
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) { return sdb::ad::sum_squares(sdb::ad::relu(v[0])); },
      {x});
}

TEST_CASE("softmax rows: simplex output and gradients") {
  std::mt19937_64 rng(4);
  Mat z = random_matrix(rng, 3, 5);
  {
    Tape<double> tape;
    auto p = sdb::ad::softmax_rows(tape.constant(z));
    for (Eigen::Index i = 0; i < 3; ++i) {
      REQUIRE(p.value().row(i).sum() == Catch::Approx(1.0).margin(1e-12));
      REQUIRE(p.value().row(i).minCoeff() >= 0.0);
    }
  }
  std::mt19937_64 rng_w(5);
  Mat w = random_matrix(rng_w, 3, 5);
  check_gradients(
      [w](Tape<double>& t, std::vector<Var<double>>& v) {
        return sdb::ad::sum_all(sdb::ad::hadamard(sdb::ad::softmax_rows(v[0]), t.constant(w)));
      },
      {z});
}

TEST_CASE("masked softmax zeroes dropped columns") {
  Mat z(1, 4);
  z << 3.0, -1.0, 2.0, 0.5;
  std::vector<bool> keep{true, false, true, false};
  Tape<double> tape;
  auto p = sdb::ad::softmax_rows(tape.constant(z), &keep);
  REQUIRE(p.value()(0, 1) == 0.0);
  REQUIRE(p.value()(0, 3) == 0.0);
  REQUIRE(p.value().sum() == Catch::Approx(1.0).margin(1e-12));
  Mat w(1, 4);
  w << 0.3, -0.7, 1.1, 0.2;
  check_gradients(
      [w, keep](Tape<double>& t, std::vector<Var<double>>& v) {
        return sdb::ad::sum_all(sdb::ad::hadamard(sdb::ad::softmax_rows(v[0], &keep), t.constant(w)));
      },
      {z});
}

TEST_CASE("layer norm gradients") {
  std::mt19937_64 rng(6);
  Mat x = random_matrix(rng, 3, 6);
  Mat gain = random_matrix(rng, 1, 6, 0.5);
  gain.array() += 1.0;
  Mat bias = random_matrix(rng, 1, 6, 0.2);
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        return sdb::ad::sum_squares(sdb::ad::layer_norm(v[0], v[1], v[2]));
      },
      {x, gain, bias}, 1e-6, 1e-5);
}

TEST_CASE("logsumexp and pick compose into a stable cross-entropy") {
  Mat z(1, 4);
  z << 2.0, -1.0, 0.5, 1.5;
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        return sdb::ad::sub(sdb::ad::logsumexp_row(v[0]), sdb::ad::pick(v[0], 0, 2));
      },
      {z});
}

TEST_CASE("scale, div11, cosine gradients") {
  std::mt19937_64 rng(7);
  Mat a = random_matrix(rng, 1, 5);
  Mat b = random_matrix(rng, 1, 5);
  Mat s(1, 1);
  s << 0.7;
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        auto scaled = sdb::ad::scale(v[0], v[2]);
        return sdb::ad::mul11(sdb::ad::cosine(scaled, v[1]), sdb::ad::frobenius_norm(v[0]));
      },
      {a, b, s}, 1e-6, 1e-5);
}

TEST_CASE("cosine rejects near-zero vectors") {
  Tape<double> tape;
  auto zero = tape.constant(Mat::Zero(1, 3));
  auto other = tape.constant(Mat::Ones(1, 3));
  REQUIRE_THROWS_AS(sdb::ad::cosine(zero, other), std::domain_error);
}

TEST_CASE("concat ops route gradients to their blocks") {
  std::mt19937_64 rng(8);
  Mat a = random_matrix(rng, 2, 3), b = random_matrix(rng, 1, 3);
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        auto stacked = sdb::ad::concat_rows<double>({v[0], v[1]});
        auto wide = sdb::ad::concat_cols<double>({sdb::ad::sum_all(stacked), sdb::ad::sum_squares(v[1])});
        return sdb::ad::sum_squares(wide);
      },
      {a, b});
}

TEST_CASE("mean_row_variance matches the population variance formula") {
  Mat stacked(3, 2);
  stacked << 0.0, 1.0, 2.0, 3.0, 4.0, 8.0;
  Tape<double> tape;
  auto var = sdb::ad::mean_row_variance(tape.constant(stacked));
  // column 0: mean 2, var (4+0+4)/3; column 1: mean 4, var (9+1+16)/3
  double expected = 0.5 * ((8.0 / 3.0) + (26.0 / 3.0));
  REQUIRE(var.value()(0, 0) == Catch::Approx(expected).epsilon(1e-12));
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) { return sdb::ad::mean_row_variance(v[0]); },
      {stacked});
}

TEST_CASE("parameter bindings accumulate across multiple uses") {
  Mat w(2, 2);
  w << 1.0, 2.0, 3.0, 4.0;
  Mat grad;
  Tape<double> tape;
  auto w1 = tape.leaf(w, &grad);
  auto w2 = tape.leaf(w, &grad);  // same parameter, second use
  auto loss = sdb::ad::add(sdb::ad::sum_squares(w1), sdb::ad::sum_all(w2));
  tape.backward(loss);
  Mat expected = 2.0 * w + Mat::Ones(2, 2);
  REQUIRE((grad - expected).norm() < 1e-12);
}

TEST_CASE("add_rowvec broadcasts and reduces gradients") {
  std::mt19937_64 rng(9);
  check_gradients(
      [](Tape<double>& t, std::vector<Var<double>>& v) {
        return sdb::ad::sum_squares(sdb::ad::add_rowvec(v[0], v[1]));
      },
      {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)});
}

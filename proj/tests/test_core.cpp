#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "sdb/config.hpp"
#include "sdb/core.hpp"

using sdb::Matrix;
using sdb::TokenMatrix;

namespace {

Matrix<double> random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> dist;
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("masked_pool: single valid row is returned unchanged") {
  Matrix<double> v(1, 3);
  v << 1.0, -2.0, 0.5;
  auto pooled = sdb::masked_pool<double>(v, {true});
  REQUIRE((pooled - v.row(0)).norm() == 0.0);
}

TEST_CASE("masked_pool: mean of two valid rows") {
  Matrix<double> v(2, 1);
  v << 1.0, 3.0;
  auto pooled = sdb::masked_pool<double>(v, {true, true});
  REQUIRE(pooled(0, 0) == 2.0);
}

TEST_CASE("masked_pool: mask excludes the first row") {
  Matrix<double> v(2, 1);
  v << 1.0, 3.0;
  auto pooled = sdb::masked_pool<double>(v, {false, true});
  REQUIRE(pooled(0, 0) == 3.0);
}

TEST_CASE("masked_pool: all rows masked is an error") {
  Matrix<double> v(2, 2);
  v.setOnes();
  REQUIRE_THROWS_AS(sdb::masked_pool<double>(v, {false, false}), sdb::AllMaskedError);
}

TEST_CASE("masked_pool is linear in the valid rows") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index rows = 5, cols = 4;
    Matrix<double> a = random_matrix(rng, rows, cols);
    Matrix<double> b = random_matrix(rng, rows, cols);
    std::vector<bool> mask;
    bool any = false;
    for (Eigen::Index i = 0; i < rows; ++i) {
      bool keep = std::uniform_real_distribution<double>(0, 1)(rng) < 0.6;
      any |= keep;
      mask.push_back(keep);
    }
    if (!any) mask[0] = true;
    const double alpha = 1.7, beta = -0.4;
    Matrix<double> combined = alpha * a + beta * b;
    Eigen::RowVectorXd lhs = sdb::masked_pool<double>(combined, mask);
    Eigen::RowVectorXd rhs =
        alpha * sdb::masked_pool<double>(a, mask) + beta * sdb::masked_pool<double>(b, mask);
    REQUIRE((lhs - rhs).norm() < 1e-6);
  }
}

TEST_CASE("differentiable masked_pool matches the plain version") {
  std::mt19937_64 rng(7);
  Matrix<double> v = random_matrix(rng, 4, 3);
  std::vector<bool> mask{true, false, true, true};
  sdb::ad::Tape<double> tape;
  auto pooled = sdb::masked_pool<double>(tape.constant(v), mask);
  REQUIRE((pooled.value().row(0) - sdb::masked_pool<double>(v, mask)).norm() < 1e-15);
}

TEST_CASE("ActionDistribution validation") {
  sdb::ActionDistribution<double> d;
  d.probabilities = {0.25, 0.75};
  REQUIRE_NOTHROW(d.validate());
  d.probabilities = {0.5, 0.6};
  REQUIRE_THROWS_AS(d.validate(), sdb::ValidationError);
  d.probabilities = {};
  REQUIRE_THROWS_AS(d.validate(), sdb::ValidationError);
  d.probabilities = {1.2, -0.2};
  REQUIRE_THROWS_AS(d.validate(), sdb::ValidationError);
}

TEST_CASE("ModelConfig invariants") {
  sdb::ModelConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());
  cfg.rank = cfg.hidden_dim + 1;
  REQUIRE_THROWS_AS(cfg.validate(), sdb::ValidationError);
  cfg = sdb::ModelConfig{};
  cfg.lambda_agr = -0.1;
  REQUIRE_THROWS_AS(cfg.validate(), sdb::ValidationError);
  cfg = sdb::ModelConfig{};
  cfg.hypotheses = -1;
  REQUIRE_THROWS_AS(cfg.validate(), sdb::ValidationError);
}

TEST_CASE("config file round-trip preserves every key") {
  sdb::Config cfg;
  cfg.model.hypotheses = 5;
  cfg.model.rank = 2;
  cfg.model.lambda_sm = 0.25;
  cfg.world.distractor_rate = 0.5;
  cfg.world.random_edge_lengths = true;
  cfg.train.dem = sdb::DemMode::Noise;
  cfg.train.ssm = sdb::SsmMode::Rand;
  cfg.train.drop_cues = "AS";
  cfg.train.seeds = {1, 2, 3};
  std::string text = sdb::serialize_config(cfg);
  sdb::Config parsed;
  std::istringstream in(text);
  sdb::apply_config_text(parsed, in);
  REQUIRE(parsed.model.hypotheses == 5);
  REQUIRE(parsed.model.rank == 2);
  REQUIRE(parsed.model.lambda_sm == 0.25);
  REQUIRE(parsed.world.distractor_rate == 0.5);
  REQUIRE(parsed.world.random_edge_lengths);
  REQUIRE(parsed.train.dem == sdb::DemMode::Noise);
  REQUIRE(parsed.train.ssm == sdb::SsmMode::Rand);
  REQUIRE(parsed.train.drop_cues == "AS");
  REQUIRE(parsed.train.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("config rejects unknown keys and malformed lines") {
  sdb::Config cfg;
  std::istringstream bad_key("no_such_key = 3\n");
  REQUIRE_THROWS_AS(sdb::apply_config_text(cfg, bad_key), sdb::ValidationError);
  std::istringstream bad_line("hidden_dim 32\n");
  REQUIRE_THROWS_AS(sdb::apply_config_text(cfg, bad_line), sdb::ValidationError);
  std::istringstream with_comment("hidden_dim = 16  # narrow\n");
  REQUIRE_NOTHROW(sdb::apply_config_text(cfg, with_comment));
  REQUIRE(cfg.model.hidden_dim == 16);
}

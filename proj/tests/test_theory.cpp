// Copyright 2026 The DCM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dcm/theory.hpp"
#include "oracles.hpp"

namespace dcm {
namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

RowVector to_row(const std::vector<double>& v) {
  return Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

TEST(OptimalDistribution, Examples) {
  EXPECT_LT((optimal_distribution(row({1, 0}), 0.5) - row({0.8333333333333334, 0.16666666666666666})).cwiseAbs().maxCoeff(),
            1e-15);
  EXPECT_LT((optimal_distribution(row({1, 0, 0}), 1.0) - row({2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0})).cwiseAbs().maxCoeff(),
            1e-15);
  const RowVector p = optimal_distribution(row({1, 0, 0, 0, 0, 0, 0, 0, 0, 0}), 0.5);
  EXPECT_NEAR(p(0), 0.7, 1e-15);
  EXPECT_NEAR(p(1), 1.0 / 30.0, 1e-15);
  EXPECT_NEAR(optimal_msp_id(0.5, 10), 0.7, 1e-15);
  EXPECT_EQ(optimal_distribution(row({0.2, 0.8}), 0.0), row({0.2, 0.8}));
  EXPECT_THROW(optimal_distribution(row({0.5, 0.6}), 1.0), NumericError);
  EXPECT_THROW(optimal_distribution(row({0.5, 0.5}), -1.0), ConfigError);
}

TEST(OptimalDistribution, MatchesGradientDescentOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> classes(2, 8);
  std::uniform_real_distribution<double> lam(0.05, 4.0);
  for (int t = 0; t < 50; ++t) {
    const auto p = oracle::random_distribution(rng, classes(rng), 0.5);
    const double l = lam(rng);
    const RowVector closed = optimal_distribution(to_row(p), l);
    const RowVector gd = to_row(oracle::single_example_minimizer(p, l));
    EXPECT_LT(total_variation(closed, gd), 1e-6);
    EXPECT_LE(closed.maxCoeff(), to_row(p).maxCoeff() + 1e-15);
    EXPECT_LT(total_variation(minimize_single_example(to_row(p), l), closed), 1e-6);
  }
}

TEST(SeparationEpsilon, Examples) {
  EXPECT_NEAR(separation_epsilon(100, 10, 0.5), 0.0018, 1e-15);
  EXPECT_NEAR(separation_epsilon(100, 10, 1.0), 0.2025 / 200.0, 1e-15);
  EXPECT_NEAR(separation_epsilon(200, 10, 0.5), separation_epsilon(100, 10, 0.5) / 2.0, 1e-15);
  const double limit = 1.0 / (2.0 * 100.0 * 1.5 * 1.5);
  EXPECT_NEAR(separation_epsilon(100, 100000000, 0.5), limit, 1e-9);
  EXPECT_LT(separation_epsilon(100, 1000, 0.5), limit);
  EXPECT_THROW(separation_epsilon(0, 10, 0.5), ConfigError);
  EXPECT_THROW(separation_epsilon(10, 1, 0.5), ConfigError);
  EXPECT_THROW(separation_epsilon(10, 10, 0.0), ConfigError);
}

TEST(Pinsker, Examples) {
  const auto r = pinsker_check(row({1, 0}), row({0.5, 0.5}));
  EXPECT_NEAR(r.tv, 0.5, 1e-15);
  EXPECT_NEAR(r.kl, std::log(2.0), 1e-15);
  EXPECT_TRUE(r.holds);
  const auto inf = pinsker_check(row({0.5, 0.5}), row({1, 0}));
  EXPECT_TRUE(inf.infinite_kl);
  EXPECT_TRUE(inf.holds);
  EXPECT_NEAR(pinsker_check(row({0.3, 0.7}), row({0.3, 0.7})).kl, 0.0, 1e-15);
}

TEST(Pinsker, HoldsOnRandomPairs) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const auto p = to_row(oracle::random_distribution(rng, 5, 0.3));
    const auto q = to_row(oracle::random_distribution(rng, 5, 0.3));
    const auto r = pinsker_check(p, q);
    EXPECT_TRUE(r.holds);
    EXPECT_LE(r.tv, std::sqrt(r.kl / 2.0) + 1e-12);
  }
}

// One-layer model mapping one-hot input e_k to logits whose softmax is the
// smoothed optimum for class k, and the zero input to the uniform output.
MlpModel optimum_model(std::size_t c, double lambda, double extra = 0.0) {
  MlpModel m = init_model({c, c}, Activation::ReLU, 0);
  const double cd = static_cast<double>(c);
  const double hi = (1.0 + lambda / cd) / (1.0 + lambda);
  const double lo = (lambda / cd) / (1.0 + lambda);
  m.layers[0].weight = (std::log(hi / lo) + extra) * Matrix::Identity(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
  m.layers[0].bias.setZero();
  return m;
}

LabeledDataset one_hot_set(std::size_t c, std::size_t n) {
  LabeledDataset ds;
  ds.n_classes = c;
  ds.features = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < n; ++i) {
    ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i % c)) = 1.0;
    ds.labels.push_back(static_cast<int>(i % c));
    ds.domain.push_back(Domain::ID);
    ds.ids.push_back(i);
  }
  return ds;
}

TEST(Certificate, ExactOptimumSeparates) {
  const double lambda = 0.5;
  const auto id = one_hot_set(4, 40);
  const Matrix ood = Matrix::Zero(20, 4);
  const auto cert = certify_separation(optimum_model(4, lambda), id, ood, lambda);
  EXPECT_NEAR(cert.objective_gap, 0.0, 1e-12);
  EXPECT_TRUE(cert.premise_met);
  EXPECT_TRUE(cert.separation_holds);
  EXPECT_TRUE(cert.bounds_hold);
  EXPECT_NEAR(cert.min_id_msp, optimal_msp_id(lambda, 4), 1e-12);
  EXPECT_NEAR(cert.max_ood_msp, 0.25, 1e-15);
  EXPECT_EQ(cert.n_total, 40u);  // max(40 / 1.5, 20 / 0.5)
  EXPECT_NEAR(cert.epsilon_threshold, separation_epsilon(40, 4, lambda), 1e-18);
}

TEST(Certificate, NearOptimumRespectsBounds) {
  const double lambda = 1.0;
  const auto id = one_hot_set(3, 30);
  const Matrix ood = Matrix::Zero(30, 3);
  for (double extra : {1e-3, -1e-3, 1e-2, 0.05}) {
    const auto cert = certify_separation(optimum_model(3, lambda, extra), id, ood, lambda);
    EXPECT_GT(cert.objective_gap, 0.0);
    if (cert.premise_met) {
      EXPECT_TRUE(cert.bounds_hold);
      EXPECT_TRUE(cert.separation_holds);
    }
  }
  EXPECT_TRUE(certify_separation(optimum_model(3, lambda, 1e-3), id, ood, lambda).premise_met);
}

TEST(Certificate, UniformModelFails) {
  MlpModel flat = init_model({4, 4}, Activation::ReLU, 0);
  flat.layers[0].weight.setZero();
  const auto cert = certify_separation(flat, one_hot_set(4, 20), Matrix::Zero(10, 4), 0.5);
  EXPECT_FALSE(cert.separation_holds);
  EXPECT_FALSE(cert.premise_met);
  EXPECT_GT(cert.objective_gap, cert.epsilon_threshold);
}

TEST(Certificate, NeighborhoodCheck) {
  SeparationOptions opt;
  opt.delta = 0.01;
  opt.seed = 3;
  const auto cert = certify_separation(optimum_model(4, 0.5), one_hot_set(4, 20), Matrix::Zero(10, 4), 0.5, opt);
  ASSERT_TRUE(cert.neighborhood_separation_holds.has_value());
  EXPECT_TRUE(*cert.neighborhood_separation_holds);
  EXPECT_EQ(cert.delta, 0.01);
  opt.delta = 50.0;
  const auto wide = certify_separation(optimum_model(4, 0.5), one_hot_set(4, 20), Matrix::Zero(10, 4), 0.5, opt);
  EXPECT_FALSE(*wide.neighborhood_separation_holds);
  EXPECT_FALSE(certify_separation(optimum_model(4, 0.5), one_hot_set(4, 20), Matrix::Zero(10, 4), 0.5)
                   .neighborhood_separation_holds.has_value());
}

TEST(Certificate, Errors) {
  const auto m = optimum_model(4, 0.5);
  EXPECT_THROW(certify_separation(m, one_hot_set(4, 4), Matrix::Zero(2, 4), 0.0), ConfigError);
  EXPECT_THROW(certify_separation(m, one_hot_set(4, 4), Matrix::Zero(0, 4), 0.5), EmptyInputError);
  LabeledDataset empty;
  empty.features.resize(0, 4);
  EXPECT_THROW(certify_separation(m, empty, Matrix::Zero(2, 4), 0.5), EmptyInputError);
}

}  // namespace
}  // namespace dcm

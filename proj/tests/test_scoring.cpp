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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dcm/scoring.hpp"
#include "oracles.hpp"

namespace dcm {
namespace {

Matrix logits_row(std::initializer_list<double> z) {
  Matrix m(1, static_cast<Eigen::Index>(z.size()));
  Eigen::Index i = 0;
  for (double v : z) m(0, i++) = v;
  return m;
}

// Single linear layer whose logits equal the input.
MlpModel passthrough(std::size_t c) {
  MlpModel m = init_model({c, c}, Activation::ReLU, 0);
  m.layers[0].weight = Matrix::Identity(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
  return m;
}

TEST(Scores, Examples) {
  EXPECT_NEAR(ood_score_from_logits(Matrix::Zero(1, 10), ScoreKind::MSP)(0), -0.1, 1e-15);
  EXPECT_NEAR(ood_score_from_logits(logits_row({0, 0}), ScoreKind::Energy)(0), -std::log(2.0), 1e-15);
  EXPECT_NEAR(ood_score_from_logits(logits_row({0, 0}), ScoreKind::Energy)(0), -0.6931, 1e-4);
  EXPECT_DOUBLE_EQ(ood_score_from_logits(logits_row({3, 1}), ScoreKind::MaxLogit)(0), -3.0);
}

TEST(Scores, EnergyIsStableForLargeLogits) {
  const double e = ood_score_from_logits(logits_row({1000, 999}), ScoreKind::Energy)(0);
  EXPECT_NEAR(e, -(1000.0 + std::log1p(std::exp(-1.0))), 1e-9);
}

TEST(Confidence, Examples) {
  EXPECT_NEAR(msp_confidence(passthrough(4), Matrix::Zero(1, 4))(0), 0.25, 1e-15);
  EXPECT_NEAR(msp_confidence(passthrough(4), logits_row({50, 0, 0, 0}))(0), 1.0, 1e-12);
  EXPECT_NEAR(msp_confidence(passthrough(2), logits_row({std::log(3.0), 0}))(0), 0.75, 1e-15);
  EXPECT_THROW(msp_confidence(passthrough(2), Matrix::Zero(1, 3)), ShapeError);
}

TEST(Scores, RangesAndConsistency) {
  std::mt19937_64 rng(1);
  const auto c = 5;
  const Matrix z = oracle::random_matrix(rng, 300, c, 4.0);
  const MlpModel m = passthrough(c);
  const Vector msp = ood_score(m, z, ScoreKind::MSP);
  const Vector conf = msp_confidence(m, z);
  EXPECT_LE(msp.maxCoeff(), -1.0 / c + 1e-15);
  EXPECT_GE(msp.minCoeff(), -1.0);
  EXPECT_TRUE(((msp + conf).array() == 0.0).all());
  std::vector<int> a(300), b(300);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  std::stable_sort(a.begin(), a.end(), [&](int i, int j) { return msp(i) < msp(j); });
  std::stable_sort(b.begin(), b.end(), [&](int i, int j) { return conf(i) > conf(j); });
  EXPECT_EQ(a, b);
}

TEST(Scores, ShiftInvariance) {
  std::mt19937_64 rng(2);
  const Matrix z = oracle::random_matrix(rng, 50, 4, 3.0);
  const double c = 7.25;
  const Matrix zc = (z.array() + c).matrix();
  EXPECT_LT((ood_score_from_logits(z, ScoreKind::MSP) - ood_score_from_logits(zc, ScoreKind::MSP)).cwiseAbs().maxCoeff(),
            1e-12);
  for (auto kind : {ScoreKind::MaxLogit, ScoreKind::Energy}) {
    const Vector s = ood_score_from_logits(z, kind);
    const Vector sc = ood_score_from_logits(zc, kind);
    EXPECT_LT(((s.array() - c) - sc.array()).abs().maxCoeff(), 1e-12);
    for (Eigen::Index i = 0; i < 50; ++i) {
      for (Eigen::Index j = 0; j < 50; ++j) EXPECT_EQ(s(i) < s(j), sc(i) < sc(j));
    }
  }
}

TEST(Predict, TiesGoToLowestIndex) {
  Matrix z(3, 3);
  z << 1, 1, 0, 0, 2, 2, 5, 5, 5;
  EXPECT_EQ(argmax_rows(z), (std::vector<int>{0, 1, 0}));
}

TEST(ScoreCsv, RoundTrip) {
  LabeledDataset ds;
  ds.n_classes = 3;
  std::mt19937_64 rng(3);
  ds.features = oracle::random_matrix(rng, 4, 3);
  ds.labels = {0, 2, kNoLabel, 1};
  ds.domain = {Domain::ID, Domain::ID, Domain::OOD, Domain::ID};
  ds.ids = {5, 6, 7, 8};
  const auto rows = score_dataset(passthrough(3), ds, ScoreKind::Energy);
  std::stringstream ss;
  write_score_csv(ss, rows);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "example_id,domain_tag,label,prediction,score_kind,score");
  const auto back = read_score_csv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].example_id, rows[i].example_id);
    EXPECT_EQ(back[i].domain, rows[i].domain);
    EXPECT_EQ(back[i].label, rows[i].label);
    EXPECT_EQ(back[i].prediction, rows[i].prediction);
    EXPECT_EQ(back[i].kind, ScoreKind::Energy);
    EXPECT_EQ(back[i].score, rows[i].score);
  }
}

TEST(ScoreKind, Parse) {
  for (auto k : kAllScoreKinds) EXPECT_EQ(parse_score_kind(to_string(k)), k);
  EXPECT_THROW(parse_score_kind("odin"), ConfigError);
}

}  // namespace
}  // namespace dcm

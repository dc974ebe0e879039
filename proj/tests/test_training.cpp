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
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dcm/metrics.hpp"
#include "dcm/training.hpp"
#include "oracles.hpp"

namespace dcm {
namespace {

// Two labelled Gaussian blobs at +/- `gap` along the first axis.
LabeledDataset two_blobs(std::size_t n, double gap, std::uint64_t seed, std::size_t first_id = 0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  LabeledDataset ds;
  ds.n_classes = 2;
  ds.features.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    ds.features(static_cast<Eigen::Index>(i), 0) = (y == 0 ? -gap : gap) + g(rng);
    ds.features(static_cast<Eigen::Index>(i), 1) = g(rng);
    ds.labels.push_back(y);
    ds.domain.push_back(Domain::ID);
    ds.ids.push_back(first_id + i);
  }
  return ds;
}

double accuracy(const MlpModel& m, const LabeledDataset& ds) {
  const auto pred = predict(m, ds.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += pred[i] == ds.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

DcmConfig small_config() {
  DcmConfig cfg;
  cfg.pretrain_epochs = 30;
  cfg.finetune_epochs = 10;
  cfg.seed = 5;
  return cfg;
}

TEST(Pretrain, SeparableToyReachesHighAccuracy) {
  const auto train = two_blobs(200, 4.0, 1);
  const auto res = pretrain(init_model({2, 16, 2}, Activation::ReLU, 1), train, small_config());
  EXPECT_GE(accuracy(res.model, train), 0.99);
  EXPECT_EQ(res.epoch_losses.size(), 30u);
}

TEST(Pretrain, DeterministicAndSeedSensitive) {
  const auto train = two_blobs(100, 2.0, 2);
  const auto init = init_model({2, 8, 2}, Activation::ReLU, 3);
  auto cfg = small_config();
  const auto a = pretrain(init, train, cfg);
  const auto b = pretrain(init, train, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  cfg.seed = 6;
  EXPECT_FALSE(pretrain(init, train, cfg).model == a.model);
}

TEST(Pretrain, LongerTrainingDoesNotIncreaseLoss) {
  const auto train = two_blobs(200, 1.5, 4);
  const auto init = init_model({2, 16, 2}, Activation::ReLU, 4);
  auto cfg = small_config();
  cfg.pretrain_epochs = 5;
  const auto small = pretrain(init, train, cfg);
  cfg.pretrain_epochs = 100;
  const auto large = pretrain(init, train, cfg);
  const auto loss = [&](const MlpModel& m) { return backward(m, Batch{train.features, train.labels}).loss; };
  EXPECT_LE(loss(large.model), loss(small.model) + 1e-6);
}

TEST(Pretrain, Errors) {
  const auto init = init_model({2, 2}, Activation::ReLU, 0);
  LabeledDataset empty;
  empty.features.resize(0, 2);
  empty.n_classes = 2;
  EXPECT_THROW(pretrain(init, empty, small_config()), ConfigError);
  auto bad = two_blobs(10, 1.0, 0);
  bad.labels[3] = 7;
  EXPECT_THROW(pretrain(init, bad, small_config()), IndexError);
  auto cfg = small_config();
  cfg.lambda = -1.0;
  EXPECT_THROW(pretrain(init, two_blobs(10, 1.0, 0), cfg), ConfigError);
}

TEST(Finetune, LambdaZeroStepsAreXentSteps) {
  const auto train = two_blobs(64, 2.0, 7);
  std::mt19937_64 rng(1);
  const Matrix unc = oracle::random_matrix(rng, 50, 2);
  auto cfg = small_config();
  cfg.lambda = 0.0;
  cfg.finetune_epochs = 3;
  std::size_t checked = 0;
  finetune_ood(init_model({2, 8, 2}, Activation::Tanh, 7), train, unc, cfg, [&](const StepRecord& r) {
    const auto expect = backward(r.model, detail::gather_batch(train, r.ft_rows));
    EXPECT_EQ(static_cast<double>(r.objective.loss), expect.loss);
    EXPECT_EQ(oracle::max_abs_difference(r.objective.grads, expect.grads), 0.0);
    ++checked;
  });
  EXPECT_EQ(checked, 3u * 1u);  // 50 rows in one batch of 64 per epoch
}

TEST(Finetune, EpochIsOnePassOverUncertaintySet) {
  const auto train = two_blobs(40, 2.0, 8);
  std::mt19937_64 rng(2);
  const Matrix unc = oracle::random_matrix(rng, 150, 2);
  auto cfg = small_config();
  cfg.batch_unc = 64;
  cfg.batch_id = 32;
  cfg.finetune_epochs = 2;
  std::vector<std::size_t> per_epoch(2, 0);
  std::vector<std::size_t> seen;
  finetune_ood(init_model({2, 4, 2}, Activation::ReLU, 0), train, unc, cfg, [&](const StepRecord& r) {
    ++per_epoch[r.epoch];
    EXPECT_EQ(r.ft_rows.size(), 32u);
    if (r.epoch == 0) seen.insert(seen.end(), r.unc_rows.begin(), r.unc_rows.end());
  });
  EXPECT_EQ(per_epoch[0], 3u);
  EXPECT_EQ(per_epoch[1], 3u);
  std::sort(seen.begin(), seen.end());
  ASSERT_EQ(seen.size(), 150u);
  for (std::size_t i = 0; i < 150; ++i) EXPECT_EQ(seen[i], i);
}

TEST(Finetune, FarOutlierClusterLosesConfidence) {
  const auto train = two_blobs(200, 3.0, 9);
  const auto test = two_blobs(200, 3.0, 10, 1000);
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix outliers(200, 2);
  for (Eigen::Index i = 0; i < 200; ++i) {
    outliers(i, 0) = g(rng);
    outliers(i, 1) = 10.0 + g(rng);
  }
  auto cfg = small_config();
  cfg.pretrain_epochs = 50;
  const auto pre = pretrain(init_model({2, 32, 2}, Activation::ReLU, 12), train, cfg);
  const auto post = finetune_ood(pre.model, train, outliers, cfg);
  const double ood_before = msp_confidence(pre.model, outliers).mean();
  const double ood_after = msp_confidence(post.model, outliers).mean();
  const double id_before = msp_confidence(pre.model, test.features).mean();
  const double id_after = msp_confidence(post.model, test.features).mean();
  EXPECT_LT(ood_after, ood_before);
  EXPECT_LT(id_before - id_after, ood_before - ood_after);
}

TEST(Finetune, MixedUncertaintySetImprovesAuroc) {
  BenchmarkSpec spec;
  spec.seed = 3;
  const auto data = gen_standard_ood(spec);
  DcmConfig cfg;
  cfg.seed = 3;
  const auto pre = pretrain(init_model({spec.dim, 64, 64, spec.n_classes}, Activation::ReLU, 3), data.train, cfg);
  const auto post = finetune_ood(pre.model, data.train, data.uncertainty.features, cfg);
  EXPECT_GT(*evaluate(post.model, data.test, ScoreKind::MSP).auroc, *evaluate(pre.model, data.test, ScoreKind::MSP).auroc);
}

TEST(Finetune, TransductiveDelegates) {
  BenchmarkSpec spec;
  spec.seed = 4;
  const auto data = gen_standard_ood(spec);
  DcmConfig cfg;
  cfg.seed = 4;
  const auto pre = pretrain(init_model({spec.dim, 64, 64, spec.n_classes}, Activation::ReLU, 4), data.train, cfg);
  const auto a = finetune_transductive(pre.model, data.train, data.test.features, cfg);
  const auto b = finetune_ood(pre.model, data.train, data.test.features, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_GE(*evaluate(a.model, data.test, ScoreKind::MSP).auroc, *evaluate(pre.model, data.test, ScoreKind::MSP).auroc);
}

TEST(Finetune, Errors) {
  const auto train = two_blobs(10, 1.0, 0);
  const auto m = init_model({2, 2}, Activation::ReLU, 0);
  EXPECT_THROW(finetune_ood(m, train, Matrix(0, 2), small_config()), ConfigError);
  EXPECT_THROW(finetune_ood(m, train, Matrix::Zero(3, 5), small_config()), ShapeError);
}

// Linear model that predicts class 0 for x0 < 0 and class 1 otherwise.
MlpModel sign_model() {
  MlpModel m = init_model({2, 2}, Activation::ReLU, 0);
  m.layers[0].weight << -1, 0, 1, 0;
  m.layers[0].bias.setZero();
  return m;
}

TEST(PartitionVal, HandBuiltSplit) {
  LabeledDataset val;
  val.n_classes = 2;
  val.features.resize(4, 2);
  val.features << -1, 0, 1, 0, -2, 0, 2, 0;
  val.labels = {0, 1, 1, 0};
  val.domain.assign(4, Domain::ID);
  val.ids = {10, 11, 12, 13};
  const auto p = partition_val(sign_model(), val);
  EXPECT_EQ(p.correct_rows, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(p.error_rows, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(p.error.ids, (std::vector<std::size_t>{12, 13}));
}

TEST(PartitionVal, ConstantPredictorAndPerfectModel) {
  const auto val = two_blobs(20, 5.0, 1);
  MlpModel constant = init_model({2, 2}, Activation::ReLU, 0);
  constant.layers[0].weight.setZero();
  constant.layers[0].bias << 0, 0;  // tie -> class 0
  const auto p = partition_val(constant, val);
  for (int y : p.error.labels) EXPECT_EQ(y, 1);
  EXPECT_EQ(p.error.size(), 10u);
  EXPECT_EQ(p.correct.size() + p.error.size(), val.size());
  const auto q = partition_val(sign_model(), two_blobs(20, 50.0, 1));
  EXPECT_TRUE(q.error.empty());
}

TEST(FinetuneSc, PerfectModelIsReturnedUnchanged) {
  const auto val = two_blobs(20, 50.0, 2);
  const auto res = finetune_sc(sign_model(), val, val, small_config());
  EXPECT_EQ(res.model, sign_model());
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_EQ(res.warnings[0], kEmptyErrorSetWarning);
}

TEST(FinetuneSc, LambdaZeroMatchesFinetuningOnTrainPlusCorrect) {
  const auto train = two_blobs(60, 1.0, 3);
  const auto val = two_blobs(60, 1.0, 4, 500);
  auto cfg = small_config();
  cfg.lambda = 0.0;
  const auto pre = pretrain(init_model({2, 8, 2}, Activation::ReLU, 5), train, cfg).model;
  const auto part = partition_val(pre, val);
  ASSERT_FALSE(part.error.empty());
  const auto a = finetune_sc(pre, train, val, cfg);
  const auto b = finetune(pre, concat(train, part.correct), part.error.features, cfg);
  EXPECT_EQ(a.model, b.model);
}

TEST(FinetuneSc, ImprovesAccAt90UnderCorruption) {
  BenchmarkSpec spec;
  spec.kind = BenchmarkKind::CovariateShift;
  spec.dim = 16;
  spec.class_separation = 4;
  spec.corruption_severity = 2;
  spec.n_train = 150;
  spec.n_val = 2000;
  spec.n_test = 1000;
  spec.seed = 21;
  const auto data = gen_covariate_shift(spec);
  DcmConfig cfg;
  cfg.lambda = 1.0;
  cfg.pretrain_epochs = 1000;
  cfg.finetune_epochs = 200;
  cfg.lr_finetune = 0.05;
  cfg.seed = 21;
  const auto pre = pretrain(init_model({spec.dim, 64, 64, spec.n_classes}, Activation::ReLU, 21), data.train, cfg);
  const auto post = finetune_sc(pre.model, data.train, data.val, cfg);
  const double before = evaluate(pre.model, data.test_mixed, ScoreKind::MSP).acc_at_cov.at(0.90);
  const double after = evaluate(post.model, data.test_mixed, ScoreKind::MSP).acc_at_cov.at(0.90);
  EXPECT_GE(after, before);
}

TEST(DcmConfig, Validation) {
  DcmConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_unc = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DcmConfig{};
  c.lr_finetune = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace dcm

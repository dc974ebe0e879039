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

// Pre-training and confidence-minimizing fine-tuning.
//
// Fine-tuning steps pair one batch from the fine-tuning (labelled) set with one
// batch from the uncertainty set and take an SGD step on
//   xent(ft batch) + lambda * conf(uncertainty batch).
// One epoch is one pass over the uncertainty set; the labelled stream cycles
// on its own, reshuffling at every wrap-around.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dcm/common.hpp"
#include "dcm/datagen.hpp"
#include "dcm/losses.hpp"
#include "dcm/netcore.hpp"
#include "dcm/scoring.hpp"

namespace dcm {

struct DcmConfig {
  double lambda = 0.5;
  std::size_t pretrain_epochs = 200;
  std::size_t finetune_epochs = 20;
  double lr_pretrain = 0.05;
  double lr_finetune = 0.02;
  std::size_t batch_id = 32;
  std::size_t batch_unc = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
    if (pretrain_epochs == 0 || finetune_epochs == 0) throw ConfigError("epoch counts must be positive");
    if (!(lr_pretrain > 0.0) || !(lr_finetune > 0.0)) throw ConfigError("learning rates must be positive");
    if (batch_id == 0 || batch_unc == 0) throw ConfigError("batch sizes must be positive");
  }
};

struct TrainResult {
  MlpModel model;
  std::vector<double> epoch_losses;  // mean objective over the steps of each epoch
  std::vector<std::string> warnings;
};

/// Passed to an optional observer before every SGD step.
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  const MlpModel& model;  // parameters the gradient was taken at
  std::span<const std::size_t> ft_rows;
  std::span<const std::size_t> unc_rows;
  const ObjectiveValue& objective;
};

using StepObserver = std::function<void(const StepRecord&)>;

namespace detail {

// Stream of row indices over [0, n) that reshuffles on every wrap-around.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> rows;
    rows.reserve(k);
    while (rows.size() < k) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

inline Batch gather_batch(const LabeledDataset& ds, std::span<const std::size_t> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(ds.labels[r]);
  return {gather_rows(ds.features, rows), std::move(y)};
}

inline void require_labelled(const LabeledDataset& ds, const MlpModel& model) {
  for (int y : ds.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= model.n_classes()) {
      throw IndexError("training label " + std::to_string(y) + " outside the model's classes");
    }
  }
}

// Stream ids for derive_seed.
inline constexpr std::uint64_t kPretrainStream = 1;
inline constexpr std::uint64_t kFinetuneIdStream = 2;
inline constexpr std::uint64_t kFinetuneUncStream = 3;

}  // namespace detail

/// Mini-batch SGD on the cross-entropy over `train`.
inline TrainResult pretrain(MlpModel model, const LabeledDataset& train, const DcmConfig& cfg,
                            const StepObserver& observer = {}) {
  cfg.validate();
  if (train.empty()) throw ConfigError("pretrain needs a non-empty training set");
  detail::require_labelled(train, model);
  Rng rng(derive_seed(cfg.seed, detail::kPretrainStream));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult out;
  std::size_t step = 0;
  const Matrix no_unc(0, static_cast<Eigen::Index>(model.input_dim()));
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_id) {
      const std::span<const std::size_t> rows(order.data() + at, std::min(cfg.batch_id, order.size() - at));
      const auto obj = dcm_objective(model, detail::gather_batch(train, rows), no_unc, 0.0);
      if (observer) observer({epoch, step, model, rows, {}, obj});
      sgd_step_inplace(model, obj.grads, cfg.lr_pretrain);
      sum += obj.loss;
      ++n_steps;
      ++step;
    }
    out.epoch_losses.push_back(sum / static_cast<double>(n_steps));
  }
  out.model = std::move(model);
  return out;
}

/// Confidence-minimizing fine-tuning with `ft` as the labelled set and
/// `unc_features` as the uncertainty set.
inline TrainResult finetune(MlpModel model, const LabeledDataset& ft, const Matrix& unc_features,
                            const DcmConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  if (unc_features.rows() == 0) throw ConfigError("fine-tuning needs a non-empty uncertainty set");
  if (ft.empty()) throw ConfigError("fine-tuning needs a non-empty labelled set");
  require_shape(static_cast<std::size_t>(unc_features.cols()) == model.input_dim(),
                "uncertainty features do not match model input dim");
  detail::require_labelled(ft, model);

  detail::CyclingSampler ft_stream(ft.size(), derive_seed(cfg.seed, detail::kFinetuneIdStream));
  Rng unc_rng(derive_seed(cfg.seed, detail::kFinetuneUncStream));
  std::vector<std::size_t> unc_order(static_cast<std::size_t>(unc_features.rows()));
  std::iota(unc_order.begin(), unc_order.end(), 0);

  TrainResult out;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    std::shuffle(unc_order.begin(), unc_order.end(), unc_rng);
    double sum = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t at = 0; at < unc_order.size(); at += cfg.batch_unc) {
      const std::span<const std::size_t> unc_rows(unc_order.data() + at,
                                                  std::min(cfg.batch_unc, unc_order.size() - at));
      const auto ft_rows = ft_stream.next(cfg.batch_id);
      const auto obj = dcm_objective(model, detail::gather_batch(ft, ft_rows),
                                     detail::gather_rows(unc_features, unc_rows), cfg.lambda);
      if (observer) observer({epoch, step, model, ft_rows, unc_rows, obj});
      sgd_step_inplace(model, obj.grads, cfg.lr_finetune);
      sum += obj.loss;
      ++n_steps;
      ++step;
    }
    out.epoch_losses.push_back(sum / static_cast<double>(n_steps));
  }
  out.model = std::move(model);
  return out;
}

/// OOD-detection fine-tuning: the unlabelled set is the uncertainty set.
inline TrainResult finetune_ood(MlpModel model, const LabeledDataset& train, const Matrix& unlabeled,
                                const DcmConfig& cfg, const StepObserver& observer = {}) {
  if (unlabeled.rows() == 0) throw ConfigError("finetune_ood needs a non-empty unlabeled set");
  return finetune(std::move(model), train, unlabeled, cfg, observer);
}

/// Transductive variant: the test inputs themselves are the uncertainty set.
inline TrainResult finetune_transductive(MlpModel model, const LabeledDataset& train, const Matrix& test_features,
                                         const DcmConfig& cfg, const StepObserver& observer = {}) {
  return finetune_ood(std::move(model), train, test_features, cfg, observer);
}

struct ValPartition {
  LabeledDataset correct;
  LabeledDataset error;
  std::vector<std::size_t> correct_rows;
  std::vector<std::size_t> error_rows;
};

/// Splits `val` by whether the model's argmax prediction matches the label.
inline ValPartition partition_val(const MlpModel& model, const LabeledDataset& val) {
  if (val.empty()) throw EmptyInputError("partition_val on an empty validation set");
  const auto pred = predict(model, val.features);
  ValPartition p;
  for (std::size_t i = 0; i < val.size(); ++i) {
    (pred[i] == val.labels[i] ? p.correct_rows : p.error_rows).push_back(i);
  }
  p.correct = val.subset(p.correct_rows);
  p.error = val.subset(p.error_rows);
  return p;
}

inline constexpr std::string_view kEmptyErrorSetWarning =
    "validation error set is empty; confidence fine-tuning skipped";

/// Selective-classification fine-tuning: labelled set = train + correctly
/// classified validation examples, uncertainty set = misclassified ones.
inline TrainResult finetune_sc(MlpModel model, const LabeledDataset& train, const LabeledDataset& val,
                               const DcmConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  const auto part = partition_val(model, val);
  if (part.error.empty()) {
    TrainResult out;
    out.model = std::move(model);
    out.warnings.emplace_back(kEmptyErrorSetWarning);
    return out;
  }
  return finetune(std::move(model), concat(train, part.correct), part.error.features, cfg, observer);
}

}  // namespace dcm

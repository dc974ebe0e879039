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

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "dcm/common.hpp"
#include "dcm/netcore.hpp"

namespace dcm {

/// Loss in nats; finite and non-negative.
struct LossValue {
  double value = 0.0;

  explicit LossValue(double v = 0.0) : value(v) {
    if (!std::isfinite(v) || v < 0.0) throw NumericError("loss must be finite and non-negative");
  }
  operator double() const { return value; }
};

/// Mean of -log p[i, label_i] over rows, probabilities clamped at 1e-12.
inline LossValue xent_loss(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() == 0) throw EmptyInputError("xent_loss on an empty batch");
  require_shape(static_cast<Eigen::Index>(labels.size()) == probs.rows(), "label count differs from rows");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw IndexError("label " + std::to_string(y) + " out of range");
    sum -= std::log(std::max(probs(i, y), kProbClamp));
  }
  return LossValue(sum / static_cast<double>(probs.rows()));
}

/// Cross-entropy against the uniform label distribution, averaged over rows:
/// mean of -(1/C) sum_i log p_i. Per row this is ln C + KL(U || p).
inline LossValue conf_loss(const Matrix& probs) {
  if (probs.rows() == 0) throw EmptyInputError("conf_loss on an empty batch");
  const double c = static_cast<double>(probs.cols());
  const double sum = -probs.cwiseMax(kProbClamp).array().log().sum() / c;
  return LossValue(sum / static_cast<double>(probs.rows()));
}

/// n x C matrix with every entry 1/C.
inline Matrix uniform_targets(Eigen::Index n, Eigen::Index n_classes) {
  return Matrix::Constant(n, n_classes, 1.0 / static_cast<double>(n_classes));
}

/// Confidence loss and its gradient: backward pass with uniform target rows,
/// so the logit gradient is s - 1/C per example.
inline LossAndGrads confidence_backward(const MlpModel& model, const Matrix& unc_inputs) {
  return backward(model, unc_inputs,
                  uniform_targets(unc_inputs.rows(), static_cast<Eigen::Index>(model.n_classes())));
}

struct ObjectiveValue {
  LossValue loss;
  double xent = 0.0;
  double conf = 0.0;  // 0 when the uncertainty batch is empty
  GradientSet grads;
};

/// xent on `ft_batch` + lambda * confidence loss on `unc_inputs`, with the
/// summed gradient. An empty uncertainty batch contributes nothing.
inline ObjectiveValue dcm_objective(const MlpModel& model, const Batch& ft_batch, const Matrix& unc_inputs,
                                    double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (unc_inputs.rows() > 0) {
    require_shape(static_cast<std::size_t>(unc_inputs.cols()) == model.input_dim(),
                  "uncertainty inputs do not match model input dim");
  }
  auto ft = backward(model, ft_batch);
  ObjectiveValue out{LossValue(ft.loss), ft.loss, 0.0, std::move(ft.grads)};
  if (unc_inputs.rows() > 0 && lambda > 0.0) {
    auto conf = confidence_backward(model, unc_inputs);
    conf.grads *= lambda;
    out.grads += conf.grads;
    out.conf = conf.loss;
    out.loss = LossValue(out.xent + lambda * conf.loss);
  } else if (unc_inputs.rows() > 0) {
    out.conf = -log_softmax_rows(forward_logits(model, unc_inputs)).mean();
  }
  return out;
}

}  // namespace dcm

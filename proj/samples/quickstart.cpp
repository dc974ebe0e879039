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

// Pretrain on a near-OOD benchmark, fine-tune with confidence minimization
// and compare detection before and after.

#include <cstdio>

#include "dcm/dcm.hpp"

int main() {
  dcm::BenchmarkSpec spec;
  spec.kind = dcm::BenchmarkKind::NearOOD;
  spec.seed = 1;
  const auto data = dcm::gen_near_ood(spec);

  dcm::DcmConfig cfg;
  cfg.lambda = 0.5;
  cfg.seed = 1;
  auto model = dcm::init_model({spec.dim, 64, 64, spec.n_classes}, dcm::Activation::ReLU, 1);
  const auto pre = dcm::pretrain(model, data.train, cfg);
  const auto tuned = dcm::finetune_ood(pre.model, data.train, data.uncertainty.features, cfg);

  for (auto kind : dcm::kAllScoreKinds) {
    const auto before = dcm::evaluate(pre.model, data.test, kind);
    const auto after = dcm::evaluate(tuned.model, data.test, kind);
    std::printf("%-9s AUROC %.4f -> %.4f   FPR@95 %.4f -> %.4f\n", std::string(dcm::to_string(kind)).c_str(),
                *before.auroc, *after.auroc, *before.fpr_at_95, *after.fpr_at_95);
  }
  return 0;
}

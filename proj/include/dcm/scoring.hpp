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

// OOD scores. Orientation is fixed: a higher score means "more OOD".

#pragma once

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcm/common.hpp"
#include "dcm/datagen.hpp"
#include "dcm/netcore.hpp"

namespace dcm {

enum class ScoreKind { MSP, MaxLogit, Energy };

inline constexpr ScoreKind kAllScoreKinds[] = {ScoreKind::MSP, ScoreKind::MaxLogit, ScoreKind::Energy};

inline std::string_view to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::MSP: return "msp";
    case ScoreKind::MaxLogit: return "maxlogit";
    case ScoreKind::Energy: return "energy";
  }
  return "?";
}

inline ScoreKind parse_score_kind(std::string_view s) {
  if (s == "msp") return ScoreKind::MSP;
  if (s == "maxlogit") return ScoreKind::MaxLogit;
  if (s == "energy") return ScoreKind::Energy;
  throw ConfigError("unknown score kind '" + std::string(s) + "'");
}

/// Per-row OOD score computed from logits.
///   MSP:      -max_i softmax_i
///   MaxLogit: -max_i z_i
///   Energy:   -log sum_i exp(z_i)
inline Vector ood_score_from_logits(const Matrix& logits, ScoreKind kind) {
  if (kind == ScoreKind::MSP) return -softmax_rows(logits).rowwise().maxCoeff();
  Vector s(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const RowVector z = logits.row(i);
    switch (kind) {
      case ScoreKind::MSP: break;
      case ScoreKind::MaxLogit: s(i) = -z.maxCoeff(); break;
      case ScoreKind::Energy: s(i) = -log_sum_exp(z); break;
    }
  }
  return s;
}

inline Vector ood_score(const MlpModel& model, const Matrix& inputs, ScoreKind kind) {
  return ood_score_from_logits(forward_logits(model, inputs), kind);
}

/// Max softmax probability per row, in [1/C, 1].
inline Vector msp_confidence(const MlpModel& model, const Matrix& inputs) {
  return softmax_rows(forward_logits(model, inputs)).rowwise().maxCoeff();
}

/// Argmax per row; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> predict(const MlpModel& model, const Matrix& inputs) {
  return argmax_rows(forward_logits(model, inputs));
}

/// One row of a score dump.
struct ScoreRecord {
  std::size_t example_id = 0;
  Domain domain = Domain::ID;
  int label = kNoLabel;
  int prediction = 0;
  ScoreKind kind = ScoreKind::MSP;
  double score = 0.0;
};

inline std::vector<ScoreRecord> score_dataset(const MlpModel& model, const LabeledDataset& ds, ScoreKind kind) {
  const Matrix logits = forward_logits(model, ds.features);
  const Vector s = ood_score_from_logits(logits, kind);
  const auto pred = argmax_rows(logits);
  std::vector<ScoreRecord> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out[i] = {ds.ids[i], ds.domain[i], ds.labels[i], pred[i], kind, s(static_cast<Eigen::Index>(i))};
  }
  return out;
}

inline void write_score_csv(std::ostream& os, const std::vector<ScoreRecord>& rows) {
  os << "example_id,domain_tag,label,prediction,score_kind,score\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.example_id << ',' << to_string(r.domain) << ',' << r.label << ',' << r.prediction << ','
       << to_string(r.kind) << ',' << r.score << '\n';
  }
}

inline std::vector<ScoreRecord> read_score_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "example_id,domain_tag,label,prediction,score_kind,score") {
    throw Error("score CSV header mismatch");
  }
  std::vector<ScoreRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> c;
    for (std::string cell; std::getline(ls, cell, ',');) c.push_back(cell);
    if (c.size() != 6) throw Error("score CSV row malformed: " + line);
    out.push_back({std::stoull(c[0]), parse_domain(c[1]), std::stoi(c[2]), std::stoi(c[3]), parse_score_kind(c[4]),
                   std::stod(c[5])});
  }
  return out;
}

}  // namespace dcm

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

// Detection metrics (OOD is the positive class, higher score = more OOD) and
// selective-classification metrics over MSP confidences.
//
// Tie conventions: AUROC gives ties half credit, FPR@TPR thresholds with >=,
// the selective curve breaks confidence ties by original order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dcm/common.hpp"
#include "dcm/datagen.hpp"
#include "dcm/netcore.hpp"
#include "dcm/scoring.hpp"

namespace dcm {

namespace detail {

inline void require_both_sides(std::span<const double> id, std::span<const double> ood) {
  if (id.empty() || ood.empty()) throw EmptyInputError("detection metric needs ID and OOD scores");
}

}  // namespace detail

/// Mann-Whitney AUROC: P(ood > id) + 0.5 * P(ood == id).
inline double auroc(std::span<const double> scores_id, std::span<const double> scores_ood) {
  detail::require_both_sides(scores_id, scores_ood);
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> all;
  all.reserve(scores_id.size() + scores_ood.size());
  for (double s : scores_id) all.push_back({s, false});
  for (double s : scores_ood) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of OOD mid-ranks (1-based).
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t n_ood = 0;
    while (j < all.size() && all[j].score == all[i].score) n_ood += all[j++].ood ? 1 : 0;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += mid_rank * static_cast<double>(n_ood);
    i = j;
  }
  const double n_o = static_cast<double>(scores_ood.size());
  const double n_i = static_cast<double>(scores_id.size());
  return (rank_sum - n_o * (n_o + 1.0) / 2.0) / (n_o * n_i);
}

enum class PositiveClass { In, Out };

/// Step-wise area under the precision-recall curve:
///   sum_k (recall_k - recall_{k-1}) * precision_k
/// over thresholds at each distinct score, positives predicted by score >= t.
/// For PositiveClass::In the ranking is reversed so ID is the positive class.
inline double aupr(std::span<const double> scores_id, std::span<const double> scores_ood, PositiveClass positive) {
  detail::require_both_sides(scores_id, scores_ood);
  struct Item {
    double rank_score;
    bool pos;
  };
  std::vector<Item> all;
  const double sign = positive == PositiveClass::Out ? 1.0 : -1.0;
  for (double s : scores_ood) all.push_back({sign * s, positive == PositiveClass::Out});
  for (double s : scores_id) all.push_back({sign * s, positive == PositiveClass::In});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.rank_score > b.rank_score; });

  const double n_pos = static_cast<double>(positive == PositiveClass::Out ? scores_ood.size() : scores_id.size());
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].rank_score == all[i].rank_score) {
      (all[j].pos ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
    i = j;
  }
  return area;
}

/// FPR at the largest threshold t for which the fraction of OOD scores >= t
/// reaches `tpr_target`.
inline double fpr_at_tpr(std::span<const double> scores_id, std::span<const double> scores_ood, double tpr_target) {
  detail::require_both_sides(scores_id, scores_ood);
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw ConfigError("tpr_target must lie in (0, 1]");
  std::vector<double> ood(scores_ood.begin(), scores_ood.end());
  std::sort(ood.begin(), ood.end(), std::greater<>());
  const double n = static_cast<double>(ood.size());
  // Smallest k with k / n >= target; the tolerance absorbs products like 0.95 * 20.
  auto k = static_cast<std::size_t>(std::ceil(tpr_target * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, ood.size());
  const double t = ood[k - 1];
  const auto fp = std::count_if(scores_id.begin(), scores_id.end(), [t](double s) { return s >= t; });
  return static_cast<double>(fp) / static_cast<double>(scores_id.size());
}

/// Expected calibration error with `n_bins` equal-width bins (lo, hi]; a
/// confidence of exactly 0 falls in the first bin.
inline double ece(std::span<const double> confidences, const std::vector<bool>& correct, std::size_t n_bins = 15) {
  require_shape(confidences.size() == correct.size(), "ece: confidence and correctness lengths differ");
  if (n_bins == 0) throw ConfigError("ece needs at least one bin");
  if (confidences.empty()) throw EmptyInputError("ece on empty input");
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw NumericError("ece: confidence outside [0, 1]");
    const double raw = std::ceil(c * static_cast<double>(n_bins)) - 1.0;
    const auto b = static_cast<std::size_t>(std::clamp(raw, 0.0, static_cast<double>(n_bins - 1)));
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double total = 0.0;
  const double n = static_cast<double>(confidences.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / n) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

struct CurvePoint {
  double coverage;
  double accuracy;
};

/// Accuracy of the top-k most confident examples for k = 1..n.
inline std::vector<CurvePoint> selective_curve(std::span<const double> confidences, const std::vector<bool>& correct) {
  require_shape(confidences.size() == correct.size(), "selective_curve: lengths differ");
  if (confidences.empty()) throw EmptyInputError("selective_curve on empty input");
  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
  const double n = static_cast<double>(order.size());
  std::vector<CurvePoint> curve;
  curve.reserve(order.size());
  double hits = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    hits += correct[order[k]] ? 1.0 : 0.0;
    curve.push_back({static_cast<double>(k + 1) / n, hits / static_cast<double>(k + 1)});
  }
  return curve;
}

/// Accuracy over the ceil(cov * n) most confident examples.
inline double acc_at_cov(const std::vector<CurvePoint>& curve, double cov) {
  if (curve.empty()) throw EmptyInputError("acc_at_cov on an empty curve");
  if (!(cov > 0.0 && cov <= 1.0)) throw ConfigError("coverage must lie in (0, 1]");
  const double n = static_cast<double>(curve.size());
  auto k = static_cast<std::size_t>(std::ceil(cov * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, curve.size());
  return curve[k - 1].accuracy;
}

/// Largest coverage whose selective accuracy is >= `acc`; 0 when none is.
inline double cov_at_acc(const std::vector<CurvePoint>& curve, double acc) {
  if (!(acc > 0.0 && acc <= 1.0)) throw ConfigError("accuracy level must lie in (0, 1]");
  double best = 0.0;
  for (const auto& p : curve) {
    if (p.accuracy >= acc - 1e-12) best = std::max(best, p.coverage);
  }
  return best;
}

/// Rectangle-rule area under the accuracy-coverage curve.
inline double sc_auc(const std::vector<CurvePoint>& curve) {
  if (curve.empty()) throw EmptyInputError("sc_auc on an empty curve");
  double s = 0.0;
  for (const auto& p : curve) s += p.accuracy;
  return s / static_cast<double>(curve.size());
}

// ---------------------------------------------------------------------------

inline constexpr double kDefaultLevels[] = {0.90, 0.95, 0.99};

struct EvalOptions {
  std::size_t n_bins = 15;
  std::vector<double> coverage_levels{std::begin(kDefaultLevels), std::end(kDefaultLevels)};
  std::vector<double> accuracy_levels{std::begin(kDefaultLevels), std::end(kDefaultLevels)};
};

/// All metrics for one (model, score kind, test set). Detection fields are
/// empty when the set lacks ID or OOD examples; selective-classification
/// fields are empty when it has no labelled examples.
struct EvalReport {
  std::optional<double> auroc, aupr_in, aupr_out, fpr_at_95, fpr_at_99;
  std::optional<double> ece;
  std::map<double, double> acc_at_cov;
  std::map<double, double> cov_at_acc;
  std::optional<double> sc_auc;
  std::optional<double> id_accuracy;

  bool operator==(const EvalReport&) const = default;
};

namespace detail {

inline void fill_detection(EvalReport& r, const std::vector<double>& id, const std::vector<double>& ood) {
  if (id.empty() || ood.empty()) return;
  r.auroc = auroc(id, ood);
  r.aupr_in = aupr(id, ood, PositiveClass::In);
  r.aupr_out = aupr(id, ood, PositiveClass::Out);
  r.fpr_at_95 = fpr_at_tpr(id, ood, 0.95);
  r.fpr_at_99 = fpr_at_tpr(id, ood, 0.99);
}

inline void fill_selective(EvalReport& r, const std::vector<double>& conf, const std::vector<bool>& correct,
                           const EvalOptions& opt) {
  if (conf.empty()) return;
  r.ece = ece(conf, correct, opt.n_bins);
  const auto curve = selective_curve(conf, correct);
  for (double c : opt.coverage_levels) r.acc_at_cov[c] = acc_at_cov(curve, c);
  for (double a : opt.accuracy_levels) r.cov_at_acc[a] = cov_at_acc(curve, a);
  r.sc_auc = sc_auc(curve);
}

}  // namespace detail

/// Scores `ds` with `model` and computes every applicable metric.
inline EvalReport evaluate(const MlpModel& model, const LabeledDataset& ds, ScoreKind kind,
                           const EvalOptions& opt = {}) {
  if (ds.empty()) throw EmptyInputError("evaluate on an empty dataset");
  const Matrix logits = forward_logits(model, ds.features);
  const Vector score = ood_score_from_logits(logits, kind);
  const Vector conf = softmax_rows(logits).rowwise().maxCoeff();
  const auto pred = argmax_rows(logits);

  EvalReport r;
  std::vector<double> id, ood, sc_conf;
  std::vector<bool> sc_correct;
  std::size_t id_labelled = 0, id_hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    (ds.domain[i] == Domain::ID ? id : ood).push_back(score(ii));
    if (ds.labels[i] == kNoLabel) continue;
    sc_conf.push_back(conf(ii));
    sc_correct.push_back(pred[i] == ds.labels[i]);
    if (ds.domain[i] == Domain::ID) {
      ++id_labelled;
      id_hits += pred[i] == ds.labels[i] ? 1 : 0;
    }
  }
  detail::fill_detection(r, id, ood);
  detail::fill_selective(r, sc_conf, sc_correct, opt);
  if (id_labelled > 0) r.id_accuracy = static_cast<double>(id_hits) / static_cast<double>(id_labelled);
  return r;
}

/// Metrics from a score dump. Selective-classification metrics need the MSP
/// confidence, so they are only filled for MSP dumps.
inline EvalReport evaluate_scores(const std::vector<ScoreRecord>& rows, const EvalOptions& opt = {}) {
  if (rows.empty()) throw EmptyInputError("evaluate_scores on an empty dump");
  EvalReport r;
  std::vector<double> id, ood, sc_conf;
  std::vector<bool> sc_correct;
  std::size_t id_labelled = 0, id_hits = 0;
  const bool msp = rows.front().kind == ScoreKind::MSP;
  for (const auto& row : rows) {
    if (row.kind != rows.front().kind) throw Error("score dump mixes score kinds");
    (row.domain == Domain::ID ? id : ood).push_back(row.score);
    if (row.label == kNoLabel) continue;
    if (msp) {
      sc_conf.push_back(-row.score);
      sc_correct.push_back(row.prediction == row.label);
    }
    if (row.domain == Domain::ID) {
      ++id_labelled;
      id_hits += row.prediction == row.label ? 1 : 0;
    }
  }
  detail::fill_detection(r, id, ood);
  detail::fill_selective(r, sc_conf, sc_correct, opt);
  if (id_labelled > 0) r.id_accuracy = static_cast<double>(id_hits) / static_cast<double>(id_labelled);
  return r;
}

/// Selective curve of a model on the labelled part of `ds`.
inline std::vector<CurvePoint> selective_curve(const MlpModel& model, const LabeledDataset& ds) {
  const Matrix logits = forward_logits(model, ds.features);
  const Vector conf = softmax_rows(logits).rowwise().maxCoeff();
  const auto pred = argmax_rows(logits);
  std::vector<double> c;
  std::vector<bool> ok;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == kNoLabel) continue;
    c.push_back(conf(static_cast<Eigen::Index>(i)));
    ok.push_back(pred[i] == ds.labels[i]);
  }
  return selective_curve(c, ok);
}

}  // namespace dcm

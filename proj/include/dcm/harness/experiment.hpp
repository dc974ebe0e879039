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

// Experiment orchestration: seeds x sweep values, baseline vs. fine-tuned
// evaluation, aggregation and output files.
//
// Run k of a sweep uses seed `config.seed + k`; data generation, weight
// initialization and training draw from separate streams derived from it, so
// a run is reproducible in isolation and independent of the thread count.

#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dcm/datagen.hpp"
#include "dcm/harness/config.hpp"
#include "dcm/harness/report_io.hpp"
#include "dcm/metrics.hpp"
#include "dcm/netcore.hpp"
#include "dcm/theory.hpp"
#include "dcm/training.hpp"

namespace dcm::harness {

inline constexpr const char* kBaseline = "baseline";
inline constexpr const char* kDcm = "dcm";

struct RunSeeds {
  std::uint64_t run_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t check_seed = 0;
};

inline RunSeeds seeds_for_run(std::uint64_t base_seed, std::size_t seed_index) {
  const std::uint64_t s = base_seed + seed_index;
  return {s, derive_seed(s, 0xDA7A), derive_seed(s, 0x1417), derive_seed(s, 0x7A17), derive_seed(s, 0xC4EC)};
}

/// Benchmark spec for one run, with the run's data seed applied.
inline BenchmarkSpec run_benchmark_spec(const ExperimentConfig& cfg, const RunSeeds& seeds) {
  BenchmarkSpec spec = cfg.benchmark;
  spec.seed = seeds.data_seed;
  if (cfg.mode == Mode::TheoryCheck) spec.unc_id_from_train = true;
  return spec;
}

inline OodSplits make_ood_splits(const BenchmarkSpec& spec) {
  switch (spec.kind) {
    case BenchmarkKind::StandardOOD: return gen_standard_ood(spec);
    case BenchmarkKind::NearOOD: return gen_near_ood(spec);
    case BenchmarkKind::CovariateShift: break;
  }
  throw ConfigError("benchmark kind has no OOD splits");
}

struct ReportRow {
  std::string variant;
  std::string split;
  ScoreKind kind = ScoreKind::MSP;
  EvalReport report;
};

struct CurveRecord {
  std::string variant;
  std::string split;
  std::vector<CurvePoint> points;
};

struct RunRecord {
  std::optional<double> sweep_value;
  std::size_t sweep_index = 0;
  std::size_t seed_index = 0;
  RunSeeds seeds;
  bool ok = false;
  std::string error;
  std::vector<ReportRow> rows;
  std::vector<CurveRecord> curves;
  std::vector<double> pretrain_losses;
  std::vector<double> finetune_losses;
  std::vector<std::string> warnings;
  /// Theory mode: certificate on the uncertainty set the model was tuned on.
  std::optional<SeparationCertificate> certificate;
  /// Theory mode: the same check on held-out test inputs.
  std::optional<SeparationCertificate> heldout_certificate;
  std::optional<MlpModel> pretrained;
  std::optional<MlpModel> finetuned;

  std::string tag() const {
    std::string t = "seed" + std::to_string(seed_index);
    if (sweep_value) t = "v" + std::to_string(sweep_index) + "_" + t;
    return t;
  }
};

struct MetricSummary {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

struct AggregateRow {
  std::optional<double> sweep_value;
  std::string variant;
  std::string split;
  ScoreKind kind = ScoreKind::MSP;
  std::map<std::string, MetricSummary> metrics;

  const MetricSummary& at(const std::string& metric) const {
    const auto it = metrics.find(metric);
    if (it == metrics.end()) throw Error("metric " + metric + " not aggregated");
    return it->second;
  }
};

struct RunManifest {
  ExperimentConfig config;
  std::vector<RunRecord> runs;
  std::vector<AggregateRow> aggregates;
  std::vector<std::string> warnings;
  bool partial = false;
  double wall_clock_seconds = 0.0;

  /// Aggregate for a (variant, split, score kind) and optional sweep value.
  const AggregateRow& find(const std::string& variant, const std::string& split, ScoreKind kind,
                           std::optional<double> sweep_value = std::nullopt) const {
    for (const auto& a : aggregates) {
      if (a.variant == variant && a.split == split && a.kind == kind && a.sweep_value == sweep_value) return a;
    }
    throw Error("no aggregate for " + variant + "/" + split + "/" + std::string(to_string(kind)));
  }
};

namespace detail {

inline void evaluate_variant(RunRecord& rec, const ExperimentConfig& cfg, const MlpModel& model,
                             const std::string& variant, const std::string& split, const LabeledDataset& ds) {
  const EvalOptions opt{.n_bins = cfg.n_bins};
  for (auto kind : cfg.score_kinds) rec.rows.push_back({variant, split, kind, evaluate(model, ds, kind, opt)});
  if (cfg.curves) rec.curves.push_back({variant, split, selective_curve(model, ds)});
}

inline void run_ood(RunRecord& rec, const ExperimentConfig& cfg, const MlpModel& base, const DcmConfig& dcm_cfg,
                    const OodSplits& data) {
  evaluate_variant(rec, cfg, base, kBaseline, "test", data.test);
  const Matrix& unc = cfg.mode == Mode::Transductive ? data.test.features : data.uncertainty.features;
  auto tuned = cfg.mode == Mode::Transductive ? finetune_transductive(base, data.train, unc, dcm_cfg)
                                              : finetune_ood(base, data.train, unc, dcm_cfg);
  rec.finetune_losses = tuned.epoch_losses;
  evaluate_variant(rec, cfg, tuned.model, kDcm, "test", data.test);
  if (cfg.mode == Mode::TheoryCheck) {
    SeparationOptions opt{.delta = cfg.delta, .directions = 8, .seed = rec.seeds.check_seed};
    const auto unc_id = data.uncertainty.filter(Domain::ID);
    const auto unc_ood = data.uncertainty.filter(Domain::OOD);
    rec.certificate = certify_separation(tuned.model, unc_id, unc_ood.features, dcm_cfg.lambda, opt);
    const auto test_id = data.test.filter(Domain::ID);
    const auto test_ood = data.test.filter(Domain::OOD);
    rec.heldout_certificate = certify_separation(tuned.model, test_id, test_ood.features, dcm_cfg.lambda, opt);
  }
  rec.finetuned = std::move(tuned.model);
}

inline void run_sc(RunRecord& rec, const ExperimentConfig& cfg, const MlpModel& base, const DcmConfig& dcm_cfg,
                   const ShiftSplits& data) {
  const std::pair<const char*, const LabeledDataset*> splits[] = {
      {"test_id", &data.test_id}, {"test_ood", &data.test_ood}, {"test_mixed", &data.test_mixed}};
  for (auto [name, ds] : splits) evaluate_variant(rec, cfg, base, kBaseline, name, *ds);
  auto tuned = finetune_sc(base, data.train, data.val, dcm_cfg);
  rec.finetune_losses = tuned.epoch_losses;
  rec.warnings.insert(rec.warnings.end(), tuned.warnings.begin(), tuned.warnings.end());
  for (auto [name, ds] : splits) evaluate_variant(rec, cfg, tuned.model, kDcm, name, *ds);
  rec.finetuned = std::move(tuned.model);
}

inline std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& runs) {
  using Key = std::tuple<std::size_t, std::string, std::string, ScoreKind>;
  std::map<Key, AggregateRow> groups;
  std::map<Key, std::map<std::string, std::vector<double>>> values;
  std::vector<Key> order;
  for (const auto& run : runs) {
    if (!run.ok) continue;
    for (const auto& row : run.rows) {
      const Key key{run.sweep_index, row.variant, row.split, row.kind};
      if (!groups.count(key)) {
        groups[key] = AggregateRow{run.sweep_value, row.variant, row.split, row.kind, {}};
        order.push_back(key);
      }
      for (const auto& [name, v] : flatten(row.report)) {
        if (v && std::isfinite(*v)) values[key][name].push_back(*v);
      }
    }
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    auto row = groups[key];
    for (const auto& [name, xs] : values[key]) {
      const double n = static_cast<double>(xs.size());
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= n;
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      const double se = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
      row.metrics[name] = {mean, se, xs.size()};
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

/// Runs a single (sweep value, seed) cell. Errors are captured in the record.
inline RunRecord run_single(const ExperimentConfig& cfg, std::size_t seed_index,
                            std::optional<double> sweep_value = std::nullopt, std::size_t sweep_index = 0) {
  RunRecord rec;
  rec.sweep_value = sweep_value;
  rec.sweep_index = sweep_index;
  rec.seed_index = seed_index;
  rec.seeds = seeds_for_run(cfg.seed, seed_index);
  try {
    const ExperimentConfig run_cfg =
        sweep_value ? with_sweep_value(cfg, cfg.sweep->parameter, *sweep_value) : cfg;
    const BenchmarkSpec spec = run_benchmark_spec(run_cfg, rec.seeds);
    DcmConfig dcm_cfg = run_cfg.dcm;
    dcm_cfg.seed = rec.seeds.train_seed;
    const auto init = init_model(run_cfg.layer_dims(), run_cfg.activation, rec.seeds.init_seed);
    if (spec.kind == BenchmarkKind::CovariateShift) {
      const auto data = gen_covariate_shift(spec);
      auto pre = pretrain(init, data.train, dcm_cfg);
      rec.pretrain_losses = pre.epoch_losses;
      detail::run_sc(rec, run_cfg, pre.model, dcm_cfg, data);
      rec.pretrained = std::move(pre.model);
    } else {
      const auto data = make_ood_splits(spec);
      auto pre = pretrain(init, data.train, dcm_cfg);
      rec.pretrain_losses = pre.epoch_losses;
      detail::run_ood(rec, run_cfg, pre.model, dcm_cfg, data);
      rec.pretrained = std::move(pre.model);
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

/// Runs every (sweep value, seed) cell and aggregates over seeds.
inline RunManifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  struct Cell {
    std::optional<double> value;
    std::size_t sweep_index;
    std::size_t seed_index;
  };
  std::vector<Cell> cells;
  if (cfg.sweep) {
    for (std::size_t v = 0; v < cfg.sweep->values.size(); ++v) {
      for (std::size_t s = 0; s < cfg.n_seeds; ++s) cells.push_back({cfg.sweep->values[v], v, s});
    }
  } else {
    for (std::size_t s = 0; s < cfg.n_seeds; ++s) cells.push_back({std::nullopt, 0, s});
  }

  RunManifest m;
  m.config = cfg;
  m.runs.resize(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      m.runs[i] = run_single(cfg, cells[i].seed_index, cells[i].value, cells[i].sweep_index);
    }
  };
  const std::size_t n_threads = std::min(cfg.threads, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  for (const auto& run : m.runs) {
    if (!run.ok) {
      m.partial = true;
      m.warnings.push_back("run " + run.tag() + " failed: " + run.error);
    }
    for (const auto& w : run.warnings) m.warnings.push_back("run " + run.tag() + ": " + w);
  }
  m.aggregates = detail::aggregate(m.runs);
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

/// One row per (sweep value, seed, variant, split, score kind).
inline std::string results_csv(const RunManifest& m) {
  std::ostringstream os;
  os << "sweep_parameter,sweep_value,seed_index,run_seed,variant,split,score_kind";
  for (const auto& name : metric_names()) os << ',' << name;
  os << '\n';
  const std::string param = m.config.sweep ? std::string(to_string(m.config.sweep->parameter)) : "";
  for (const auto& run : m.runs) {
    if (!run.ok) continue;
    for (const auto& row : run.rows) {
      os << param << ',' << format_number(run.sweep_value) << ',' << run.seed_index << ',' << run.seeds.run_seed << ','
         << row.variant << ',' << row.split << ',' << to_string(row.kind);
      for (const auto& [name, v] : flatten(row.report)) os << ',' << format_number(v);
      os << '\n';
    }
  }
  return os.str();
}

/// Mean and standard error per (sweep value, variant, split, score kind).
inline std::string summary_csv(const RunManifest& m) {
  std::ostringstream os;
  os << "sweep_value,variant,split,score_kind,metric,mean,stderr,n\n";
  for (const auto& a : m.aggregates) {
    for (const auto& [name, s] : a.metrics) {
      os << format_number(a.sweep_value) << ',' << a.variant << ',' << a.split << ',' << to_string(a.kind) << ','
         << name << ',' << format_number(s.mean) << ',' << format_number(s.stderr_) << ',' << s.n << '\n';
    }
  }
  return os.str();
}

inline nlohmann::json manifest_json(const RunManifest& m, const std::filesystem::path& out_dir = {}) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : m.runs) {
    nlohmann::json r{{"seed_index", run.seed_index},
                     {"run_seed", run.seeds.run_seed},
                     {"data_seed", run.seeds.data_seed},
                     {"init_seed", run.seeds.init_seed},
                     {"train_seed", run.seeds.train_seed},
                     {"status", run.ok ? "ok" : "failed"},
                     {"warnings", run.warnings},
                     {"pretrain_final_loss", run.pretrain_losses.empty() ? nlohmann::json(nullptr)
                                                                         : nlohmann::json(run.pretrain_losses.back())},
                     {"finetune_final_loss", run.finetune_losses.empty() ? nlohmann::json(nullptr)
                                                                         : nlohmann::json(run.finetune_losses.back())}};
    r["sweep_value"] = optional_json(run.sweep_value);
    if (!run.ok) r["error"] = run.error;
    if (run.certificate) r["certificate"] = to_json(*run.certificate);
    if (run.heldout_certificate) r["heldout_certificate"] = to_json(*run.heldout_certificate);
    if (!out_dir.empty() && run.finetuned) {
      r["checkpoints"] = {{"pretrained", (out_dir / "checkpoints" / (run.tag() + "_pretrained.dcm1")).string()},
                          {"final", (out_dir / "checkpoints" / (run.tag() + "_dcm.dcm1")).string()}};
    }
    runs.push_back(std::move(r));
  }
  nlohmann::json aggregates = nlohmann::json::array();
  for (const auto& a : m.aggregates) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [name, s] : a.metrics) metrics[name] = {{"mean", s.mean}, {"stderr", s.stderr_}, {"n", s.n}};
    nlohmann::json row{{"variant", a.variant}, {"split", a.split}, {"score_kind", std::string(to_string(a.kind))},
                       {"metrics", metrics}};
    row["sweep_value"] = optional_json(a.sweep_value);
    aggregates.push_back(std::move(row));
  }
  return {{"config", to_json(m.config)}, {"runs", runs},
          {"aggregates", aggregates},    {"warnings", m.warnings},
          {"partial", m.partial},        {"wall_clock_seconds", m.wall_clock_seconds}};
}

/// Writes results.csv, summary.csv, manifest.json, checkpoints and, when
/// enabled, selective curves under `out_dir`.
inline void write_outputs(const RunManifest& m, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& run : m.runs) {
    if (!run.ok) continue;
    if (run.pretrained) {
      std::ostringstream os;
      write_checkpoint(os, *run.pretrained);
      write_file_atomic(out_dir / "checkpoints" / (run.tag() + "_pretrained.dcm1"), os.str());
    }
    if (run.finetuned) {
      std::ostringstream os;
      write_checkpoint(os, *run.finetuned);
      write_file_atomic(out_dir / "checkpoints" / (run.tag() + "_dcm.dcm1"), os.str());
    }
    for (const auto& c : run.curves) {
      write_file_atomic(out_dir / "curves" / (run.tag() + "_" + c.variant + "_" + c.split + ".csv"),
                        curve_csv(c.points));
    }
  }
  write_file_atomic(out_dir / "results.csv", results_csv(m));
  write_file_atomic(out_dir / "summary.csv", summary_csv(m));
  write_file_atomic(out_dir / "manifest.json", manifest_json(m, out_dir).dump(2) + "\n");
}

}  // namespace dcm::harness

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

// Command-line front end: pretrain, fine-tune, score, evaluate, run
// experiments and check the separation guarantee.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcm/dcm.hpp"

namespace fs = std::filesystem;
using namespace dcm;
using namespace dcm::harness;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required for this command");
  auto cfg = parse_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

fs::path out_dir(const Globals& g, const std::string& fallback = "results") {
  return fs::path(g.out.empty() ? fallback : g.out);
}

struct RunContext {
  ExperimentConfig cfg;
  RunSeeds seeds;
  BenchmarkSpec spec;
  DcmConfig dcm;
};

RunContext context(const Globals& g) {
  RunContext c{load(g), {}, {}, {}};
  c.seeds = seeds_for_run(c.cfg.seed, 0);
  c.spec = run_benchmark_spec(c.cfg, c.seeds);
  c.dcm = c.cfg.dcm;
  c.dcm.seed = c.seeds.train_seed;
  return c;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void save_model(const fs::path& path, const MlpModel& m) {
  std::ostringstream os;
  write_checkpoint(os, m);
  write_file_atomic(path, os.str());
}

void save_dataset(const fs::path& path, const LabeledDataset& ds) {
  std::ostringstream os;
  write_dataset_csv(os, ds);
  write_file_atomic(path, os.str());
}

void print_report(const EvalReport& r) {
  for (const auto& [name, v] : flatten(r)) {
    std::printf("  %-12s %s\n", name.c_str(), v ? format_number(*v).c_str() : "-");
  }
}

int cmd_pretrain(const Globals& g) {
  const auto c = context(g);
  const auto dir = out_dir(g, c.cfg.output_dir);
  const auto init = init_model(c.cfg.layer_dims(), c.cfg.activation, c.seeds.init_seed);
  TrainResult res;
  if (c.spec.kind == BenchmarkKind::CovariateShift) {
    const auto data = gen_covariate_shift(c.spec);
    res = pretrain(init, data.train, c.dcm);
    save_dataset(dir / "train.csv", data.train);
    save_dataset(dir / "val.csv", data.val);
    save_dataset(dir / "test_id.csv", data.test_id);
    save_dataset(dir / "test_ood.csv", data.test_ood);
    save_dataset(dir / "test_mixed.csv", data.test_mixed);
  } else {
    const auto data = make_ood_splits(c.spec);
    res = pretrain(init, data.train, c.dcm);
    save_dataset(dir / "train.csv", data.train);
    save_dataset(dir / "val.csv", data.val);
    save_dataset(dir / "uncertainty.csv", data.uncertainty);
    save_dataset(dir / "test.csv", data.test);
  }
  save_model(dir / "pretrained.dcm1", res.model);
  write_json(dir / "pretrain.json", {{"config", to_json(c.cfg)}, {"epoch_losses", res.epoch_losses}});
  std::printf("pretrained %zu epochs, final loss %.6f -> %s\n", res.epoch_losses.size(), res.epoch_losses.back(),
              (dir / "pretrained.dcm1").c_str());
  return 0;
}

int cmd_finetune_ood(const Globals& g, const std::string& checkpoint, bool transductive) {
  const auto c = context(g);
  if (c.spec.kind == BenchmarkKind::CovariateShift) throw ConfigError("finetune-ood needs an OOD benchmark");
  const auto dir = out_dir(g, c.cfg.output_dir);
  const auto model = load_checkpoint(checkpoint);
  const auto data = make_ood_splits(c.spec);
  const auto res = transductive ? finetune_transductive(model, data.train, data.test.features, c.dcm)
                                : finetune_ood(model, data.train, data.uncertainty.features, c.dcm);
  save_model(dir / "dcm.dcm1", res.model);
  write_json(dir / "finetune.json", {{"config", to_json(c.cfg)}, {"transductive", transductive},
                                     {"epoch_losses", res.epoch_losses}});
  std::printf("fine-tuned %zu epochs -> %s\n", res.epoch_losses.size(), (dir / "dcm.dcm1").c_str());
  for (auto kind : c.cfg.score_kinds) {
    std::printf("%s on test:\n", std::string(to_string(kind)).c_str());
    print_report(evaluate(res.model, data.test, kind, {.n_bins = c.cfg.n_bins}));
  }
  return 0;
}

int cmd_finetune_sc(const Globals& g, const std::string& checkpoint) {
  const auto c = context(g);
  if (c.spec.kind != BenchmarkKind::CovariateShift) throw ConfigError("finetune-sc needs benchmark.kind = covariate_shift");
  const auto dir = out_dir(g, c.cfg.output_dir);
  const auto data = gen_covariate_shift(c.spec);
  const auto res = finetune_sc(load_checkpoint(checkpoint), data.train, data.val, c.dcm);
  for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  save_model(dir / "dcm_sc.dcm1", res.model);
  write_json(dir / "finetune_sc.json", {{"config", to_json(c.cfg)}, {"epoch_losses", res.epoch_losses},
                                        {"warnings", res.warnings}});
  std::printf("fine-tuned %zu epochs -> %s\n", res.epoch_losses.size(), (dir / "dcm_sc.dcm1").c_str());
  return 0;
}

int cmd_score(const Globals& g, const std::string& checkpoint, const std::string& data_path, const std::string& kind,
              const std::string& output) {
  const auto model = load_checkpoint(checkpoint);
  const auto ds = load_dataset_csv(data_path, model.n_classes());
  const auto rows = score_dataset(model, ds, parse_score_kind(kind));
  const fs::path path = output.empty() ? out_dir(g) / "scores.csv" : fs::path(output);
  std::ostringstream os;
  write_score_csv(os, rows);
  write_file_atomic(path, os.str());
  std::printf("scored %zu examples -> %s\n", rows.size(), path.c_str());
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& scores, const std::string& checkpoint,
                 const std::string& data_path, const std::string& kind, std::size_t n_bins) {
  EvalReport r;
  const EvalOptions opt{.n_bins = n_bins};
  if (!scores.empty()) {
    std::ifstream is(scores);
    if (!is) throw Error("cannot open " + scores);
    r = evaluate_scores(read_score_csv(is), opt);
  } else {
    if (checkpoint.empty() || data_path.empty()) throw ConfigError("evaluate needs --scores or --checkpoint and --data");
    const auto model = load_checkpoint(checkpoint);
    r = evaluate(model, load_dataset_csv(data_path, model.n_classes()), parse_score_kind(kind), opt);
  }
  print_report(r);
  if (!g.out.empty()) write_json(fs::path(g.out) / "report.json", to_json(r));
  return 0;
}

int cmd_experiment(const Globals& g) {
  const auto cfg = load(g);
  const auto m = run_experiment(cfg);
  write_outputs(m, cfg.output_dir);
  std::printf("%-10s %-10s %-9s %10s %10s %10s %10s\n", "variant", "split", "score", "auroc", "fpr_at_95",
              "acc_at_90", "sc_auc");
  for (const auto& a : m.aggregates) {
    if (a.sweep_value) std::printf("[%s=%s] ", std::string(to_string(cfg.sweep->parameter)).c_str(),
                                   format_number(a.sweep_value).c_str());
    auto cell = [&](const char* name) {
      const auto it = a.metrics.find(name);
      return it == a.metrics.end() ? std::string("-") : format_number(std::round(it->second.mean * 1e4) / 1e4);
    };
    std::printf("%-10s %-10s %-9s %10s %10s %10s %10s\n", a.variant.c_str(), a.split.c_str(),
                std::string(to_string(a.kind)).c_str(), cell("auroc").c_str(), cell("fpr_at_95").c_str(),
                cell("acc_at_90").c_str(), cell("sc_auc").c_str());
  }
  for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("wrote %s\n", (fs::path(cfg.output_dir) / "results.csv").c_str());
  return m.partial ? 1 : 0;
}

// Closed-form checks that need no training.
bool deterministic_checks() {
  bool all = true;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    std::printf("  [%s] %-44s %s\n", ok ? "ok" : "FAIL", name.c_str(), detail.c_str());
    all = all && ok;
  };
  for (std::size_t c : {2u, 4u, 10u}) {
    for (double lambda : {0.1, 0.5, 1.0, 4.0}) {
      RowVector p = RowVector::Zero(static_cast<Eigen::Index>(c));
      p(0) = 1.0;
      const RowVector gd = minimize_single_example(p, lambda);
      const double err = (gd - optimal_distribution(p, lambda)).cwiseAbs().maxCoeff();
      const double msp_err = std::abs(gd.maxCoeff() - optimal_msp_id(lambda, c));
      char name[96];
      std::snprintf(name, sizeof name, "optimum C=%zu lambda=%g", c, lambda);
      report(name, err < 1e-6 && msp_err < 1e-6, "max|gd - closed form| = " + format_number(err));
    }
  }
  Rng rng(7);
  std::gamma_distribution<double> gamma(0.5, 1.0);
  std::size_t violations = 0;
  for (int t = 0; t < 1000; ++t) {
    RowVector p(5), q(5);
    for (int i = 0; i < 5; ++i) {
      p(i) = gamma(rng) + 1e-12;
      q(i) = gamma(rng) + 1e-12;
    }
    p /= p.sum();
    q /= q.sum();
    violations += pinsker_check(p, q).holds ? 0 : 1;
  }
  report("Pinsker on 1000 random pairs", violations == 0, std::to_string(violations) + " violations");
  const double eps = separation_epsilon(100, 10, 1.0);
  report("epsilon(N=100, M=10, lambda=1)", std::abs(eps - 0.2025 / 200.0) < 1e-15, format_number(eps));
  return all;
}

int cmd_theory_check(const Globals& g) {
  std::printf("deterministic checks\n");
  const bool ok = deterministic_checks();
  if (!g.config.empty()) {
    auto cfg = load(g);
    if (cfg.mode != Mode::TheoryCheck) throw ConfigError("theory-check needs mode = theory_check");
    const auto m = run_experiment(cfg);
    write_outputs(m, cfg.output_dir);
    std::printf("\nseparation certificates (uncertainty set)\n");
    std::printf("%-6s %8s %6s %12s %12s %9s %9s %9s %9s %5s %6s %6s %5s\n", "seed", "lambda", "N", "gap",
                "eps_hat", "id_lb", "ood_ub", "min_id", "max_ood", "sep", "prem", "bound", "nbhd");
    for (const auto& run : m.runs) {
      if (!run.ok || !run.certificate) {
        std::printf("%-6zu failed: %s\n", run.seed_index, run.error.c_str());
        continue;
      }
      const auto& c = *run.certificate;
      std::printf("%-6zu %8g %6zu %12.4e %12.4e %9.4f %9.4f %9.4f %9.4f %5s %6s %6s %5s\n", run.seed_index, c.lambda,
                  c.n_total, c.objective_gap, c.epsilon_threshold, c.id_msp_lower_bound, c.ood_msp_upper_bound,
                  c.min_id_msp, c.max_ood_msp, c.separation_holds ? "yes" : "no", c.premise_met ? "yes" : "no",
                  c.bounds_hold ? "yes" : "no",
                  c.neighborhood_separation_holds ? (*c.neighborhood_separation_holds ? "yes" : "no") : "-");
    }
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven confidence minimization"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment configuration file");
  app.add_option("--seed", g.seed, "Override the base seed");
  app.add_option("--out", g.out, "Output directory");

  std::string checkpoint, data, kind = "msp", output, scores;
  bool transductive = false;
  std::size_t n_bins = 15;

  auto* pre = app.add_subcommand("pretrain", "Generate the benchmark and pretrain a model");
  auto* ft = app.add_subcommand("finetune-ood", "Confidence-minimizing fine-tuning for OOD detection");
  ft->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  ft->add_flag("--transductive", transductive, "Use the test inputs as the uncertainty set");
  auto* sc = app.add_subcommand("finetune-sc", "Confidence-minimizing fine-tuning for selective classification");
  sc->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  auto* score = app.add_subcommand("score", "Write per-example scores for a dataset CSV");
  score->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  score->add_option("--data", data, "Dataset CSV")->required();
  score->add_option("--kind", kind, "msp, maxlogit or energy");
  score->add_option("--output", output, "Score CSV path (default <out>/scores.csv)");
  auto* eval = app.add_subcommand("evaluate", "Compute metrics from scores or a checkpoint");
  eval->add_option("--scores", scores, "Score CSV written by `score`");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--data", data, "Dataset CSV");
  eval->add_option("--kind", kind, "msp, maxlogit or energy");
  eval->add_option("--bins", n_bins, "Calibration bins");
  auto* exp = app.add_subcommand("experiment", "Run a configured experiment");
  auto* theory = app.add_subcommand("theory-check", "Check the optimum and separation guarantees");

  CLI11_PARSE(app, argc, argv);
  try {
    if (pre->parsed()) return cmd_pretrain(g);
    if (ft->parsed()) return cmd_finetune_ood(g, checkpoint, transductive);
    if (sc->parsed()) return cmd_finetune_sc(g, checkpoint);
    if (score->parsed()) return cmd_score(g, checkpoint, data, kind, output);
    if (eval->parsed()) return cmd_evaluate(g, scores, checkpoint, data, kind, n_bins);
    if (exp->parsed()) return cmd_experiment(g);
    if (theory->parsed()) return cmd_theory_check(g);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

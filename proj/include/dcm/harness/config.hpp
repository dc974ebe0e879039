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

// Experiment configuration files.
//
// Plain text, one `dotted.key = value` per line, `#` starts a comment. Lists
// are comma separated. Parsing is strict: unknown keys, duplicate keys and
// malformed values are errors. Only `mode` and `benchmark.kind` are required.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dcm/common.hpp"
#include "dcm/datagen.hpp"
#include "dcm/netcore.hpp"
#include "dcm/scoring.hpp"
#include "dcm/training.hpp"

namespace dcm::harness {

enum class Mode { OodDetection, SelectiveClassification, Transductive, TheoryCheck };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::OodDetection: return "ood_detection";
    case Mode::SelectiveClassification: return "selective_classification";
    case Mode::Transductive: return "transductive";
    case Mode::TheoryCheck: return "theory_check";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "ood_detection") return Mode::OodDetection;
  if (s == "selective_classification") return Mode::SelectiveClassification;
  if (s == "transductive") return Mode::Transductive;
  if (s == "theory_check") return Mode::TheoryCheck;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

enum class SweepParam { Lambda, AlphaU, UncSize, Severity };

inline std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::Lambda: return "lambda";
    case SweepParam::AlphaU: return "alpha_u";
    case SweepParam::UncSize: return "unc_size";
    case SweepParam::Severity: return "severity";
  }
  return "?";
}

inline SweepParam parse_sweep_param(std::string_view s) {
  if (s == "lambda") return SweepParam::Lambda;
  if (s == "alpha_u") return SweepParam::AlphaU;
  if (s == "unc_size") return SweepParam::UncSize;
  if (s == "severity") return SweepParam::Severity;
  throw ConfigError("unknown sweep parameter '" + std::string(s) + "'");
}

struct Sweep {
  SweepParam parameter = SweepParam::Lambda;
  std::vector<double> values;
};

struct ExperimentConfig {
  BenchmarkSpec benchmark;
  DcmConfig dcm;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::ReLU;
  std::vector<ScoreKind> score_kinds{ScoreKind::MSP, ScoreKind::MaxLogit, ScoreKind::Energy};
  Mode mode = Mode::OodDetection;
  std::optional<Sweep> sweep;
  std::size_t n_seeds = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "results";
  std::size_t threads = 1;
  std::size_t n_bins = 15;
  bool curves = false;
  /// Perturbation radius for the theory-check neighborhood test.
  double delta = 0.5;

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> dims{benchmark.dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(benchmark.n_classes);
    return dims;
  }

  void validate() const;
};

/// Applies one sweep value to a copy of the configuration.
inline ExperimentConfig with_sweep_value(ExperimentConfig cfg, SweepParam p, double v) {
  switch (p) {
    case SweepParam::Lambda: cfg.dcm.lambda = v; break;
    case SweepParam::AlphaU: cfg.benchmark.alpha_u = v; break;
    case SweepParam::UncSize: cfg.benchmark.n_unc = static_cast<std::size_t>(std::llround(v)); break;
    case SweepParam::Severity: cfg.benchmark.corruption_severity = v; break;
  }
  return cfg;
}

inline void validate_sweep_value(SweepParam p, double v) {
  const bool ok = [&] {
    switch (p) {
      case SweepParam::Lambda: return std::isfinite(v) && v >= 0.0;
      case SweepParam::AlphaU: return v >= 0.0 && v <= 1.0;
      case SweepParam::UncSize: return v >= 1.0 && v == std::floor(v);
      case SweepParam::Severity: return std::isfinite(v) && v >= 0.0;
    }
    return false;
  }();
  if (!ok) {
    std::ostringstream os;
    os << "sweep value " << v << " is invalid for parameter " << to_string(p);
    throw ConfigError(os.str());
  }
}

inline void ExperimentConfig::validate() const {
  benchmark.validate();
  dcm.validate();
  if (n_seeds == 0) throw ConfigError("n_seeds must be >= 1");
  if (threads == 0) throw ConfigError("threads must be >= 1");
  if (n_bins == 0) throw ConfigError("eval.n_bins must be >= 1");
  if (score_kinds.empty()) throw ConfigError("eval.score_kinds must not be empty");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("model.hidden sizes must be positive");
  }
  const bool shift = benchmark.kind == BenchmarkKind::CovariateShift;
  if (mode == Mode::SelectiveClassification && !shift) {
    throw ConfigError("selective_classification needs benchmark.kind = covariate_shift");
  }
  if (mode != Mode::SelectiveClassification && shift) {
    throw ConfigError("covariate_shift is only used by selective_classification");
  }
  if (mode == Mode::TheoryCheck && !(dcm.lambda > 0.0)) throw ConfigError("theory_check needs dcm.lambda > 0");
  if (sweep) {
    if (sweep->values.empty()) throw ConfigError("sweep.values must not be empty");
    for (double v : sweep->values) validate_sweep_value(sweep->parameter, v);
    if (mode == Mode::TheoryCheck && sweep->parameter == SweepParam::Lambda) {
      for (double v : sweep->values) {
        if (!(v > 0.0)) throw ConfigError("theory_check sweeps need lambda > 0");
      }
    }
  }
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (true) {
    const auto comma = s.find(',', at);
    out.push_back(trim(s.substr(at, comma == std::string_view::npos ? std::string_view::npos : comma - at)));
    if (comma == std::string_view::npos) break;
    at = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

}  // namespace detail

/// Parses configuration text. `source` is only used in error messages.
inline ExperimentConfig parse_config_text(std::string_view text, const std::string& source = "<config>") {
  ExperimentConfig cfg;
  std::optional<SweepParam> sweep_param;
  std::optional<std::vector<double>> sweep_values;
  using Setter = std::function<void(const std::string& key, const std::string& value)>;
  using detail::parse_bool;
  using detail::parse_number;
  const auto size = [](auto& field) {
    return [&field](const std::string& k, const std::string& v) { field = parse_number<std::size_t>(k, v); };
  };
  const auto real = [](auto& field) {
    return [&field](const std::string& k, const std::string& v) { field = parse_number<double>(k, v); };
  };
  auto& b = cfg.benchmark;
  auto& d = cfg.dcm;
  const std::map<std::string, Setter, std::less<>> setters{
      {"mode", [&](const std::string&, const std::string& v) { cfg.mode = parse_mode(v); }},
      {"benchmark.kind", [&](const std::string&, const std::string& v) { b.kind = parse_benchmark_kind(v); }},
      {"benchmark.n_classes", size(b.n_classes)},
      {"benchmark.dim", size(b.dim)},
      {"benchmark.class_separation", real(b.class_separation)},
      {"benchmark.ood_offset", real(b.ood_offset)},
      {"benchmark.alpha_u", real(b.alpha_u)},
      {"benchmark.alpha_test", real(b.alpha_test)},
      {"benchmark.n_train", size(b.n_train)},
      {"benchmark.n_val", size(b.n_val)},
      {"benchmark.n_unc", size(b.n_unc)},
      {"benchmark.n_test", size(b.n_test)},
      {"benchmark.corruption_severity", real(b.corruption_severity)},
      {"benchmark.unc_id_from_train",
       [&](const std::string& k, const std::string& v) { b.unc_id_from_train = parse_bool(k, v); }},
      {"model.hidden",
       [&](const std::string& k, const std::string& v) { cfg.hidden = detail::parse_number_list<std::size_t>(k, v); }},
      {"model.activation", [&](const std::string&, const std::string& v) { cfg.activation = parse_activation(v); }},
      {"dcm.lambda", real(d.lambda)},
      {"dcm.pretrain_epochs", size(d.pretrain_epochs)},
      {"dcm.finetune_epochs", size(d.finetune_epochs)},
      {"dcm.lr_pretrain", real(d.lr_pretrain)},
      {"dcm.lr_finetune", real(d.lr_finetune)},
      {"dcm.batch_id", size(d.batch_id)},
      {"dcm.batch_unc", size(d.batch_unc)},
      {"eval.score_kinds",
       [&](const std::string&, const std::string& v) {
         cfg.score_kinds.clear();
         for (const auto& item : detail::split_list(v)) cfg.score_kinds.push_back(parse_score_kind(item));
       }},
      {"eval.n_bins", size(cfg.n_bins)},
      {"eval.curves", [&](const std::string& k, const std::string& v) { cfg.curves = parse_bool(k, v); }},
      {"eval.delta", real(cfg.delta)},
      {"sweep.parameter", [&](const std::string&, const std::string& v) { sweep_param = parse_sweep_param(v); }},
      {"sweep.values",
       [&](const std::string& k, const std::string& v) { sweep_values = detail::parse_number_list<double>(k, v); }},
      {"n_seeds", size(cfg.n_seeds)},
      {"seed", [&](const std::string& k, const std::string& v) { cfg.seed = parse_number<std::uint64_t>(k, v); }},
      {"output_dir", [&](const std::string&, const std::string& v) { cfg.output_dir = v; }},
      {"threads", size(cfg.threads)},
  };

  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (const char* required : {"mode", "benchmark.kind"}) {
    if (!seen.count(required)) throw ConfigError(source + ": missing required key '" + required + "'");
  }
  if (sweep_param.has_value() != sweep_values.has_value()) {
    throw ConfigError(source + ": sweep.parameter and sweep.values must be given together");
  }
  if (sweep_param) cfg.sweep = Sweep{*sweep_param, *sweep_values};
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Configuration echo for manifests.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& b = c.benchmark;
  const auto& d = c.dcm;
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : c.score_kinds) kinds.push_back(std::string(to_string(k)));
  nlohmann::json j{
      {"mode", std::string(to_string(c.mode))},
      {"benchmark",
       {{"kind", std::string(to_string(b.kind))},
        {"n_classes", b.n_classes},
        {"dim", b.dim},
        {"class_separation", b.class_separation},
        {"ood_offset", b.ood_offset},
        {"alpha_u", b.alpha_u},
        {"alpha_test", b.alpha_test},
        {"n_train", b.n_train},
        {"n_val", b.n_val},
        {"n_unc", b.n_unc},
        {"n_test", b.n_test},
        {"corruption_severity", b.corruption_severity},
        {"unc_id_from_train", b.unc_id_from_train}}},
      {"model", {{"hidden", c.hidden}, {"activation", std::string(to_string(c.activation))}}},
      {"dcm",
       {{"lambda", d.lambda},
        {"pretrain_epochs", d.pretrain_epochs},
        {"finetune_epochs", d.finetune_epochs},
        {"lr_pretrain", d.lr_pretrain},
        {"lr_finetune", d.lr_finetune},
        {"batch_id", d.batch_id},
        {"batch_unc", d.batch_unc}}},
      {"eval", {{"score_kinds", kinds}, {"n_bins", c.n_bins}, {"curves", c.curves}, {"delta", c.delta}}},
      {"n_seeds", c.n_seeds},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
  };
  if (c.sweep) j["sweep"] = {{"parameter", std::string(to_string(c.sweep->parameter))}, {"values", c.sweep->values}};
  return j;
}

}  // namespace dcm::harness

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

// Serialization of evaluation reports and atomic file output.

#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcm/common.hpp"
#include "dcm/metrics.hpp"
#include "dcm/theory.hpp"

namespace dcm::harness {

/// Shortest representation that round-trips; empty for a missing value.
inline std::string format_number(std::optional<double> v) {
  if (!v) return {};
  if (std::isnan(*v)) return "nan";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *v);
  return ec == std::errc() ? std::string(buf, end) : std::string{};
}

/// "90" for 0.90.
inline std::string level_tag(double level) { return std::to_string(std::llround(level * 100.0)); }

using NamedMetric = std::pair<std::string, std::optional<double>>;

/// Flattens a report into a fixed column order.
inline std::vector<NamedMetric> flatten(const EvalReport& r, const EvalOptions& opt = {}) {
  std::vector<NamedMetric> out{
      {"auroc", r.auroc},       {"aupr_in", r.aupr_in}, {"aupr_out", r.aupr_out},
      {"fpr_at_95", r.fpr_at_95}, {"fpr_at_99", r.fpr_at_99}, {"ece", r.ece},
  };
  const auto lookup = [](const std::map<double, double>& m, double k) -> std::optional<double> {
    const auto it = m.find(k);
    return it == m.end() ? std::nullopt : std::optional<double>(it->second);
  };
  for (double c : opt.coverage_levels) out.emplace_back("acc_at_" + level_tag(c), lookup(r.acc_at_cov, c));
  for (double a : opt.accuracy_levels) out.emplace_back("cov_at_" + level_tag(a), lookup(r.cov_at_acc, a));
  out.emplace_back("sc_auc", r.sc_auc);
  out.emplace_back("id_accuracy", r.id_accuracy);
  return out;
}

inline std::vector<std::string> metric_names(const EvalOptions& opt = {}) {
  std::vector<std::string> names;
  for (auto& [name, v] : flatten(EvalReport{}, opt)) names.push_back(name);
  return names;
}

inline nlohmann::json optional_json(std::optional<double> v) {
  return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const EvalReport& r, const EvalOptions& opt = {}) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : flatten(r, opt)) j[name] = optional_json(v);
  return j;
}

inline nlohmann::json to_json(const SeparationCertificate& c) {
  nlohmann::json j{
      {"lambda", c.lambda},
      {"n_id", c.n_id},
      {"n_ood", c.n_ood},
      {"n_effective", c.n_total},
      {"n_classes", c.n_classes},
      {"epsilon_threshold", c.epsilon_threshold},
      {"objective", c.objective},
      {"objective_floor", c.objective_floor},
      {"objective_gap", c.objective_gap},
      {"id_msp_lower_bound", c.id_msp_lower_bound},
      {"ood_msp_upper_bound", c.ood_msp_upper_bound},
      {"min_id_msp", c.min_id_msp},
      {"max_ood_msp", c.max_ood_msp},
      {"achieved_gap", c.achieved_gap},
      {"separation_holds", c.separation_holds},
      {"premise_met", c.premise_met},
      {"bounds_hold", c.bounds_hold},
  };
  j["delta"] = optional_json(c.delta);
  j["neighborhood_separation_holds"] =
      c.neighborhood_separation_holds ? nlohmann::json(*c.neighborhood_separation_holds) : nlohmann::json(nullptr);
  return j;
}

/// Writes `content` to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    os << content;
    os.flush();
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "coverage,accuracy\n";
  for (const auto& p : curve) out += format_number(p.coverage) + "," + format_number(p.accuracy) + "\n";
  return out;
}

}  // namespace dcm::harness

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

// Seeded Gaussian-blob benchmarks.
//
// ID classes are unit-covariance blobs whose means sit on a regular simplex
// with pairwise distance `class_separation`. Three regimes are provided:
//   * standard OOD: one extra blob displaced by `ood_offset` from the ID
//     centroid along an axis orthogonal to the ID means;
//   * near OOD: C extra blobs, each `class_separation` away from one ID mean
//     along an axis the ID means do not use;
//   * covariate shift: labelled ID test points pushed through a fixed
//     rotation plus additive noise.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcm/common.hpp"

namespace dcm {

enum class Domain { ID, OOD };

inline std::string_view to_string(Domain d) { return d == Domain::ID ? "ID" : "OOD"; }

inline Domain parse_domain(std::string_view s) {
  if (s == "ID") return Domain::ID;
  if (s == "OOD") return Domain::OOD;
  throw ConfigError("unknown domain tag '" + std::string(s) + "'");
}

/// Label used for OOD examples that have no class (detection benchmarks).
inline constexpr int kNoLabel = -1;

struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<Domain> domain;
  /// Index of the example in the generator's pool; equal ids mean the same
  /// underlying draw.
  std::vector<std::size_t> ids;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  std::size_t count(Domain d) const {
    return static_cast<std::size_t>(std::count(domain.begin(), domain.end(), d));
  }

  void validate() const {
    const auto n = labels.size();
    require_shape(static_cast<std::size_t>(features.rows()) == n && domain.size() == n && ids.size() == n,
                  "dataset columns have inconsistent lengths");
    for (std::size_t i = 0; i < n; ++i) {
      const int y = labels[i];
      const bool ok = (y >= 0 && static_cast<std::size_t>(y) < n_classes) ||
                      (y == kNoLabel && domain[i] == Domain::OOD);
      if (!ok) throw IndexError("label " + std::to_string(y) + " invalid for example " + std::to_string(i));
    }
  }

  LabeledDataset subset(const std::vector<std::size_t>& rows) const {
    LabeledDataset out;
    out.n_classes = n_classes;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
      out.labels.push_back(labels[rows[r]]);
      out.domain.push_back(domain[rows[r]]);
      out.ids.push_back(ids[rows[r]]);
    }
    return out;
  }

  LabeledDataset filter(Domain d) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < size(); ++i) {
      if (domain[i] == d) rows.push_back(i);
    }
    return subset(rows);
  }
};

/// Row-wise concatenation; both sides must agree on dim and class count.
inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  require_shape(a.dim() == b.dim() && a.n_classes == b.n_classes, "cannot concatenate mismatched datasets");
  LabeledDataset out;
  out.n_classes = a.n_classes;
  out.features.resize(a.features.rows() + b.features.rows(), a.features.cols());
  out.features << a.features, b.features;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.domain = a.domain;
  out.domain.insert(out.domain.end(), b.domain.begin(), b.domain.end());
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  return out;
}

enum class BenchmarkKind { StandardOOD, NearOOD, CovariateShift };

inline std::string_view to_string(BenchmarkKind k) {
  switch (k) {
    case BenchmarkKind::StandardOOD: return "standard_ood";
    case BenchmarkKind::NearOOD: return "near_ood";
    case BenchmarkKind::CovariateShift: return "covariate_shift";
  }
  return "?";
}

inline BenchmarkKind parse_benchmark_kind(std::string_view s) {
  if (s == "standard_ood") return BenchmarkKind::StandardOOD;
  if (s == "near_ood") return BenchmarkKind::NearOOD;
  if (s == "covariate_shift") return BenchmarkKind::CovariateShift;
  throw ConfigError("unknown benchmark kind '" + std::string(s) + "'");
}

struct BenchmarkSpec {
  BenchmarkKind kind = BenchmarkKind::StandardOOD;
  std::size_t n_classes = 4;
  std::size_t dim = 8;
  double class_separation = 6.0;
  double ood_offset = 12.0;
  /// ID fraction of the uncertainty / test mixtures: alpha * P_ID + (1 - alpha) * P_OOD.
  double alpha_u = 0.5;
  double alpha_test = 0.5;
  std::size_t n_train = 400;
  std::size_t n_val = 200;
  std::size_t n_unc = 400;
  std::size_t n_test = 400;
  double corruption_severity = 1.0;
  /// Copy the uncertainty set's ID portion from the training set instead of
  /// drawing fresh ID points.
  bool unc_id_from_train = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (dim == 0) throw ConfigError("dim must be positive");
    if (!(class_separation > 0.0)) throw ConfigError("class_separation must be positive");
    if (!(ood_offset > 0.0)) throw ConfigError("ood_offset must be positive");
    if (!(alpha_u >= 0.0 && alpha_u <= 1.0)) throw ConfigError("alpha_u must lie in [0, 1]");
    if (!(alpha_test >= 0.0 && alpha_test <= 1.0)) throw ConfigError("alpha_test must lie in [0, 1]");
    if (n_train == 0 || n_val == 0 || n_unc == 0 || n_test == 0) throw ConfigError("dataset sizes must be positive");
    if (!(corruption_severity >= 0.0)) throw ConfigError("corruption_severity must be >= 0");
  }

  std::size_t n_unc_id() const { return static_cast<std::size_t>(std::llround(alpha_u * static_cast<double>(n_unc))); }
  std::size_t n_test_id() const {
    return static_cast<std::size_t>(std::llround(alpha_test * static_cast<double>(n_test)));
  }
};

struct OodSplits {
  LabeledDataset train, val, uncertainty, test;
};

struct ShiftSplits {
  LabeledDataset train, val, test_id, test_ood, test_mixed;
};

/// `count` vertices of a regular simplex with pairwise distance `separation`,
/// embedded in the first `count` coordinates of R^dim and centred at 0.
inline Matrix simplex_means(std::size_t count, std::size_t dim, double separation) {
  if (dim < count) throw ConfigError("dim must be >= number of simplex vertices");
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  const double scale = separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          scale * ((i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(count));
    }
  }
  return m;
}

namespace detail {

// Per-split RNG streams: resizing one split (e.g. sweeping alpha_u) leaves the
// draws of every other split untouched.
enum class SplitStream : std::uint64_t { Train = 1, Val, UncId, UncOod, TestId, TestOod, Shuffle };

inline Rng split_rng(std::uint64_t seed, SplitStream s) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
}

inline Matrix gaussian_blobs(const Matrix& means, const std::vector<int>& which, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(static_cast<Eigen::Index>(which.size()), means.cols());
  for (std::size_t i = 0; i < which.size(); ++i) {
    for (Eigen::Index j = 0; j < means.cols(); ++j) {
      x(static_cast<Eigen::Index>(i), j) = means(which[i], j) + gauss(rng);
    }
  }
  return x;
}

// n points with class-balanced labels (shuffled), ids first_id, first_id + 1, ...
inline LabeledDataset draw_id_split(const Matrix& means, std::size_t n, std::size_t first_id, Rng rng) {
  const auto c = static_cast<std::size_t>(means.rows());
  LabeledDataset ds;
  ds.n_classes = c;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % c);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
  ds.features = gaussian_blobs(means, ds.labels, rng);
  ds.domain.assign(n, Domain::ID);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), first_id);
  return ds;
}

// n unlabelled points cycling over the OOD blobs.
inline LabeledDataset draw_ood_split(const Matrix& means, std::size_t n, std::size_t first_id, std::size_t n_classes,
                                     Rng rng) {
  std::vector<int> which(n);
  for (std::size_t i = 0; i < n; ++i) which[i] = static_cast<int>(i % static_cast<std::size_t>(means.rows()));
  LabeledDataset ds;
  ds.n_classes = n_classes;
  ds.features = gaussian_blobs(means, which, rng);
  ds.labels.assign(n, kNoLabel);
  ds.domain.assign(n, Domain::OOD);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), first_id);
  return ds;
}

inline LabeledDataset shuffled(const LabeledDataset& ds, Rng& rng) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return ds.subset(order);
}

inline std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

// Shared by the standard and near-OOD generators. Every split comes from its
// own stream and owns a disjoint id range.
inline OodSplits carve_ood_splits(const BenchmarkSpec& spec, const Matrix& id_means, const Matrix& ood_means) {
  const std::size_t c = spec.n_classes;
  const std::size_t unc_id = spec.n_unc_id();
  const std::size_t test_id = spec.n_test_id();
  if (spec.unc_id_from_train && unc_id > spec.n_train) {
    throw ConfigError("uncertainty ID portion larger than the training set it is copied from");
  }
  // Fixed id blocks: train | val | unc | test.
  const std::size_t val_base = spec.n_train;
  const std::size_t unc_base = val_base + spec.n_val;
  const std::size_t test_base = unc_base + spec.n_unc;
  const auto rng = [&](SplitStream s) { return split_rng(spec.seed, s); };

  OodSplits s;
  s.train = draw_id_split(id_means, spec.n_train, 0, rng(SplitStream::Train));
  s.val = draw_id_split(id_means, spec.n_val, val_base, rng(SplitStream::Val));
  const LabeledDataset unc_in = spec.unc_id_from_train ? s.train.subset(range(0, unc_id))
                                                       : draw_id_split(id_means, unc_id, unc_base, rng(SplitStream::UncId));
  const auto unc_out = draw_ood_split(ood_means, spec.n_unc - unc_id, unc_base + unc_id, c, rng(SplitStream::UncOod));
  const auto test_in = draw_id_split(id_means, test_id, test_base, rng(SplitStream::TestId));
  const auto test_out = draw_ood_split(ood_means, spec.n_test - test_id, test_base + test_id, c, rng(SplitStream::TestOod));

  Rng shuffle_rng = rng(SplitStream::Shuffle);
  s.uncertainty = shuffled(concat(unc_in, unc_out), shuffle_rng);
  s.test = shuffled(concat(test_in, test_out), shuffle_rng);
  s.uncertainty.n_classes = s.test.n_classes = c;
  return s;
}

}  // namespace detail

inline OodSplits gen_standard_ood(const BenchmarkSpec& spec) {
  if (spec.kind != BenchmarkKind::StandardOOD) throw ConfigError("gen_standard_ood needs a standard_ood spec");
  spec.validate();
  if (spec.dim <= spec.n_classes) throw ConfigError("standard_ood needs dim > n_classes");
  const Matrix id_means = simplex_means(spec.n_classes, spec.dim, spec.class_separation);
  Matrix ood_mean = Matrix::Zero(1, static_cast<Eigen::Index>(spec.dim));
  ood_mean(0, static_cast<Eigen::Index>(spec.n_classes)) = spec.ood_offset;
  return detail::carve_ood_splits(spec, id_means, ood_mean);
}

inline OodSplits gen_near_ood(const BenchmarkSpec& spec) {
  if (spec.kind != BenchmarkKind::NearOOD) throw ConfigError("gen_near_ood needs a near_ood spec");
  spec.validate();
  if (spec.n_classes % 2 != 0) throw ConfigError("near_ood needs an even class count");
  if (spec.dim < 2 * spec.n_classes) throw ConfigError("near_ood needs dim >= 2 * n_classes");
  // OOD blob c shares ID class c's position on the simplex and is pushed
  // class_separation away from it along an axis no ID mean uses.
  const auto c = static_cast<Eigen::Index>(spec.n_classes);
  const Matrix id_means = simplex_means(spec.n_classes, spec.dim, spec.class_separation);
  Matrix ood_means = id_means;
  for (Eigen::Index k = 0; k < c; ++k) ood_means(k, c + k) += spec.class_separation;
  return detail::carve_ood_splits(spec, id_means, ood_means);
}

/// Fixed corruption used by the covariate-shift benchmark: rotation by
/// severity * pi/8 in a seed-chosen plane, then additive N(0, severity^2) noise.
struct Corruption {
  Vector u, v;  // orthonormal basis of the rotation plane
  double severity = 0.0;

  static Corruption make(std::size_t dim, double severity, Rng& rng) {
    if (dim < 2) throw ConfigError("corruption needs dim >= 2");
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector a(static_cast<Eigen::Index>(dim)), b(static_cast<Eigen::Index>(dim));
    for (auto& x : a) x = gauss(rng);
    for (auto& x : b) x = gauss(rng);
    a.normalize();
    b -= a.dot(b) * a;
    b.normalize();
    return {a, b, severity};
  }

  Matrix rotation() const {
    const double theta = severity * std::acos(-1.0) / 8.0;
    const auto d = u.size();
    Matrix r = Matrix::Identity(d, d);
    r += (std::cos(theta) - 1.0) * (u * u.transpose() + v * v.transpose());
    r += std::sin(theta) * (v * u.transpose() - u * v.transpose());
    return r;
  }

  Matrix apply(const Matrix& x, Rng& noise_rng) const {
    Matrix out = x * rotation().transpose();
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += severity * gauss(noise_rng);
    return out;
  }
};

inline ShiftSplits gen_covariate_shift(const BenchmarkSpec& spec) {
  if (spec.kind != BenchmarkKind::CovariateShift) throw ConfigError("gen_covariate_shift needs a covariate_shift spec");
  spec.validate();
  const std::size_t c = spec.n_classes;
  const Matrix means = simplex_means(c, spec.dim, spec.class_separation);
  const auto rng = [&](detail::SplitStream st) { return detail::split_rng(spec.seed, st); };
  ShiftSplits s;
  s.train = detail::draw_id_split(means, spec.n_train, 0, rng(detail::SplitStream::Train));
  s.val = detail::draw_id_split(means, spec.n_val, spec.n_train, rng(detail::SplitStream::Val));
  s.test_id = detail::draw_id_split(means, spec.n_test, spec.n_train + spec.n_val, rng(detail::SplitStream::TestId));

  // Own streams so the corruption does not depend on the pool sizes.
  Rng corruption_rng(derive_seed(spec.seed, 0xC0));
  Rng noise_rng(derive_seed(spec.seed, 0xC1));
  const auto corruption = Corruption::make(spec.dim, spec.corruption_severity, corruption_rng);
  s.test_ood = s.test_id;
  s.test_ood.features = corruption.apply(s.test_id.features, noise_rng);
  std::fill(s.test_ood.domain.begin(), s.test_ood.domain.end(), Domain::OOD);

  const std::size_t half = spec.n_test / 2;
  s.test_mixed = concat(s.test_id.subset(detail::range(0, half)), s.test_ood.subset(detail::range(half, spec.n_test)));
  return s;
}

/// Stratified, seed-deterministic partition into disjoint parts of the given
/// fractions (sum <= 1; any remainder is dropped). Strata are (label, domain).
inline std::vector<LabeledDataset> resplit(const LabeledDataset& ds, const std::vector<double>& fractions,
                                           std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-12) throw ConfigError("split fractions sum to more than 1");

  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    strata[{ds.labels[i], static_cast<int>(ds.domain[i])}].push_back(i);
  }
  // Spread each stratum evenly along [0, 1) so that every contiguous chunk of
  // the merged order carries proportional class counts.
  Rng rng(seed);
  std::vector<std::pair<double, std::size_t>> keyed;
  for (auto& [key, rows] : strata) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      keyed.emplace_back((static_cast<double>(j) + 0.5) / static_cast<double>(rows.size()), rows[j]);
    }
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<LabeledDataset> parts;
  const double n = static_cast<double>(ds.size());
  double cum = 0.0;
  std::size_t begin = 0;
  for (double f : fractions) {
    cum += f;
    const auto end = std::min(ds.size(), static_cast<std::size_t>(std::llround(cum * n)));
    std::vector<std::size_t> rows;
    for (std::size_t k = begin; k < end; ++k) rows.push_back(keyed[k].second);
    parts.push_back(ds.subset(rows));
    begin = end;
  }
  return parts;
}

// CSV: example_id, f0..f{d-1}, label, domain_tag. Doubles are written with 17
// significant digits so a dump/load cycle is lossless.
inline void write_dataset_csv(std::ostream& os, const LabeledDataset& ds) {
  os << "example_id";
  for (std::size_t j = 0; j < ds.dim(); ++j) os << ",f" << j;
  os << ",label,domain_tag\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.ids[i];
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) os << ',' << ds.features(static_cast<Eigen::Index>(i), j);
    os << ',' << ds.labels[i] << ',' << to_string(ds.domain[i]) << '\n';
  }
}

inline LabeledDataset read_dataset_csv(std::istream& is, std::size_t n_classes) {
  std::string line;
  if (!std::getline(is, line)) throw Error("dataset CSV is empty");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) header.push_back(cell);
  }
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "domain_tag") {
    throw Error("dataset CSV header must end with label,domain_tag");
  }
  const bool has_id = header.front() == "example_id";
  const std::size_t dim = header.size() - 2 - (has_id ? 1 : 0);
  std::vector<double> values;
  LabeledDataset ds;
  ds.n_classes = n_classes;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != header.size()) throw Error("dataset CSV row has the wrong number of cells: " + line);
    std::size_t k = 0;
    ds.ids.push_back(has_id ? std::stoull(cells[k++]) : ds.ids.size());
    for (std::size_t j = 0; j < dim; ++j) values.push_back(std::stod(cells[k++]));
    ds.labels.push_back(std::stoi(cells[k++]));
    ds.domain.push_back(parse_domain(cells[k]));
  }
  ds.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(ds.labels.size()),
                                   static_cast<Eigen::Index>(dim));
  ds.validate();
  return ds;
}

inline void save_dataset_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_dataset_csv(os, ds);
}

inline LabeledDataset load_dataset_csv(const std::string& path, std::size_t n_classes) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_dataset_csv(is, n_classes);
}

}  // namespace dcm

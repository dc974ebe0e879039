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

// Closed-form optimum of the per-example confidence-minimizing objective and
// the Pinsker-based separation certificate.
//
// For one input with true label distribution p, xent + lambda * conf is
// minimized by the smoothed distribution
//   p_lambda = (p + lambda / C) / (1 + lambda),
// and a uniform prediction is optimal for inputs that only enter the
// confidence term. If the objective is within eps of its minimum, every
// per-example KL to those optima is at most N * eps, which through Pinsker's
// inequality pins each MSP to within sqrt(N * eps / 2) of its optimal value.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "dcm/common.hpp"
#include "dcm/datagen.hpp"
#include "dcm/netcore.hpp"
#include "dcm/scoring.hpp"

namespace dcm {

inline void require_distribution(const RowVector& p, const char* what) {
  if (p.size() < 1 || !p.allFinite() || (p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9) {
    throw NumericError(std::string(what) + " is not a probability distribution");
  }
}

inline RowVector optimal_distribution(const RowVector& p, double lambda) {
  require_distribution(p, "p");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  const double c = static_cast<double>(p.size());
  return (p.array() + lambda / c).matrix() / (1.0 + lambda);
}

/// MSP of p_lambda for a one-hot p.
inline double optimal_msp_id(double lambda, std::size_t n_classes) {
  const double c = static_cast<double>(n_classes);
  return 1.0 / (1.0 + lambda) + lambda / (1.0 + lambda) / c;
}

inline double msp_uniform(std::size_t n_classes) { return 1.0 / static_cast<double>(n_classes); }

/// Largest objective gap that still forces separation:
///   (1 / 2N) * ((M - 1) / ((1 + lambda) M))^2.
inline double separation_epsilon(std::size_t n, std::size_t m, double lambda) {
  if (n == 0) throw ConfigError("separation_epsilon needs N >= 1");
  if (m < 2) throw ConfigError("separation_epsilon needs M >= 2");
  if (!(lambda > 0.0)) throw ConfigError("separation needs lambda > 0");
  const double md = static_cast<double>(m);
  const double r = (md - 1.0) / ((1.0 + lambda) * md);
  return r * r / (2.0 * static_cast<double>(n));
}

inline double total_variation(const RowVector& p, const RowVector& q) {
  require_shape(p.size() == q.size(), "distributions differ in length");
  return 0.5 * (p - q).cwiseAbs().sum();
}

/// KL(p || q) in nats; +inf when q vanishes where p does not.
inline double kl_divergence(const RowVector& p, const RowVector& q) {
  require_shape(p.size() == q.size(), "distributions differ in length");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) == 0.0) continue;
    if (q(i) == 0.0) return std::numeric_limits<double>::infinity();
    kl += p(i) * std::log(p(i) / q(i));
  }
  return std::max(kl, 0.0);
}

struct PinskerResult {
  double tv = 0.0;
  double kl = 0.0;
  bool holds = false;
  bool infinite_kl = false;
};

/// Evaluates both sides of TV(p, q) <= sqrt(KL(p || q) / 2).
inline PinskerResult pinsker_check(const RowVector& p, const RowVector& q) {
  require_distribution(p, "p");
  require_distribution(q, "q");
  PinskerResult r;
  r.tv = total_variation(p, q);
  r.kl = kl_divergence(p, q);
  r.infinite_kl = std::isinf(r.kl);
  r.holds = r.infinite_kl || r.tv <= std::sqrt(r.kl / 2.0) + 1e-12;
  return r;
}

/// Gradient descent on the logits of a single example under
/// xent(s, p) + lambda * conf(s), using the logit gradient
/// (s - p) + lambda * (s - 1/C). Returns softmax of the final logits.
inline RowVector minimize_single_example(const RowVector& p, double lambda, std::size_t max_iters = 200000,
                                         double tol = 1e-13) {
  require_distribution(p, "p");
  const double c = static_cast<double>(p.size());
  const double lr = 1.0 / (1.0 + lambda);
  RowVector z = RowVector::Zero(p.size());
  for (std::size_t it = 0; it < max_iters; ++it) {
    const RowVector s = softmax(z);
    const RowVector g = (s - p) + lambda * (s.array() - 1.0 / c).matrix();
    if (g.cwiseAbs().maxCoeff() < tol) break;
    z -= lr * g;
  }
  return softmax(z);
}

struct SeparationOptions {
  /// Radius of the random perturbations used for the neighborhood check; 0 skips it.
  double delta = 0.0;
  std::size_t directions = 8;
  std::uint64_t seed = 0;
};

struct SeparationCertificate {
  double lambda = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  /// Effective example count: every per-example KL is bounded by N * gap.
  std::size_t n_total = 0;
  std::size_t n_classes = 0;
  double epsilon_threshold = 0.0;
  double objective = 0.0;
  double objective_floor = 0.0;  // L_0
  double objective_gap = 0.0;    // L - L_0
  double id_msp_lower_bound = 0.0;
  double ood_msp_upper_bound = 0.0;
  double min_id_msp = 0.0;
  double max_ood_msp = 0.0;
  double achieved_gap = 0.0;  // min_id_msp - max_ood_msp
  bool separation_holds = false;
  bool premise_met = false;  // objective_gap < epsilon_threshold
  bool bounds_hold = false;  // measured MSPs respect the Pinsker bounds
  std::optional<double> delta;
  std::optional<bool> neighborhood_separation_holds;
};

namespace detail {

// Cross-entropy of the one-hot smoothed optimum with itself.
inline double smoothed_entropy(double lambda, std::size_t n_classes) {
  const double c = static_cast<double>(n_classes);
  const double hi = (1.0 + lambda / c) / (1.0 + lambda);
  const double lo = (lambda / c) / (1.0 + lambda);
  double h = -hi * std::log(hi);
  if (lo > 0.0) h -= (c - 1.0) * lo * std::log(lo);
  return h;
}

inline void neighborhood_check(const MlpModel& model, const Matrix& id_x, const Matrix& ood_x,
                               const SeparationOptions& opt, SeparationCertificate& cert) {
  Rng rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto perturbed_msp = [&](const Matrix& x, bool want_min) {
    double best = want_min ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < opt.directions; ++k) {
      Matrix dir(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir.data()[i] = gauss(rng);
      for (Eigen::Index i = 0; i < dir.rows(); ++i) dir.row(i) *= opt.delta / dir.row(i).norm();
      const Vector msp = msp_confidence(model, x + dir);
      best = want_min ? std::min(best, msp.minCoeff()) : std::max(best, msp.maxCoeff());
    }
    return best;
  };
  const double lo = std::min(cert.min_id_msp, perturbed_msp(id_x, true));
  const double hi = std::max(cert.max_ood_msp, perturbed_msp(ood_x, false));
  cert.delta = opt.delta;
  cert.neighborhood_separation_holds = lo > hi;
}

}  // namespace detail

/// Measures the objective gap of `model` on (labelled ID set, OOD inputs) and
/// checks the MSP separation it implies.
///
/// The objective is mean_ID[xent + lambda * conf] + lambda * mean_OOD[conf],
/// with floor L_0 = (1 + lambda) H(p_lambda) + lambda ln C.
inline SeparationCertificate certify_separation(const MlpModel& model, const LabeledDataset& id_set,
                                                const Matrix& ood_features, double lambda,
                                                const SeparationOptions& opt = {}) {
  if (id_set.empty() || ood_features.rows() == 0) throw EmptyInputError("certify_separation needs ID and OOD inputs");
  if (!(lambda > 0.0)) throw ConfigError("separation needs lambda > 0");
  const std::size_t c = model.n_classes();
  SeparationCertificate cert;
  cert.lambda = lambda;
  cert.n_classes = c;
  cert.n_id = id_set.size();
  cert.n_ood = static_cast<std::size_t>(ood_features.rows());
  const double n_eff = std::max(static_cast<double>(cert.n_id) / (1.0 + lambda), static_cast<double>(cert.n_ood) / lambda);
  cert.n_total = static_cast<std::size_t>(std::ceil(n_eff - 1e-9));
  cert.epsilon_threshold = separation_epsilon(cert.n_total, c, lambda);

  const Matrix id_logp = log_softmax_rows(forward_logits(model, id_set.features));
  const Matrix ood_logp = log_softmax_rows(forward_logits(model, ood_features));
  double id_term = 0.0;
  for (Eigen::Index i = 0; i < id_logp.rows(); ++i) {
    const int y = id_set.labels[static_cast<std::size_t>(i)];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw IndexError("certify_separation needs labelled ID examples");
    id_term += -id_logp(i, y) - lambda * id_logp.row(i).mean();
  }
  id_term /= static_cast<double>(id_logp.rows());
  const double ood_term = -lambda * ood_logp.mean();
  cert.objective = id_term + ood_term;
  cert.objective_floor = (1.0 + lambda) * detail::smoothed_entropy(lambda, c) + lambda * std::log(static_cast<double>(c));
  cert.objective_gap = std::max(0.0, cert.objective - cert.objective_floor);
  cert.premise_met = cert.objective_gap < cert.epsilon_threshold;

  const double radius = std::sqrt(static_cast<double>(cert.n_total) * cert.objective_gap / 2.0);
  cert.id_msp_lower_bound = std::clamp(optimal_msp_id(lambda, c) - radius, 0.0, 1.0);
  cert.ood_msp_upper_bound = std::clamp(msp_uniform(c) + radius, 0.0, 1.0);

  cert.min_id_msp = id_logp.rowwise().maxCoeff().array().exp().minCoeff();
  cert.max_ood_msp = ood_logp.rowwise().maxCoeff().array().exp().maxCoeff();
  cert.achieved_gap = cert.min_id_msp - cert.max_ood_msp;
  cert.separation_holds = cert.min_id_msp > cert.max_ood_msp;
  cert.bounds_hold =
      cert.min_id_msp >= cert.id_msp_lower_bound - 1e-12 && cert.max_ood_msp <= cert.ood_msp_upper_bound + 1e-12;
  if (opt.delta > 0.0) detail::neighborhood_check(model, id_set.features, ood_features, opt, cert);
  return cert;
}

}  // namespace dcm

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

// Dense feed-forward classifier with hand-written forward and backward passes.
//
// Hidden layers use ReLU or Tanh, the output layer is linear and produces
// logits. Softmax is only applied inside losses and scores so that raw logits
// stay available to logit-based OOD scores.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dcm/common.hpp"

namespace dcm {

enum class Activation { ReLU, Tanh };

inline std::string_view to_string(Activation a) {
  return a == Activation::ReLU ? "relu" : "tanh";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// Weight matrix (out x in) and bias vector (out) of one dense layer. Also
/// used to hold the matching gradients.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  bool operator==(const DenseLayer& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() &&
           bias.size() == o.bias.size() && weight == o.weight && bias == o.bias;
  }
};

struct MlpModel {
  std::vector<std::size_t> layer_dims;
  std::vector<DenseLayer> layers;
  Activation activation = Activation::ReLU;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t n_classes() const { return layer_dims.back(); }

  std::size_t n_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool operator==(const MlpModel& o) const {
    return layer_dims == o.layer_dims && activation == o.activation && layers == o.layers;
  }

  /// Throws ShapeError / NumericError when the invariants do not hold.
  void validate() const {
    if (layer_dims.size() < 2) throw ShapeError("model needs at least two layer dims");
    require_shape(layers.size() + 1 == layer_dims.size(), "layer count does not match layer_dims");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      require_shape(static_cast<std::size_t>(l.weight.rows()) == layer_dims[k + 1] &&
                        static_cast<std::size_t>(l.weight.cols()) == layer_dims[k] &&
                        static_cast<std::size_t>(l.bias.size()) == layer_dims[k + 1],
                    "layer " + std::to_string(k) + " has the wrong shape");
      if (!l.weight.allFinite() || !l.bias.allFinite()) {
        throw NumericError("layer " + std::to_string(k) + " has non-finite parameters");
      }
    }
  }
};

/// Per-layer gradients, shape-congruent with the owning model.
struct GradientSet {
  std::vector<DenseLayer> layers;

  static GradientSet zeros_like(const MlpModel& m) {
    GradientSet g;
    g.layers.reserve(m.layers.size());
    for (const auto& l : m.layers) {
      g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return g;
  }

  bool congruent_with(const MlpModel& m) const {
    if (layers.size() != m.layers.size()) return false;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      if (layers[k].weight.rows() != m.layers[k].weight.rows() ||
          layers[k].weight.cols() != m.layers[k].weight.cols() ||
          layers[k].bias.size() != m.layers[k].bias.size()) {
        return false;
      }
    }
    return true;
  }

  GradientSet& operator+=(const GradientSet& o) {
    require_shape(layers.size() == o.layers.size(), "gradient sets differ in depth");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      layers[k].weight += o.layers[k].weight;
      layers[k].bias += o.layers[k].bias;
    }
    return *this;
  }

  GradientSet& operator*=(double s) {
    for (auto& l : layers) {
      l.weight *= s;
      l.bias *= s;
    }
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& l : layers) {
      if (l.weight.size() > 0) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
      if (l.bias.size() > 0) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    }
    return m;
  }
};

/// Inputs plus either integer labels or a row-stochastic target matrix.
struct Batch {
  Matrix inputs;
  std::variant<std::vector<int>, Matrix> targets;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }

  /// Targets expanded to an n x C distribution matrix. Validates labels and
  /// row sums.
  Matrix target_distribution(std::size_t n_classes) const {
    const auto n = inputs.rows();
    const auto c = static_cast<Eigen::Index>(n_classes);
    if (const auto* labels = std::get_if<std::vector<int>>(&targets)) {
      require_shape(static_cast<Eigen::Index>(labels->size()) == n, "label count differs from input rows");
      Matrix p = Matrix::Zero(n, c);
      for (Eigen::Index i = 0; i < n; ++i) {
        const int y = (*labels)[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw IndexError("label " + std::to_string(y) + " out of range");
        p(i, y) = 1.0;
      }
      return p;
    }
    const auto& p = std::get<Matrix>(targets);
    require_shape(p.rows() == n && p.cols() == c, "target matrix shape differs from batch");
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((p.row(i).array() < 0.0).any() || std::abs(p.row(i).sum() - 1.0) > 1e-9) {
        throw NumericError("target row " + std::to_string(i) + " is not a distribution");
      }
    }
    return p;
  }
};

namespace detail {

inline Matrix activate(const Matrix& pre, Activation a) {
  if (a == Activation::ReLU) return pre.cwiseMax(0.0);
  return pre.array().tanh().matrix();
}

// d(activation)/d(pre) evaluated elementwise.
inline Matrix activation_derivative(const Matrix& pre, const Matrix& post, Activation a) {
  if (a == Activation::ReLU) return (pre.array() > 0.0).cast<double>().matrix();
  return (1.0 - post.array().square()).matrix();
}

inline void check_input(const MlpModel& model, const Matrix& inputs) {
  require_shape(static_cast<std::size_t>(inputs.cols()) == model.input_dim(),
                "input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                    std::to_string(model.input_dim()));
}

// Forward pass keeping every layer's output (post-activation for hidden
// layers, raw logits for the last).
struct ForwardTrace {
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // layer outputs; post.back() are logits
};

inline ForwardTrace forward_trace(const MlpModel& model, const Matrix& inputs) {
  check_input(model, inputs);
  ForwardTrace t;
  const Matrix* x = &inputs;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    Matrix z = (*x) * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    const bool last = k + 1 == model.layers.size();
    t.post.push_back(last ? z : activate(z, model.activation));
    t.pre.push_back(std::move(z));
    x = &t.post.back();
  }
  return t;
}

}  // namespace detail

/// Logits for every row of `inputs` (n x d) as an n x C matrix.
inline Matrix forward_logits(const MlpModel& model, const Matrix& inputs) {
  return detail::forward_trace(model, inputs).post.back();
}

/// Numerically stable log-sum-exp of one logit row.
inline double log_sum_exp(const RowVector& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

inline RowVector softmax(const RowVector& logits) {
  if (logits.size() < 2) throw ShapeError("softmax needs at least two classes");
  if (!logits.allFinite()) throw NumericError("softmax input is not finite");
  const RowVector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Row-wise softmax of an n x C logit matrix.
inline Matrix softmax_rows(const Matrix& logits) {
  if (logits.cols() < 2) throw ShapeError("softmax needs at least two classes");
  if (!logits.allFinite()) throw NumericError("softmax input is not finite");
  Matrix e = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  const Vector sums = e.rowwise().sum();
  for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) /= sums(i);
  return e;
}

/// Row-wise log-softmax; exact in the tails where softmax underflows.
inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = logits.row(i).array() - log_sum_exp(logits.row(i));
  }
  return out;
}

struct LossAndGrads {
  double loss = 0.0;
  GradientSet grads;
};

/// Mean cross-entropy of softmax(logits) against `targets` (n x C, rows are
/// distributions) and its gradient. The per-example logit gradient is
/// softmax - target; everything is averaged over the batch.
inline LossAndGrads backward(const MlpModel& model, const Matrix& inputs, const Matrix& targets) {
  detail::check_input(model, inputs);
  const auto n = inputs.rows();
  require_shape(targets.rows() == n && static_cast<std::size_t>(targets.cols()) == model.n_classes(),
                "target matrix does not match batch and model");
  LossAndGrads out;
  out.grads = GradientSet::zeros_like(model);
  if (n == 0) return out;

  const auto trace = detail::forward_trace(model, inputs);
  const Matrix& logits = trace.post.back();
  const Matrix logp = log_softmax_rows(logits);
  out.loss = -(targets.array() * logp.array()).sum() / static_cast<double>(n);

  Matrix delta = (logp.array().exp().matrix() - targets) / static_cast<double>(n);
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    const Matrix& layer_in = k == 0 ? inputs : trace.post[k - 1];
    out.grads.layers[k].weight.noalias() = delta.transpose() * layer_in;
    out.grads.layers[k].bias = delta.colwise().sum().transpose();
    if (k > 0) {
      Matrix upstream = delta * model.layers[k].weight;
      delta = upstream.cwiseProduct(
          detail::activation_derivative(trace.pre[k - 1], trace.post[k - 1], model.activation));
    }
  }
  return out;
}

inline LossAndGrads backward(const MlpModel& model, const Batch& batch) {
  return backward(model, batch.inputs, batch.target_distribution(model.n_classes()));
}

/// In-place SGD update p <- p - lr * g.
inline void sgd_step_inplace(MlpModel& model, const GradientSet& grads, double lr) {
  require_shape(grads.congruent_with(model), "gradient set is not congruent with model");
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    model.layers[k].weight -= lr * grads.layers[k].weight;
    model.layers[k].bias -= lr * grads.layers[k].bias;
  }
}

inline MlpModel sgd_step(MlpModel model, const GradientSet& grads, double lr) {
  sgd_step_inplace(model, grads, lr);
  return model;
}

/// Glorot-uniform weights, zero biases, fully determined by `seed`.
inline MlpModel init_model(const std::vector<std::size_t>& layer_dims, Activation activation,
                           std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("init_model needs at least two layer dims");
  for (auto d : layer_dims) {
    if (d == 0) throw ConfigError("layer dims must be positive");
  }
  MlpModel m;
  m.layer_dims = layer_dims;
  m.activation = activation;
  Rng rng(seed);
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    const auto fan_in = layer_dims[k];
    const auto fan_out = layer_dims[k + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    DenseLayer l{Matrix(fan_out, fan_in), Vector::Zero(static_cast<Eigen::Index>(fan_out))};
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = u(rng);
    }
    m.layers.push_back(std::move(l));
  }
  return m;
}

// ---------------------------------------------------------------------------
// DCM1 checkpoints:
//   "DCM1\n"
//   "layer_dims=<d0>,<d1>,... activation=<relu|tanh>\n"
//   per layer: weight (row-major) then bias, IEEE-754 binary64 little-endian.

namespace detail {

inline void put_f64_le(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

inline double get_f64_le(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw Error("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const MlpModel& model) {
  model.validate();
  os << "DCM1\n" << "layer_dims=";
  for (std::size_t k = 0; k < model.layer_dims.size(); ++k) {
    os << (k ? "," : "") << model.layer_dims[k];
  }
  os << " activation=" << to_string(model.activation) << "\n";
  for (const auto& l : model.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) detail::put_f64_le(os, l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) detail::put_f64_le(os, l.bias(i));
  }
}

inline MlpModel read_checkpoint(std::istream& is) {
  std::string magic;
  if (!std::getline(is, magic) || magic != "DCM1") throw Error("not a DCM1 checkpoint");
  std::string header;
  if (!std::getline(is, header)) throw Error("checkpoint header missing");
  std::istringstream hs(header);
  std::string dims_tok, act_tok;
  hs >> dims_tok >> act_tok;
  constexpr std::string_view dims_key = "layer_dims=";
  constexpr std::string_view act_key = "activation=";
  if (dims_tok.rfind(dims_key, 0) != 0 || act_tok.rfind(act_key, 0) != 0) {
    throw Error("malformed checkpoint header: " + header);
  }
  std::vector<std::size_t> dims;
  std::istringstream ds(dims_tok.substr(dims_key.size()));
  for (std::string part; std::getline(ds, part, ',');) dims.push_back(std::stoul(part));
  MlpModel m = init_model(dims, parse_activation(act_tok.substr(act_key.size())), 0);
  for (auto& l : m.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = detail::get_f64_le(is);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = detail::get_f64_le(is);
  }
  m.validate();
  return m;
}

inline void save_checkpoint(const std::string& path, const MlpModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_checkpoint(os, model);
}

inline MlpModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace dcm

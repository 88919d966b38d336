#pragma once

// Feed-forward network with a single scalar output, stored as one flat
// parameter vector.
//
// Parameter layout (layer-major). For each affine layer k with fan_in inputs
// and fan_out outputs:
//   [ W_k (fan_in x fan_out, row-major) | b_k (fan_out) ]
// Row j of W_k holds the weights leaving neuron j of layer k, so the outgoing
// weights of every neuron (and the bias unit) form a contiguous range.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stosca/loss.hpp"
#include "stosca/types.hpp"

namespace stosca {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { Tanh, Logistic, Relu };

/// Only continuously differentiable activations are admitted by MlpModel.
inline bool is_continuously_differentiable(Activation a) { return a != Activation::Relu; }

class Topology {
 public:
  Topology() = default;

  explicit Topology(std::vector<Index> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("topology needs at least an input and an output layer");
    for (Index s : sizes_) {
      if (s <= 0) throw std::invalid_argument("topology layer sizes must be positive");
    }
    if (sizes_.back() != 1) throw std::invalid_argument("only single-output networks are supported");
    offsets_.reserve(sizes_.size());
    Index offset = 0;
    for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
      offsets_.push_back(offset);
      offset += (sizes_[k] + 1) * sizes_[k + 1];
    }
    offsets_.push_back(offset);
  }

  /// Parses "9/10/6/1".
  static Topology parse(std::string_view text) {
    std::vector<Index> sizes;
    std::string token;
    std::istringstream in{std::string(text)};
    while (std::getline(in, token, '/')) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
        sizes.push_back(static_cast<Index>(v));
      } catch (const std::exception&) {
        throw std::invalid_argument("bad topology '" + std::string(text) + "'");
      }
    }
    return Topology(std::move(sizes));
  }

  const std::vector<Index>& layer_sizes() const { return sizes_; }
  Index input_dim() const { return sizes_.front(); }
  Index num_layers() const { return static_cast<Index>(sizes_.size()) - 1; }
  Index fan_in(Index k) const { return sizes_[k]; }
  Index fan_out(Index k) const { return sizes_[k + 1]; }
  Index weight_offset(Index k) const { return offsets_[k]; }
  Index bias_offset(Index k) const { return offsets_[k] + sizes_[k] * sizes_[k + 1]; }
  Index parameter_count() const { return offsets_.empty() ? 0 : offsets_.back(); }

  std::string to_string() const {
    std::string s;
    for (std::size_t k = 0; k < sizes_.size(); ++k) {
      if (k) s += '/';
      s += std::to_string(sizes_[k]);
    }
    return s;
  }

  bool operator==(const Topology& other) const { return sizes_ == other.sizes_; }

 private:
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
};

class MlpModel {
 public:
  MlpModel(Topology topology, Vector weights, OutputHead head = OutputHead::Identity,
           Activation hidden = Activation::Tanh)
      : topology_(std::move(topology)), w_(std::move(weights)), head_(head), hidden_(hidden) {
    if (!is_continuously_differentiable(hidden_)) {
      throw std::invalid_argument("hidden activation must be continuously differentiable");
    }
    detail::require_dim(w_.size(), topology_.parameter_count(), "parameter vector length");
  }

  const Topology& topology() const { return topology_; }
  const Vector& weights() const { return w_; }
  OutputHead head() const { return head_; }
  Activation activation() const { return hidden_; }
  Index parameter_count() const { return w_.size(); }

  void set_weights(Vector w) {
    detail::require_dim(w.size(), topology_.parameter_count(), "parameter vector length");
    w_ = std::move(w);
  }

  MlpModel with_weights(Vector w) const {
    MlpModel copy = *this;
    copy.set_weights(std::move(w));
    return copy;
  }

  Eigen::Map<const RowMatrix> layer_weights(Index k) const {
    return {w_.data() + topology_.weight_offset(k), topology_.fan_in(k), topology_.fan_out(k)};
  }
  Eigen::Map<const Vector> layer_bias(Index k) const {
    return {w_.data() + topology_.bias_offset(k), topology_.fan_out(k)};
  }

 private:
  Topology topology_;
  Vector w_;
  OutputHead head_;
  Activation hidden_;
};

struct LayerParams {
  Matrix weights;  // fan_in x fan_out
  Vector bias;     // fan_out
};

inline std::vector<LayerParams> unpack_layers(const Topology& topology, const Vector& w) {
  detail::require_dim(w.size(), topology.parameter_count(), "parameter vector length");
  std::vector<LayerParams> layers;
  for (Index k = 0; k < topology.num_layers(); ++k) {
    LayerParams p;
    p.weights = Eigen::Map<const RowMatrix>(w.data() + topology.weight_offset(k), topology.fan_in(k),
                                            topology.fan_out(k));
    p.bias = w.segment(topology.bias_offset(k), topology.fan_out(k));
    layers.push_back(std::move(p));
  }
  return layers;
}

inline Vector pack_layers(const Topology& topology, const std::vector<LayerParams>& layers) {
  detail::require_dim(static_cast<Index>(layers.size()), topology.num_layers(), "layer count");
  Vector w(topology.parameter_count());
  for (Index k = 0; k < topology.num_layers(); ++k) {
    const auto& p = layers[static_cast<std::size_t>(k)];
    detail::require_dim(p.weights.rows(), topology.fan_in(k), "layer fan-in");
    detail::require_dim(p.weights.cols(), topology.fan_out(k), "layer fan-out");
    detail::require_dim(p.bias.size(), topology.fan_out(k), "bias length");
    Eigen::Map<RowMatrix>(w.data() + topology.weight_offset(k), topology.fan_in(k), topology.fan_out(k)) =
        p.weights;
    w.segment(topology.bias_offset(k), topology.fan_out(k)) = p.bias;
  }
  return w;
}

/// Contiguous index ranges holding the outgoing weights of each neuron, plus
/// one group per bias unit. Together they partition {0..Q-1}.
inline std::vector<std::vector<Index>> neuron_groups(const Topology& topology) {
  std::vector<std::vector<Index>> groups;
  for (Index k = 0; k < topology.num_layers(); ++k) {
    const Index out = topology.fan_out(k);
    for (Index j = 0; j <= topology.fan_in(k); ++j) {
      const Index start = (j < topology.fan_in(k)) ? topology.weight_offset(k) + j * out : topology.bias_offset(k);
      std::vector<Index> g(static_cast<std::size_t>(out));
      for (Index m = 0; m < out; ++m) g[static_cast<std::size_t>(m)] = start + m;
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

/// Normalized (Glorot) initialization: weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
inline Vector glorot_init(const Topology& topology, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector w = Vector::Zero(topology.parameter_count());
  for (Index k = 0; k < topology.num_layers(); ++k) {
    const double bound = std::sqrt(6.0 / static_cast<double>(topology.fan_in(k) + topology.fan_out(k)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Index n = topology.fan_in(k) * topology.fan_out(k);
    for (Index i = 0; i < n; ++i) w(topology.weight_offset(k) + i) = dist(rng);
  }
  return w;
}

struct MiniBatch {
  std::vector<Index> indices;  // dataset rows the batch was drawn from
  Matrix inputs;               // L x d
  Vector targets;              // L

  Index size() const { return inputs.rows(); }
};

inline MiniBatch make_batch(const Matrix& inputs, const Vector& targets, std::vector<Index> indices) {
  detail::require_dim(targets.size(), inputs.rows(), "target count");
  if (indices.empty()) throw std::invalid_argument("mini-batch must contain at least one sample");
  MiniBatch batch;
  batch.inputs.resize(static_cast<Index>(indices.size()), inputs.cols());
  batch.targets.resize(static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index row = indices[i];
    if (row < 0 || row >= inputs.rows()) throw std::out_of_range("mini-batch index out of range");
    batch.inputs.row(static_cast<Index>(i)) = inputs.row(row);
    batch.targets(static_cast<Index>(i)) = targets(row);
  }
  batch.indices = std::move(indices);
  return batch;
}

/// Batch holding every row, in order.
inline MiniBatch full_batch(const Matrix& inputs, const Vector& targets) {
  std::vector<Index> idx(static_cast<std::size_t>(inputs.rows()));
  for (Index i = 0; i < inputs.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return make_batch(inputs, targets, std::move(idx));
}

struct ForwardResult {
  double output;      // f(w; x)
  double pre_squash;  // f^L(w; x), equal to output for the identity head
};

enum class JacobianTarget { FullOutput, PreSquash };

namespace detail {

inline double apply_activation(Activation a, double z) {
  return a == Activation::Tanh ? std::tanh(z) : sigmoid(z);
}

/// Derivative expressed through the activation's output value.
inline double activation_slope(Activation a, double out) {
  return a == Activation::Tanh ? 1.0 - out * out : out * (1.0 - out);
}

/// Per-thread buffers for forward and backward sweeps.
struct Workspace {
  std::vector<Vector> act;
  Vector delta;
  Vector next_delta;

  explicit Workspace(const Topology& t) {
    for (Index s : t.layer_sizes()) act.emplace_back(s);
  }
};

/// Fills ws.act and returns the pre-squash output.
inline double forward_pass(const MlpModel& model, const Eigen::Ref<const Vector>& x, Workspace& ws) {
  const Topology& t = model.topology();
  const Index layers = t.num_layers();
  ws.act[0] = x;
  for (Index k = 0; k < layers; ++k) {
    Vector& out = ws.act[static_cast<std::size_t>(k + 1)];
    out.noalias() = model.layer_weights(k).transpose() * ws.act[static_cast<std::size_t>(k)];
    out += model.layer_bias(k);
    if (k + 1 < layers) {
      for (Index j = 0; j < out.size(); ++j) out(j) = apply_activation(model.activation(), out(j));
    }
  }
  return ws.act[static_cast<std::size_t>(layers)](0);
}

/// Writes d(pre-squash output)/dw into grad (length Q). Requires a prior forward_pass.
inline void backward_pass(const MlpModel& model, Workspace& ws, double* grad) {
  const Topology& t = model.topology();
  ws.delta.resize(1);
  ws.delta(0) = 1.0;
  for (Index k = t.num_layers() - 1; k >= 0; --k) {
    const Vector& a = ws.act[static_cast<std::size_t>(k)];
    Eigen::Map<RowMatrix>(grad + t.weight_offset(k), t.fan_in(k), t.fan_out(k)).noalias() =
        a * ws.delta.transpose();
    Eigen::Map<Vector>(grad + t.bias_offset(k), t.fan_out(k)) = ws.delta;
    if (k > 0) {
      ws.next_delta.noalias() = model.layer_weights(k) * ws.delta;
      for (Index j = 0; j < ws.next_delta.size(); ++j) {
        ws.next_delta(j) *= activation_slope(model.activation(), a(j));
      }
      ws.delta.swap(ws.next_delta);
    }
  }
}

inline void check_batch(const MlpModel& model, const MiniBatch& batch) {
  detail::require_dim(batch.inputs.cols(), model.topology().input_dim(), "input dimension");
  detail::require_dim(batch.targets.size(), batch.inputs.rows(), "target count");
  if (batch.size() < 1) throw std::invalid_argument("empty mini-batch");
}

inline Index sample_id(const MiniBatch& batch, Index row) {
  return batch.indices.size() == static_cast<std::size_t>(batch.size()) ? batch.indices[static_cast<std::size_t>(row)]
                                                                        : row;
}

}  // namespace detail

inline ForwardResult forward(const MlpModel& model, const Eigen::Ref<const Vector>& x) {
  detail::require_dim(x.size(), model.topology().input_dim(), "input dimension");
  detail::Workspace ws(model.topology());
  const double z = detail::forward_pass(model, x, ws);
  return {model.head() == OutputHead::Sigmoid ? sigmoid(z) : z, z};
}

/// Network outputs f(w; x_i) for every row of inputs.
inline Vector predict(const MlpModel& model, const Matrix& inputs, bool pre_squash = false) {
  detail::require_dim(inputs.cols(), model.topology().input_dim(), "input dimension");
  detail::Workspace ws(model.topology());
  Vector out(inputs.rows());
  for (Index i = 0; i < inputs.rows(); ++i) {
    const double z = detail::forward_pass(model, inputs.row(i).transpose(), ws);
    out(i) = (model.head() == OutputHead::Sigmoid && !pre_squash) ? sigmoid(z) : z;
  }
  return out;
}

/// One back-propagation sweep per sample; row i holds grad_w f(w; x_i) or grad_w f^L(w; x_i).
inline Matrix weight_jacobian(const MlpModel& model, const MiniBatch& batch,
                              JacobianTarget wrt = JacobianTarget::FullOutput, Vector* outputs = nullptr) {
  detail::check_batch(model, batch);
  const Index q = model.parameter_count();
  Matrix jac(batch.size(), q);
  Vector row(q);
  detail::Workspace ws(model.topology());
  if (outputs) outputs->resize(batch.size());
  for (Index i = 0; i < batch.size(); ++i) {
    const double z = detail::forward_pass(model, batch.inputs.row(i).transpose(), ws);
    detail::backward_pass(model, ws, row.data());
    double value = z;
    if (model.head() == OutputHead::Sigmoid) {
      value = sigmoid(z);
      if (wrt == JacobianTarget::FullOutput) row *= value * (1.0 - value);
    }
    if (outputs) (*outputs)(i) = (wrt == JacobianTarget::PreSquash) ? z : value;
    jac.row(i) = row.transpose();
  }
  return jac;
}

namespace detail {

inline void check_loss_head(const MlpModel& model, LossKind loss) {
  if (model.head() != head_for(loss)) {
    throw std::invalid_argument(loss == LossKind::CrossEntropy ? "cross-entropy loss requires a sigmoid output head"
                                                               : "squared loss requires an identity output head");
  }
}

}  // namespace detail

/// (1/L) sum_i grad_w l(y_i, f(w; x_i)).
inline Vector batch_gradient(const MlpModel& model, const MiniBatch& batch, LossKind loss) {
  detail::check_batch(model, batch);
  detail::check_loss_head(model, loss);
  const Index q = model.parameter_count();
  Vector grad = Vector::Zero(q);
  Vector row(q);
  detail::Workspace ws(model.topology());
  for (Index i = 0; i < batch.size(); ++i) {
    const double z = detail::forward_pass(model, batch.inputs.row(i).transpose(), ws);
    const double y = batch.targets(i);
    // For the sigmoid head d ce(y, sigmoid(z)) / dz = sigmoid(z) - y.
    const double scale = (loss == LossKind::Squared) ? -2.0 * (y - z) : sigmoid(z) - y;
    if (!std::isfinite(z) || !std::isfinite(scale)) {
      throw NumericalError("non-finite network output at sample " + std::to_string(detail::sample_id(batch, i)));
    }
    detail::backward_pass(model, ws, row.data());
    grad.noalias() += scale * row;
  }
  grad /= static_cast<double>(batch.size());
  if (!grad.allFinite()) throw NumericalError("non-finite gradient in mini-batch");
  return grad;
}

}  // namespace stosca

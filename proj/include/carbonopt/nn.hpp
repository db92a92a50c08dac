#pragma once

// Small feed-forward networks with exact reverse-mode gradients, Adam and
// soft target updates. Everything is double precision. Batches are stored
// column-major: one column per sample.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace carbonopt::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown whenever a tensor's dimensions disagree with what an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& what, std::size_t expected, std::size_t actual);

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

enum class Activation { identity, relu, tanh, mish };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/// Activation values and their derivatives with respect to the pre-activation.
Matrix activate(Activation a, const Matrix& z);
Matrix activate_derivative(Activation a, const Matrix& z);

/// Per-layer intermediates recorded by a batched forward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;          // input to layer i (inputs[0] is the network input)
  std::vector<Matrix> pre_activations; // W_i x + b_i
};

/// Multi-layer perceptron. All weights and biases live in one flat buffer so
/// optimizers and target updates operate on a single contiguous vector.
///
/// Layer i maps layer_sizes[i] -> layer_sizes[i+1]; its weight matrix is
/// (layer_sizes[i+1] x layer_sizes[i]), column-major within the buffer,
/// followed by the bias.
class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network.
  Mlp(std::vector<int> layer_sizes, Activation hidden, Activation output);

  /// Glorot-uniform weights, zero biases.
  Mlp(std::vector<int> layer_sizes, Activation hidden, Activation output, std::mt19937_64& rng);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t num_layers() const { return layer_sizes_.empty() ? 0 : layer_sizes_.size() - 1; }
  int input_size() const { return layer_sizes_.front(); }
  int output_size() const { return layer_sizes_.back(); }
  std::size_t num_parameters() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::Map<Matrix> weight(std::size_t layer);
  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<Vector> bias(std::size_t layer);
  Eigen::Map<const Vector> bias(std::size_t layer) const;

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }

  /// Same architecture (sizes and activations).
  bool same_architecture(const Mlp& other) const;

  Vector forward(const Vector& input) const;
  Matrix forward_batch(const Matrix& inputs, ForwardCache* cache = nullptr) const;

  /// Gradients of a scalar loss. `parameters` follows the flat buffer layout
  /// and is summed over the batch.
  struct Gradients {
    Vector parameters;
    Matrix inputs;
  };

  /// Reverse-mode pass through the cached forward computation.
  /// `output_grad` is dLoss/dOutput with one column per sample.
  Gradients backward(const ForwardCache& cache, const Matrix& output_grad) const;

  /// Single-sample convenience wrapper.
  Gradients backward(const Vector& input, const Vector& output_grad) const;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const;
  void layout();

  std::vector<int> layer_sizes_;
  Activation hidden_ = Activation::relu;
  Activation output_ = Activation::identity;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t num_parameters, double learning_rate, double beta1 = 0.9,
            double beta2 = 0.999, double epsilon = 1e-8);

  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam step, in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);
void adam_step(Mlp& net, const Vector& grads, AdamState& state);

/// target <- tau * source + (1 - tau) * target
void soft_update(Mlp& target, const Mlp& source, double tau);

}  // namespace carbonopt::nn

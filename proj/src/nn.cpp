#include "carbonopt/nn.hpp"

#include <cmath>

namespace carbonopt::nn {

ShapeError::ShapeError(const std::string& what, std::size_t expected, std::size_t actual)
    : std::invalid_argument(what + ": expected dimension " + std::to_string(expected) +
                            ", got " + std::to_string(actual)),
      expected_(expected),
      actual_(actual) {}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "mish") return Activation::mish;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::mish: return "mish";
  }
  return "identity";
}

namespace {

// mish(x) = x * tanh(softplus(x)), with tanh(softplus(x)) = n / (n + 2) where
// n = e^x (e^x + 2). One exponential per element.
struct MishTerms {
  double tanh_softplus;
  double sigmoid;
};

MishTerms mish_terms(double x) {
  if (x > 20.0) return {1.0, 1.0};
  const double e = std::exp(x);
  const double n = e * (e + 2.0);
  return {n / (n + 2.0), e / (1.0 + e)};
}

}  // namespace

Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::mish:
      return z.unaryExpr([](double x) { return x * mish_terms(x).tanh_softplus; });
  }
  return z;
}

Matrix activate_derivative(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::relu:
      return z.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::tanh:
      return z.unaryExpr([](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
    case Activation::mish:
      return z.unaryExpr([](double x) {
        const MishTerms m = mish_terms(x);
        const double t = m.tanh_softplus;
        return t + x * (1.0 - t * t) * m.sigmoid;
      });
  }
  return Matrix::Ones(z.rows(), z.cols());
}

Mlp::Mlp(std::vector<int> layer_sizes, Activation hidden, Activation output)
    : layer_sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
  if (layer_sizes_.size() < 2) {
    throw std::invalid_argument("an MLP needs at least an input and an output layer");
  }
  for (int s : layer_sizes_) {
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  }
  layout();
}

Mlp::Mlp(std::vector<int> layer_sizes, Activation hidden, Activation output, std::mt19937_64& rng)
    : Mlp(std::move(layer_sizes), hidden, output) {
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double fan_in = layer_sizes_[l];
    const double fan_out = layer_sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
  }
}

void Mlp::layout() {
  offsets_.clear();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<std::size_t>(layer_sizes_[l + 1]) * (layer_sizes_[l] + 1);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

std::size_t Mlp::bias_offset(std::size_t layer) const {
  return offsets_[layer] + static_cast<std::size_t>(layer_sizes_[layer + 1]) * layer_sizes_[layer];
}

Eigen::Map<Matrix> Mlp::weight(std::size_t layer) {
  return {params_.data() + weight_offset(layer), layer_sizes_[layer + 1], layer_sizes_[layer]};
}

Eigen::Map<const Matrix> Mlp::weight(std::size_t layer) const {
  return {params_.data() + weight_offset(layer), layer_sizes_[layer + 1], layer_sizes_[layer]};
}

Eigen::Map<Vector> Mlp::bias(std::size_t layer) {
  return {params_.data() + bias_offset(layer), layer_sizes_[layer + 1]};
}

Eigen::Map<const Vector> Mlp::bias(std::size_t layer) const {
  return {params_.data() + bias_offset(layer), layer_sizes_[layer + 1]};
}

bool Mlp::same_architecture(const Mlp& other) const {
  return layer_sizes_ == other.layer_sizes_ && hidden_ == other.hidden_ && output_ == other.output_;
}

Vector Mlp::forward(const Vector& input) const {
  Matrix out = forward_batch(Matrix(input), nullptr);
  return out.col(0);
}

Matrix Mlp::forward_batch(const Matrix& inputs, ForwardCache* cache) const {
  if (inputs.rows() != input_size()) {
    throw ShapeError("Mlp::forward input", static_cast<std::size_t>(input_size()),
                     static_cast<std::size_t>(inputs.rows()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Matrix x = inputs;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    Matrix z = weight(l) * x;
    z.colwise() += bias(l);
    const Activation act = (l + 1 == num_layers()) ? output_ : hidden_;
    Matrix y = activate(act, z);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_activations.push_back(std::move(z));
    }
    x = std::move(y);
  }
  return x;
}

Mlp::Gradients Mlp::backward(const ForwardCache& cache, const Matrix& output_grad) const {
  if (cache.inputs.size() != num_layers()) {
    throw ShapeError("Mlp::backward cache layers", num_layers(), cache.inputs.size());
  }
  if (output_grad.rows() != output_size()) {
    throw ShapeError("Mlp::backward output gradient", static_cast<std::size_t>(output_size()),
                     static_cast<std::size_t>(output_grad.rows()));
  }
  if (output_grad.cols() != cache.inputs.front().cols()) {
    throw ShapeError("Mlp::backward batch size", static_cast<std::size_t>(cache.inputs.front().cols()),
                     static_cast<std::size_t>(output_grad.cols()));
  }
  Gradients grads;
  grads.parameters = Vector::Zero(params_.size());
  Matrix upstream = output_grad;
  for (std::size_t l = num_layers(); l-- > 0;) {
    const Activation act = (l + 1 == num_layers()) ? output_ : hidden_;
    Matrix dz = upstream.cwiseProduct(activate_derivative(act, cache.pre_activations[l]));
    Eigen::Map<Matrix> dw(grads.parameters.data() + weight_offset(l), layer_sizes_[l + 1],
                          layer_sizes_[l]);
    Eigen::Map<Vector> db(grads.parameters.data() + bias_offset(l), layer_sizes_[l + 1]);
    dw.noalias() = dz * cache.inputs[l].transpose();
    db = dz.rowwise().sum();
    upstream = weight(l).transpose() * dz;
  }
  grads.inputs = std::move(upstream);
  return grads;
}

Mlp::Gradients Mlp::backward(const Vector& input, const Vector& output_grad) const {
  ForwardCache cache;
  forward_batch(Matrix(input), &cache);
  return backward(cache, Matrix(output_grad));
}

AdamState::AdamState(std::size_t num_parameters, double lr, double b1, double b2, double eps)
    : first_moment(Vector::Zero(static_cast<Eigen::Index>(num_parameters))),
      second_moment(Vector::Zero(static_cast<Eigen::Index>(num_parameters))),
      learning_rate(lr),
      beta1(b1),
      beta2(b2),
      epsilon(eps) {
  if (!(b1 > 0.0 && b1 < 1.0) || !(b2 > 0.0 && b2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  const auto n = static_cast<std::size_t>(state.first_moment.size());
  if (params.size() != n) throw ShapeError("adam_step parameters", n, params.size());
  if (grads.size() != n) throw ShapeError("adam_step gradients", n, grads.size());

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    double& m = state.first_moment[static_cast<Eigen::Index>(i)];
    double& v = state.second_moment[static_cast<Eigen::Index>(i)];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

void adam_step(Mlp& net, const Vector& grads, AdamState& state) {
  auto& p = net.parameters();
  adam_step(std::span<double>(p.data(), static_cast<std::size_t>(p.size())),
            std::span<const double>(grads.data(), static_cast<std::size_t>(grads.size())), state);
}

void soft_update(Mlp& target, const Mlp& source, double tau) {
  if (!target.same_architecture(source)) {
    throw std::invalid_argument("soft_update: target and source architectures differ");
  }
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau must lie in (0, 1]");
  if (tau == 1.0) {
    target.parameters() = source.parameters();
    return;
  }
  target.parameters() = tau * source.parameters() + (1.0 - tau) * target.parameters();
}

}  // namespace carbonopt::nn

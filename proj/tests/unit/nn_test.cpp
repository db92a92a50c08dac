#include "carbonopt/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace carbonopt::nn;

namespace {

// Straight-line evaluation with explicit loops; shares nothing with Mlp::forward.
double ref_activation(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0 ? x : 0;
    case Activation::tanh: return std::tanh(x);
    case Activation::mish: return x * std::tanh(std::log(1.0 + std::exp(x)));
  }
  return x;
}

std::vector<double> reference_forward(const Mlp& net, const std::vector<double>& input) {
  std::vector<double> x = input;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    const Activation act = l + 1 == net.num_layers() ? net.output_activation() : net.hidden_activation();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = b(i);
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = ref_activation(act, s);
    }
    x = std::move(y);
  }
  return x;
}

// Scalar loss L = sum_k c_k * out_k so that dL/dout = c.
double weighted_output(const Mlp& net, const Vector& input, const Vector& weights) {
  return net.forward(input).dot(weights);
}

Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

TEST(MlpForward, ZeroWeightsReturnBias) {
  Mlp net({3, 2}, Activation::relu, Activation::identity);
  net.bias(0) << 0.5, -1.25;
  const Vector out = net.forward(Vector::Constant(3, 7.0));
  EXPECT_DOUBLE_EQ(out(0), 0.5);
  EXPECT_DOUBLE_EQ(out(1), -1.25);
}

TEST(MlpForward, SingleAffineLayer) {
  Mlp net({1, 1}, Activation::relu, Activation::identity);
  net.weight(0)(0, 0) = 2.0;
  net.bias(0)(0) = 1.0;
  EXPECT_DOUBLE_EQ(net.forward(Vector::Constant(1, 3.0))(0), 7.0);
}

TEST(MlpForward, MatchesStraightLineReevaluation) {
  std::mt19937_64 rng(11);
  for (Activation hidden : {Activation::relu, Activation::tanh, Activation::mish}) {
    Mlp net({5, 7, 6, 3}, hidden, Activation::tanh, rng);
    net.parameters() += random_vector(static_cast<Eigen::Index>(net.num_parameters()), rng, 0.1);
    const Vector x = random_vector(5, rng);
    const Vector out = net.forward(x);
    const auto ref = reference_forward(net, std::vector<double>(x.data(), x.data() + x.size()));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(out(i), ref[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(MlpForward, ShapeMismatchNamesDimensions) {
  Mlp net({4, 2}, Activation::relu, Activation::identity);
  try {
    net.forward(Vector::Zero(3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.expected(), 4u);
    EXPECT_EQ(e.actual(), 3u);
    EXPECT_NE(std::string(e.what()).find("expected dimension 4"), std::string::npos);
  }
}

TEST(MlpBackward, ZeroOutputGradGivesZeroGradients) {
  std::mt19937_64 rng(3);
  Mlp net({4, 8, 2}, Activation::mish, Activation::identity, rng);
  const auto g = net.backward(random_vector(4, rng), Vector::Zero(2));
  EXPECT_EQ(g.parameters.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.inputs.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpBackward, TanhAtOrigin) {
  Mlp net({1, 1}, Activation::relu, Activation::tanh);
  net.weight(0)(0, 0) = 1.0;
  const auto g = net.backward(Vector::Zero(1), Vector::Ones(1));
  EXPECT_DOUBLE_EQ(g.parameters(0), 0.0);  // d/dw = x * tanh'(0) = 0
  EXPECT_DOUBLE_EQ(g.inputs(0, 0), 1.0);   // d/dx = w * tanh'(0) = 1
}

TEST(MlpBackward, ShapeMismatch) {
  Mlp net({2, 3}, Activation::relu, Activation::identity);
  EXPECT_THROW(net.backward(Vector::Zero(2), Vector::Zero(2)), ShapeError);
}

// 100 random networks across activations; central differences with h = 1e-5.
TEST(MlpBackward, MatchesCentralFiniteDifferences) {
  std::mt19937_64 rng(2024);
  const Activation hiddens[] = {Activation::relu, Activation::tanh, Activation::mish};
  const Activation outputs[] = {Activation::identity, Activation::tanh};
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Activation hidden = hiddens[trial % 3];
    const Activation output = outputs[(trial / 3) % 2];
    Mlp net({4, 6, 5, 3}, hidden, output, rng);
    net.parameters() += random_vector(static_cast<Eigen::Index>(net.num_parameters()), rng, 0.1);
    const Vector x = random_vector(4, rng);
    const Vector c = random_vector(3, rng);
    const auto g = net.backward(x, c);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(net.num_parameters()); ++i) {
      Mlp plus = net, minus = net;
      plus.parameters()(i) += h;
      minus.parameters()(i) -= h;
      const double fd = (weighted_output(plus, x, c) - weighted_output(minus, x, c)) / (2 * h);
      worst = std::max(worst, rel_error(g.parameters(i), fd));
    }
    for (Eigen::Index i = 0; i < 4; ++i) {
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd = (weighted_output(net, xp, c) - weighted_output(net, xm, c)) / (2 * h);
      worst = std::max(worst, rel_error(g.inputs(i, 0), fd));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(MlpBackward, DirectionalDerivativeConsistency) {
  std::mt19937_64 rng(77);
  Mlp net({5, 16, 16, 1}, Activation::mish, Activation::identity, rng);
  const Vector x = random_vector(5, rng);
  Vector v = random_vector(5, rng);
  v.normalize();
  const auto g = net.backward(x, Vector::Ones(1));
  const double analytic = g.inputs.col(0).dot(v);
  const double h = 1e-5;
  const double fd = (net.forward(Vector(x + h * v))(0) - net.forward(Vector(x - h * v))(0)) / (2 * h);
  EXPECT_NEAR(analytic, fd, 1e-6);
}

TEST(MlpBackward, BatchGradientIsSumOfSamples) {
  std::mt19937_64 rng(5);
  Mlp net({3, 4, 2}, Activation::tanh, Activation::identity, rng);
  Matrix xs(3, 3);
  for (int j = 0; j < 3; ++j) xs.col(j) = random_vector(3, rng);
  Matrix gs = Matrix::Ones(2, 3);
  ForwardCache cache;
  net.forward_batch(xs, &cache);
  const auto batched = net.backward(cache, gs);
  Vector summed = Vector::Zero(static_cast<Eigen::Index>(net.num_parameters()));
  for (int j = 0; j < 3; ++j) summed += net.backward(Vector(xs.col(j)), Vector::Ones(2)).parameters;
  EXPECT_LT((batched.parameters - summed).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MlpInit, SeedDeterministicAndWithinGlorotBound) {
  std::mt19937_64 a(99), b(99);
  Mlp n1({9, 128, 2}, Activation::mish, Activation::identity, a);
  Mlp n2({9, 128, 2}, Activation::mish, Activation::identity, b);
  EXPECT_EQ(n1.parameters(), n2.parameters());
  const double limit = std::sqrt(6.0 / (9 + 128));
  EXPECT_LE(n1.weight(0).cwiseAbs().maxCoeff(), limit);
  EXPECT_EQ(n1.bias(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{3.0, -0.2, 1e-3};
  AdamState s(3, 0.01);
  adam_step(p, g, s);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-8);
  EXPECT_NEAR(p[2], 0.5 - 0.01, 1e-7);
  EXPECT_EQ(s.step_count, 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{0.0, 0.0};
  AdamState s(2, 0.1);
  adam_step(p, g, s);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 2.0);
}

TEST(Adam, TwoStepsMatchScalarRecurrence) {
  const double lr = 0.05, b1 = 0.8, b2 = 0.95, eps = 1e-6, g = 0.7;
  std::vector<double> p{0.3};
  AdamState s(1, lr, b1, b2, eps);
  adam_step(p, std::vector<double>{g}, s);
  adam_step(p, std::vector<double>{g}, s);

  double x = 0.3, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  EXPECT_NEAR(p[0], x, 1e-12);
}

TEST(Adam, RejectsInvalidHyperparametersAndShapes) {
  EXPECT_THROW(AdamState(2, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(AdamState(2, 0.1, 0.9, 0.999, 0.0), std::invalid_argument);
  AdamState s(2, 0.1);
  std::vector<double> p{1.0};
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, s), ShapeError);
}

TEST(SoftUpdate, TauOneCopiesSource) {
  std::mt19937_64 rng(1);
  Mlp target({2, 3, 1}, Activation::relu, Activation::identity, rng);
  Mlp source({2, 3, 1}, Activation::relu, Activation::identity, rng);
  soft_update(target, source, 1.0);
  EXPECT_EQ(target.parameters(), source.parameters());
}

TEST(SoftUpdate, HalfwayAverage) {
  Mlp target({1, 1}, Activation::relu, Activation::identity);
  Mlp source({1, 1}, Activation::relu, Activation::identity);
  source.parameters().setConstant(2.0);
  soft_update(target, source, 0.5);
  EXPECT_DOUBLE_EQ(target.parameters()(0), 1.0);
  EXPECT_DOUBLE_EQ(target.parameters()(1), 1.0);
}

TEST(SoftUpdate, RepeatedUpdatesFollowGeometricSeries) {
  Mlp target({1, 1}, Activation::relu, Activation::identity);
  Mlp source({1, 1}, Activation::relu, Activation::identity);
  source.parameters().setConstant(3.0);
  for (int k = 1; k <= 50; ++k) {
    soft_update(target, source, 0.1);
    // target_k = source * (1 - 0.9^k)
    EXPECT_NEAR(target.parameters()(0), 3.0 * (1.0 - std::pow(0.9, k)), 1e-12);
  }
}

TEST(SoftUpdate, RejectsMismatchedArchitectureAndBadTau) {
  Mlp a({2, 1}, Activation::relu, Activation::identity);
  Mlp b({3, 1}, Activation::relu, Activation::identity);
  EXPECT_THROW(soft_update(a, b, 0.5), std::invalid_argument);
  Mlp c({2, 1}, Activation::relu, Activation::identity);
  EXPECT_THROW(soft_update(a, c, 0.0), std::invalid_argument);
  EXPECT_THROW(soft_update(a, c, 1.5), std::invalid_argument);
}

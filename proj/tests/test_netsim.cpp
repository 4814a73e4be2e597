#include <doctest.h>

#include <cmath>
#include <random>

#include "mlorq/errors.hpp"
#include "mlorq/netsim.hpp"
#include "test_util.hpp"

using namespace mlorq;
using testutil::random_matrix;

TEST_CASE("identity chain passes inputs through unchanged") {
  Model model;
  model.name = "id";
  for (int l = 0; l < 3; ++l) {
    Layer layer;
    layer.name = "l" + std::to_string(l);
    layer.weight = Matrix::identity(4);
    layer.bias.assign(4, 0.0);
    layer.activation = Activation::None;
    model.layers.push_back(std::move(layer));
  }
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(rng, 5, 4);
  const ForwardTrace trace = forward_trace(model, x);
  REQUIRE(trace.inputs.size() == 3);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(trace.inputs[l].data()[i] == x.data()[i]);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(trace.output.data()[i] == x.data()[i]);
}

TEST_CASE("activation definitions") {
  CHECK(apply_activation(Activation::Relu, -1.0) == 0.0);
  CHECK(apply_activation(Activation::Relu, 2.5) == 2.5);
  CHECK(apply_activation(Activation::Gelu, 0.0) == 0.0);
  // gelu(1) under the tanh approximation
  CHECK(apply_activation(Activation::Gelu, 1.0) == doctest::Approx(0.841192).epsilon(1e-5));
  CHECK(apply_activation(Activation::None, -3.25) == -3.25);
}

TEST_CASE("activation derivatives match finite differences away from kinks") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  const double h = 1e-6;
  for (int i = 0; i < 200; ++i) {
    double x = dist(rng);
    if (std::abs(x) < 1e-3) x += 0.5;  // keep relu away from its kink
    for (Activation a : {Activation::None, Activation::Relu, Activation::Gelu}) {
      const double fd =
          (apply_activation(a, x + h) - apply_activation(a, x - h)) / (2.0 * h);
      CHECK(activation_derivative(a, x) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("forward is deterministic bit for bit") {
  std::mt19937_64 rng(17);
  const Model model = testutil::random_model(rng, {6, 5, 4}, Activation::Gelu);
  const Matrix x = random_matrix(rng, 7, 6);
  const ForwardTrace t1 = forward_trace(model, x);
  const ForwardTrace t2 = forward_trace(model, x);
  for (std::size_t i = 0; i < t1.output.size(); ++i)
    CHECK(t1.output.data()[i] == t2.output.data()[i]);
}

TEST_CASE("replacing a layer with its own weight reproduces the trace output") {
  std::mt19937_64 rng(23);
  const Model model = testutil::random_model(rng, {5, 6, 4, 3}, Activation::Relu);
  const Matrix x = random_matrix(rng, 9, 5);
  const ForwardTrace trace = forward_trace(model, x);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Matrix out = output_with_layer_replaced(model, trace, l, model.layers[l].weight);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out.data()[i] == trace.output.data()[i]);
  }
}

TEST_CASE("single-layer model with zero replacement annihilates the output") {
  Model model;
  Layer layer;
  layer.name = "only";
  std::mt19937_64 rng(5);
  layer.weight = random_matrix(rng, 3, 4);
  layer.bias.assign(3, 0.0);
  layer.activation = Activation::None;
  model.layers.push_back(std::move(layer));

  const Matrix x = random_matrix(rng, 6, 4);
  const ForwardTrace trace = forward_trace(model, x);
  const Matrix out = output_with_layer_replaced(model, trace, 0, Matrix(3, 4, 0.0));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("replaced output equals a from-scratch forward with the perturbed weight") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Model model = testutil::random_model(rng, {4, 5, 3}, Activation::Gelu);
    const Matrix x = random_matrix(rng, 6, 4);
    const ForwardTrace trace = forward_trace(model, x);

    const Matrix perturbed = random_matrix(rng, 5, 4);
    const Matrix replaced = output_with_layer_replaced(model, trace, 0, perturbed);

    Model scratch = model;
    scratch.layers[0].weight = perturbed;
    const ForwardTrace full = forward_trace(scratch, x);
    for (std::size_t i = 0; i < replaced.size(); ++i)
      CHECK(replaced.data()[i] == doctest::Approx(full.output.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("out-of-range layer index and shape mismatch raise") {
  std::mt19937_64 rng(37);
  const Model model = testutil::random_model(rng, {4, 3});
  const Matrix x = random_matrix(rng, 2, 4);
  const ForwardTrace trace = forward_trace(model, x);
  CHECK_THROWS_AS(output_with_layer_replaced(model, trace, 5, Matrix(3, 4)), Error);
  CHECK_THROWS_AS(output_with_layer_replaced(model, trace, 0, Matrix(2, 2)), Error);
  CHECK_THROWS_AS(forward_trace(model, Matrix(2, 7)), Error);
}

TEST_CASE("single linear layer: C is sqrt(sum x_j^2), constant across rows") {
  std::mt19937_64 rng(41);
  Model model;
  Layer layer;
  layer.name = "lin";
  layer.weight = random_matrix(rng, 3, 4);
  layer.bias.assign(3, 0.0);
  layer.activation = Activation::None;
  model.layers.push_back(std::move(layer));

  const Matrix calib = random_matrix(rng, 8, 4);
  const auto hessians = estimate_hessian_diag(model, calib);
  REQUIRE(hessians.size() == 1);
  const Matrix& c = hessians[0].C;
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = 0.0;
    for (std::size_t n = 0; n < 8; ++n) expect += calib(n, j) * calib(n, j);
    expect = std::sqrt(expect);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(c(i, j) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("Gauss-Newton diagonal matches finite differences on a 2-layer 3x3 chain") {
  std::mt19937_64 rng(43);
  const Model model = testutil::random_model(rng, {3, 3, 3}, Activation::Gelu, 0.8);
  const Matrix calib = random_matrix(rng, 4, 3);
  const auto hessians = estimate_hessian_diag(model, calib);
  const ForwardTrace base = forward_trace(model, calib);

  const double h = 1e-3;
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        auto half_sq_diff = [&](double delta) {
          Model pert = model;
          pert.layers[l].weight(i, j) += delta;
          const ForwardTrace t = forward_trace(pert, calib);
          return 0.5 * frobenius_sq_diff(t.output, base.output);
        };
        // g(0) = 0, so the central second difference is (g(h) + g(-h)) / h^2.
        const double fd_diag = (half_sq_diff(h) + half_sq_diff(-h)) / (h * h);
        const double analytic = hessians[l].C(i, j) * hessians[l].C(i, j);
        CHECK(analytic == doctest::Approx(fd_diag).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("all-zero calibration gives epsilon rows") {
  std::mt19937_64 rng(47);
  const Model model = testutil::random_model(rng, {3, 2}, Activation::None);
  const Matrix calib(4, 3, 0.0);
  const auto hessians = estimate_hessian_diag(model, calib);
  for (std::size_t i = 0; i < hessians[0].C.size(); ++i)
    CHECK(hessians[0].C.data()[i] == kHessianZeroRowEpsilon);
  for (double q : hessians[0].Q) CHECK(q == doctest::Approx(3 * kHessianZeroRowEpsilon));
}

TEST_CASE("empty calibration raises EmptyCalibration") {
  std::mt19937_64 rng(53);
  const Model model = testutil::random_model(rng, {3, 2});
  try {
    estimate_hessian_diag(model, Matrix(0, 3));
    FAIL("expected EmptyCalibration");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyCalibration);
  }
}

TEST_CASE("Q equals row sums and the weighted-norm bound holds on random pairs") {
  std::mt19937_64 rng(59);
  std::uniform_real_distribution<double> unif(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng() % 6, cols = 1 + rng() % 6;
    Matrix c(rows, cols);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = unif(rng);
    const HessianWeights hw = make_hessian_weights(c);
    for (std::size_t i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) sum += hw.C(i, j);
      CHECK(hw.Q[i] == doctest::Approx(sum).epsilon(1e-12));
    }
    const Matrix e = random_matrix(rng, rows, cols);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        lhs += hw.C(i, j) * hw.C(i, j) * e(i, j) * e(i, j);
        rhs += hw.Q[i] * hw.Q[i] * e(i, j) * e(i, j);
      }
    CHECK(lhs <= rhs);
  }
}

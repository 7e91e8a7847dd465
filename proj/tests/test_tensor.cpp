#include <cmath>

#include "core/nn_ops.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace actfno;

TEST_CASE("quadratic loss gradient is 2x") {
  Tensor x = Tensor::from_data({4}, {1.0, -2.0, 3.0, 0.5});
  x.set_requires_grad(true);
  {
    Graph g;
    Tensor loss = sum(mul(x, x));
    g.backward(loss);
  }
  const auto* grad = x.grad();
  REQUIRE(grad != nullptr);
  for (int i = 0; i < 4; ++i) CHECK(std::fabs((*grad)[size_t(i)] - 2.0 * x.data()[i]) < 1e-14);
}

TEST_CASE("gradient accumulation: combined loss equals sum of parts") {
  Rng rng(7);
  std::vector<double> vals(16);
  for (auto& v : vals) v = rng.normal();
  Tensor x = Tensor::from_data({16}, vals);
  x.set_requires_grad(true);

  // f + g in one trace
  {
    Graph g;
    Tensor loss = add(sum(mul(x, x)), scale(sum(x), 3.0));
    g.backward(loss);
  }
  std::vector<double> combined = *x.grad();

  // two separate traces accumulating into the same buffer
  x.zero_grad();
  {
    Graph g;
    g.backward(sum(mul(x, x)));
  }
  {
    Graph g;
    g.backward(scale(sum(x), 3.0));
  }
  const auto& split = *x.grad();
  for (size_t i = 0; i < 16; ++i) CHECK(std::fabs(combined[i] - split[i]) < 1e-12);
}

TEST_CASE("backward misuse raises") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Graph g;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(g.backward(y), ValidationError);  // non-scalar loss
  Tensor loss = sum(y);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), ValidationError);  // second backward
}

TEST_CASE("fan-out accumulates additively") {
  Tensor x = Tensor::from_data({1}, {3.0});
  x.set_requires_grad(true);
  {
    Graph g;
    Tensor y = mul(x, x);        // x^2
    Tensor z = add(y, mul(x, y));  // x^2 + x^3
    g.backward(sum(z));
  }
  // d/dx (x^2 + x^3) = 2x + 3x^2 = 6 + 27
  CHECK(std::fabs((*x.grad())[0] - 33.0) < 1e-12);
}

TEST_CASE("activation values") {
  Tensor x = Tensor::from_data({3}, {0.0, 1.0, 20.0});
  Tensor gelu = activation(x, Activation::Gelu);
  Tensor tanh = activation(x, Activation::Tanh);
  CHECK(gelu.data()[0] == 0.0);
  // 1 * Phi(1), checked against a high-precision erf evaluation
  double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(std::fabs(gelu.data()[1] - phi1) < 1e-15);
  CHECK(std::fabs(gelu.data()[1] - 0.8413447460685429) < 1e-12);
  CHECK(tanh.data()[0] == 0.0);
  CHECK(std::fabs(tanh.data()[2]) > 1.0 - 1e-12);
}

TEST_CASE("finite difference gradient: linear and product") {
  Tensor x = Tensor::from_data({3}, {1.0, 2.0, -1.0});
  auto fsum = [](const Tensor& t) {
    double acc = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) acc += t.data()[i];
    return acc;
  };
  auto g1 = finite_difference_gradient(fsum, x, 1e-6);
  for (double v : g1) CHECK(std::fabs(v - 1.0) < 1e-9);

  Tensor p = Tensor::from_data({2}, {3.0, 5.0});
  auto fprod = [](const Tensor& t) { return t.data()[0] * t.data()[1]; };
  auto g2 = finite_difference_gradient(fprod, p, 1e-6);
  CHECK(std::fabs(g2[0] - 5.0) < 1e-8);
  CHECK(std::fabs(g2[1] - 3.0) < 1e-8);
}

TEST_CASE("reverse mode matches finite differences through composite ops") {
  Rng rng(13);
  std::vector<double> vals(12);
  for (auto& v : vals) v = rng.normal();
  Tensor x = Tensor::from_data({1, 3, 2, 2}, vals);
  x.set_requires_grad(true);

  auto lossfn = [](const Tensor& t) {
    Tensor act = activation(t, Activation::Gelu);
    Tensor tt = activation(act, Activation::Tanh);
    return sum(mul(tt, act));
  };
  {
    Graph g;
    g.backward(lossfn(x));
  }
  auto fd = finite_difference_gradient(
      [&](const Tensor& t) { return lossfn(t).scalar_value(); }, x, 1e-6);
  CHECK(oracle::max_rel_err(*x.grad(), fd) < 1e-6);
}

TEST_CASE("mse loss value and gradient") {
  Tensor a = Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from_data({4}, {0.0, 2.0, 5.0, 4.0});
  a.set_requires_grad(true);
  Graph g;
  Tensor loss = mse_loss(a, b);
  CHECK(std::fabs(loss.scalar_value() - (1.0 + 0.0 + 4.0 + 0.0) / 4.0) < 1e-15);
  g.backward(loss);
  CHECK(std::fabs((*a.grad())[0] - 2.0 * 1.0 / 4.0) < 1e-15);
  CHECK(std::fabs((*a.grad())[2] - 2.0 * -2.0 / 4.0) < 1e-15);
}

TEST_CASE("concat_channels splits gradients back") {
  Tensor a = Tensor::from_data({1, 1, 1, 2}, {1.0, 2.0});
  Tensor b = Tensor::from_data({1, 2, 1, 2}, {3.0, 4.0, 5.0, 6.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Graph g;
  Tensor c = concat_channels({a, b});
  REQUIRE(c.shape() == Shape{1, 3, 1, 2});
  CHECK(c.data()[0] == 1.0);
  CHECK(c.data()[2] == 3.0);
  Tensor w = Tensor::from_data({1, 3, 1, 2}, {1, 10, 100, 1000, 10000, 100000});
  g.backward(sum(mul(c, w)));
  CHECK((*a.grad())[0] == 1.0);
  CHECK((*a.grad())[1] == 10.0);
  CHECK((*b.grad())[0] == 100.0);
  CHECK((*b.grad())[3] == 100000.0);
}

TEST_CASE("channel_scale gradient w.r.t. gate and input") {
  Rng rng(5);
  std::vector<double> xv(2 * 3 * 2 * 2), gv(3);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : gv) v = rng.normal();
  Tensor x = Tensor::from_data({2, 3, 2, 2}, xv);
  Tensor gate = Tensor::from_data({3}, gv);
  x.set_requires_grad(true);
  gate.set_requires_grad(true);
  auto lossfn = [&](const Tensor& xx, const Tensor& gg) { return sum(mul(channel_scale(xx, gg), xx)); };
  {
    Graph g;
    g.backward(lossfn(x, gate));
  }
  auto fdx = finite_difference_gradient(
      [&](const Tensor& t) { return lossfn(t, gate).scalar_value(); }, x, 1e-6);
  auto fdg = finite_difference_gradient(
      [&](const Tensor& t) { return lossfn(x, t).scalar_value(); }, gate, 1e-6);
  CHECK(oracle::max_rel_err(*x.grad(), fdx) < 1e-6);
  CHECK(oracle::max_rel_err(*gate.grad(), fdg) < 1e-6);
}

TEST_CASE("non-finite forward raises NumericError") {
  Tensor a = Tensor::from_data({1}, {1e308});
  Tensor b = Tensor::from_data({1}, {1e308});
  CHECK_THROWS_AS(add(a, b), NumericError);
}

TEST_CASE("reshape preserves trace") {
  Tensor x = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  x.set_requires_grad(true);
  Graph g;
  Tensor y = mul(x, x);
  Tensor z = y.reshape({4});
  g.backward(sum(z));
  for (int i = 0; i < 4; ++i) CHECK(std::fabs((*x.grad())[size_t(i)] - 2.0 * x.data()[i]) < 1e-14);
}

#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "pyrpoint/autodiff.hpp"
#include "pyrpoint/errors.hpp"

using namespace pyrpoint;
namespace ad = pyrpoint::ad;

namespace {

ad::Value var(Rng& rng, ad::Shape shape, double scale = 1.0) {
  return ad::Value::variable(shape, oracle::random_vector(rng, ad::numel(shape), scale));
}

// Scalar projection with fixed random weights so every output coordinate matters.
ad::Value project(const ad::Value& v, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum_all(ad::mul(v, ad::Value::constant(v.shape(), oracle::random_vector(rng, v.numel()))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("matmul matches a triple loop") {
  Rng rng(1);
  auto a = var(rng, {3, 4});
  auto b = var(rng, {4, 5});
  auto c = ad::matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i * 4 + k) * b.at(k * 5 + j);
      CHECK(c.at(i * 5 + j) == doctest::Approx(s).epsilon(1e-14));
    }
  CHECK_THROWS_AS(ad::matmul(a, a), DimensionError);
}

TEST_CASE("op gradients agree with central differences") {
  Rng rng(2);
  SUBCASE("matmul") {
    auto a = var(rng, {3, 4}), b = var(rng, {4, 2});
    CHECK(ad::grad_check([&] { return project(ad::matmul(a, b)); }, {a, b}, 1e-6) < kTol);
  }
  SUBCASE("batched matmul") {
    auto a = var(rng, {2, 3, 4}), b = var(rng, {2, 4, 2});
    CHECK(ad::grad_check([&] { return project(ad::batched_matmul(a, b)); }, {a, b}, 1e-6) < kTol);
  }
  SUBCASE("broadcast elementwise") {
    auto a = var(rng, {4, 3}), b = var(rng, {3});
    CHECK(ad::grad_check([&] { return project(ad::mul(ad::sub(a, b), ad::add(a, b))); }, {a, b}, 1e-6) < kTol);
  }
  SUBCASE("activations") {
    auto x = var(rng, {5, 4});
    for (auto kind : {ad::ActivationKind::sigmoid, ad::ActivationKind::leaky_relu, ad::ActivationKind::relu})
      CHECK(ad::grad_check([&] { return project(ad::activation(kind, x)); }, {x}, 1e-6) < kTol);
  }
  SUBCASE("reductions") {
    auto x = var(rng, {3, 4, 2});
    for (auto kind : {ad::ReduceKind::sum, ad::ReduceKind::mean})
      for (std::size_t axis = 0; axis < 3; ++axis)
        CHECK(ad::grad_check([&] { return project(ad::reduce(kind, x, axis)); }, {x}, 1e-6) < kTol);
  }
  SUBCASE("gather, concat, reshape, swap") {
    auto x = var(rng, {4, 3});
    ad::IndexTable t{2, 3, 4, {0, 3, 4, 2, 2, 1}};
    std::vector<std::size_t> idx{3, 0, 0, 2};
    CHECK(ad::grad_check([&] { return project(ad::gather_rows(x, t)); }, {x}, 1e-6) < kTol);
    CHECK(ad::grad_check([&] { return project(ad::gather_rows(x, idx)); }, {x}, 1e-6) < kTol);
    CHECK(ad::grad_check([&] { return project(ad::concat({x, ad::scale(x, 2.0)}, 1)); }, {x}, 1e-6) < kTol);
    CHECK(ad::grad_check([&] { return project(ad::swap_leading_axes(ad::reshape(x, {2, 2, 3}))); }, {x}, 1e-6) <
          kTol);
  }
  SUBCASE("cross entropy with weights and ignore") {
    auto logits = var(rng, {5, 3}, 2.0);
    std::vector<int> labels{0, 2, -1, 1, 2};
    std::vector<double> w{0.5, 1.0, 2.0};
    CHECK(ad::grad_check([&] { return ad::softmax_cross_entropy(logits, labels, w, -1); }, {logits}, 1e-6) < kTol);
  }
  SUBCASE("batch norm, both modes") {
    auto x = var(rng, {6, 3}), g = var(rng, {3}), b = var(rng, {3});
    std::vector<double> mean{0.1, -0.2, 0.3}, variance{1.2, 0.7, 0.9};
    for (bool training : {false, true}) {
      auto m = mean, v = variance;
      CHECK(ad::grad_check([&] { return project(ad::batch_norm(x, g, b, {m, v}, training)); }, {x, g, b}, 1e-6) <
            1e-5);
    }
  }
}

TEST_CASE("max reduce routes the gradient to the argmax") {
  auto x = ad::Value::variable({2, 3}, {1.0, 5.0, 2.0, 7.0, -1.0, 3.0});
  auto y = ad::sum_all(ad::reduce(ad::ReduceKind::max, x, 1));
  CHECK(y.item() == 12.0);
  y.backward();
  const std::vector<double> expect{0, 1, 0, 1, 0, 0};
  CHECK(oracle::max_abs_diff(x.grad(), expect) == 0.0);
}

TEST_CASE("neighborhood max skips shadow slots and yields zeros for empty rows") {
  auto x = ad::Value::constant({3, 2}, {1, -4, 3, -2, -5, -1});
  ad::IndexTable t{3, 2, 3, {0, 1, 2, 3, 3, 3}};
  auto y = ad::neighborhood_max(x, t);
  const std::vector<double> expect{3, -2, -5, -1, 0, 0};
  CHECK(oracle::max_abs_diff(y.data(), expect) == 0.0);
}

TEST_CASE("cross entropy matches log-softmax by hand") {
  auto logits = ad::Value::constant({2, 3}, {1.0, 2.0, 3.0, 0.5, 0.5, -1.0});
  std::vector<int> labels{2, 0};
  auto loss = ad::softmax_cross_entropy(logits, labels);
  const double l0 = -3.0 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  const double l1 = -0.5 + std::log(2 * std::exp(0.5) + std::exp(-1.0));
  CHECK(loss.item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  auto x = ad::Value::variable({2}, {1.0, 2.0});
  ad::sum_all(ad::mul(x, x)).backward();
  ad::sum_all(ad::mul(x, x)).backward();
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == 8.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("grad_check flags a wrong backward") {
  auto x = ad::Value::variable({3}, {0.3, -0.7, 1.1});
  auto f = [&] {
    std::vector<double> d(3);
    for (int i = 0; i < 3; ++i) d[i] = x.at(i) * x.at(i);
    return ad::sum_all(ad::custom_op("bad_square", {3}, d, {x}, [](ad::Node& n) {
      auto& g = n.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < 3; ++i) g[i] += 3.0 * n.inputs[0]->data[i] * n.grad[i];
    }));
  };
  CHECK(ad::grad_check(f, {x}, 1e-6) > 0.1);
}

TEST_CASE("shape errors name the shapes") {
  auto a = ad::Value::zeros({2, 3});
  auto b = ad::Value::zeros({3, 2});
  CHECK_THROWS_AS(ad::add(a, b), DimensionError);
  CHECK_THROWS_AS(ad::concat({a, b}, 1), DimensionError);
  CHECK_THROWS_AS(ad::reshape(a, {5}), DimensionError);
}
